//! Audacity label-track import/export with spectral selections.
//!
//! Each region is a pair of lines:
//!
//! ```text
//! start<TAB>end<TAB>label
//! \<TAB>f_low<TAB>f_high
//! ```
//!
//! Times are seconds and frequencies Hz, always with a decimal point.

use std::fmt::Write;

use super::AnnotationBox;
use crate::{Error, Result};

/// A raw region as read from a label file, before species resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRegion {
    pub t_start: f64,
    pub t_end: f64,
    pub label: String,
    pub f_low: f64,
    pub f_high: f64,
    /// 1-based line number of the time line.
    pub line: usize,
}

fn number(field: Option<&str>, line: usize, what: &str) -> Result<f64> {
    let s = field.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("malformed {what} {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite {what} {s:?}")));
    }
    Ok(v)
}

/// Parses every region of a label file, checking bounds but not species.
pub fn parse_label_regions(text: &str) -> Result<Vec<LabelRegion>> {
    let mut regions = Vec::new();
    // (t_start, t_end, label, line) awaiting its spectral line
    let mut pending: Option<(f64, f64, String, usize)> = None;
    for (idx, raw) in text.split('\n').enumerate() {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let first = fields.next().unwrap_or_default();
        if first == "\\" {
            let Some((t_start, t_end, label, tline)) = pending.take() else {
                return Err(Error::Validation(format!(
                    "line {lineno}: frequency line without a preceding region"
                )));
            };
            let f_low = number(fields.next(), lineno, "low frequency")?;
            let f_high = number(fields.next(), lineno, "high frequency")?;
            if f_low < 0.0 || f_low >= f_high {
                return Err(Error::Validation(format!(
                    "line {lineno}: frequency bounds [{f_low}, {f_high}] must satisfy 0 <= low < high"
                )));
            }
            regions.push(LabelRegion { t_start, t_end, label, f_low, f_high, line: tline });
        } else {
            if let Some((.., tline)) = pending {
                return Err(Error::Validation(format!(
                    "line {tline}: region has no frequency line"
                )));
            }
            let t_start = number(Some(first), lineno, "start time")?;
            let t_end = number(fields.next(), lineno, "end time")?;
            let label = fields.collect::<Vec<_>>().join("\t");
            if t_start < 0.0 || t_start >= t_end {
                return Err(Error::Validation(format!(
                    "line {lineno}: time bounds [{t_start}, {t_end}] must satisfy 0 <= start < end"
                )));
            }
            pending = Some((t_start, t_end, label, lineno));
        }
    }
    if let Some((.., tline)) = pending {
        return Err(Error::Validation(format!("line {tline}: region has no frequency line")));
    }
    regions.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    Ok(regions)
}

/// Parses a label file whose regions all belong to `species_id`.
/// Boxes come back ordered by start time.
pub fn parse_audacity_labels(text: &str, species_id: usize, source_file: &str) -> Result<Vec<AnnotationBox>> {
    Ok(parse_label_regions(text)?
        .into_iter()
        .map(|r| AnnotationBox {
            t_start: r.t_start,
            t_end: r.t_end,
            f_low: r.f_low,
            f_high: r.f_high,
            species_id,
            source_file: source_file.to_string(),
        })
        .collect())
}

/// Writes boxes as an Audacity label track, labelling each region with
/// `label(species_id)`. Numbers use the shortest exact representation, so
/// parsing the output gives back identical values.
pub fn serialize_audacity<'a>(boxes: &[AnnotationBox], label: impl Fn(usize) -> &'a str) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(out, "{}\t{}\t{}", b.t_start, b.t_end, label(b.species_id));
        let _ = writeln!(out, "\\\t{}\t{}", b.f_low, b.f_high);
    }
    out
}
