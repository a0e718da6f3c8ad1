//! Evaluation reports: JSON, a Markdown table and PR-curve SVGs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "callscope.report/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesAp {
    pub species_id: usize,
    pub code: String,
    /// `None` when the species has no positives; it is then left out of
    /// the mean.
    pub ap: Option<f64>,
    pub positives: usize,
    pub predictions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub code: String,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub per_species: Vec<SpeciesAp>,
    pub map: Option<f64>,
    /// Codes without positives.
    pub excluded: Vec<String>,
    pub pr_curves: Vec<PrCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub detection: Option<EvalSection>,
    pub multilabel: Option<EvalSection>,
    pub scope: Vec<String>,
    pub iou_threshold: f64,
    pub interpolation: String,
    pub multilabel_window_s: f64,
    pub config_digest: String,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(scope: Vec<String>, iou_threshold: f64, multilabel_window_s: f64, config_digest: String) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            detection: None,
            multilabel: None,
            scope,
            iou_threshold,
            interpolation: "all-point".into(),
            multilabel_window_s,
            config_digest,
            notes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Validation(format!("unsupported report schema {:?}", r.schema)));
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.2}"))
}

/// One row per species in scope, one column per section, mAP last.
pub fn to_markdown(r: &EvalReport) -> String {
    let mut s = String::new();
    let sections: Vec<(&str, &EvalSection)> = [("Detection AP", r.detection.as_ref()), ("Multi-label AP", r.multilabel.as_ref())]
        .into_iter()
        .filter_map(|(n, s)| s.map(|s| (n, s)))
        .collect();
    let _ = writeln!(s, "# Evaluation\n");
    if r.scope.is_empty() || sections.is_empty() {
        let _ = writeln!(s, "_Empty scope: nothing was scored._");
        return s;
    }
    let _ = write!(s, "| Species |");
    for (n, _) in &sections {
        let _ = write!(s, " {n} |");
    }
    let _ = write!(s, "\n|---|");
    for _ in &sections {
        let _ = write!(s, "---:|");
    }
    s.push('\n');
    for code in &r.scope {
        let _ = write!(s, "| {code} |");
        for (_, sec) in &sections {
            let ap = sec.per_species.iter().find(|a| &a.code == code).and_then(|a| a.ap);
            let _ = write!(s, " {} |", cell(ap));
        }
        s.push('\n');
    }
    let _ = write!(s, "| **mAP** |");
    for (_, sec) in &sections {
        let _ = write!(s, " **{}** |", cell(sec.map));
    }
    let _ = writeln!(
        s,
        "\n\nIoU threshold {}, {} interpolation, multi-label windows of {} s. Config digest `{}`.",
        r.iou_threshold, r.interpolation, r.multilabel_window_s, r.config_digest
    );
    for (n, sec) in &sections {
        if !sec.excluded.is_empty() {
            let _ = writeln!(s, "\n{n}: no positives for {} (left out of the mean).", sec.excluded.join(", "));
        }
    }
    for note in &r.notes {
        let _ = writeln!(s, "\n{note}");
    }
    s
}

/// Precision-recall polyline on a unit square.
pub fn render_svg(c: &PrCurve, title: &str) -> String {
    let (w, h, m) = (320.0, 320.0, 40.0);
    let px = |r: f64| m + r * (w - 2.0 * m);
    let py = |p: f64| h - m - p * (h - 2.0 * m);
    let mut pts = format!("{:.1},{:.1}", px(0.0), py(c.precision.first().copied().unwrap_or(0.0)));
    for (r, p) in c.recall.iter().zip(&c.precision) {
        let _ = write!(pts, " {:.1},{:.1}", px(*r), py(*p));
    }
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect x="{m}" y="{m}" width="{iw}" height="{iw}" fill="none" stroke="#888"/>
<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>
<text x="{tx}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>
<text x="{tx}" y="{by}" text-anchor="middle" font-family="sans-serif" font-size="12">recall</text>
<text x="12" y="{ty}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 12 {ty})">precision</text>
</svg>
"##,
        iw = w - 2.0 * m,
        tx = w / 2.0,
        by = h - 10.0,
        ty = h / 2.0,
    )
}

/// Writes `report.json`, `report.md` and one SVG per species and section.
pub fn render_report(r: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    put("report.json".into(), r.to_json()?)?;
    put("report.md".into(), to_markdown(r))?;
    for (tag, sec) in [("det", &r.detection), ("ml", &r.multilabel)] {
        for c in sec.iter().flat_map(|s| &s.pr_curves) {
            put(format!("pr_{tag}_{}.svg", c.code), render_svg(c, &format!("{} ({tag})", c.code)))?;
        }
    }
    Ok(written)
}
