//! Detection CSV and JSON-lines files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Detection;
use crate::dataset::SpeciesVocab;
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 7] = ["file", "t_start", "t_end", "f_low", "f_high", "species_code", "confidence"];

#[derive(Serialize, Deserialize)]
struct Row {
    file: String,
    t_start: String,
    t_end: String,
    f_low: String,
    f_high: String,
    species_code: String,
    confidence: String,
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn to_row(d: &Detection, vocab: &SpeciesVocab) -> Result<Row> {
    let code = vocab
        .entries
        .get(d.species_id)
        .ok_or_else(|| Error::Validation(format!("species id {} outside the vocabulary", d.species_id)))?;
    Ok(Row {
        file: d.file.clone(),
        t_start: fixed(d.t_start),
        t_end: fixed(d.t_end),
        f_low: fixed(d.f_low),
        f_high: fixed(d.f_high),
        species_code: code.short_code.clone(),
        confidence: fixed(d.confidence),
    })
}

fn from_row(r: Row, vocab: &SpeciesVocab, line: usize) -> Result<Detection> {
    let num = |s: &str, what: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| Error::parse(line, format!("{what} {s:?} is not a number")))
    };
    let species_id = vocab
        .entries
        .iter()
        .find(|e| e.short_code == r.species_code)
        .map(|e| e.species_id)
        .ok_or_else(|| Error::UnknownSpecies(vec![r.species_code.clone()]))?;
    let d = Detection {
        file: r.file,
        t_start: num(&r.t_start, "t_start")?,
        t_end: num(&r.t_end, "t_end")?,
        f_low: num(&r.f_low, "f_low")?,
        f_high: num(&r.f_high, "f_high")?,
        species_id,
        confidence: num(&r.confidence, "confidence")?,
        window_index: 0,
    };
    d.validate().map_err(|e| Error::parse(line, e.to_string()))?;
    Ok(d)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(0, format!("{}: {other:?}", path.display())),
    }
}

/// Numbers are written as 6-decimal fixed point.
pub fn write_detections_csv(path: &Path, dets: &[Detection], vocab: &SpeciesVocab) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if dets.is_empty() {
        w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for d in dets {
        w.serialize(to_row(d, vocab)?).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_detections_csv(path: &Path, vocab: &SpeciesVocab) -> Result<Vec<Detection>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::parse(1, format!("expected header {}, found {}", CSV_HEADER.join(","), header.join(","))));
    }
    r.deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| Error::parse(i + 2, e.to_string()))?;
            from_row(row, vocab, i + 2)
        })
        .collect()
}

pub fn write_detections_jsonl(path: &Path, dets: &[Detection], vocab: &SpeciesVocab) -> Result<()> {
    let mut out = String::new();
    for d in dets {
        let r = to_row(d, vocab)?;
        let v = serde_json::json!({
            "file": r.file,
            "t_start": d.t_start,
            "t_end": d.t_end,
            "f_low": d.f_low,
            "f_high": d.f_high,
            "species_code": r.species_code,
            "confidence": d.confidence,
        });
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_detections_jsonl(path: &Path, vocab: &SpeciesVocab) -> Result<Vec<Detection>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct J {
        file: String,
        t_start: f64,
        t_end: f64,
        f_low: f64,
        f_high: f64,
        species_code: String,
        confidence: f64,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let j: J = serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            let row = Row {
                file: j.file,
                t_start: j.t_start.to_string(),
                t_end: j.t_end.to_string(),
                f_low: j.f_low.to_string(),
                f_high: j.f_high.to_string(),
                species_code: j.species_code,
                confidence: j.confidence.to_string(),
            };
            from_row(row, vocab, i + 1)
        })
        .collect()
}

/// Dispatches on the extension: `.jsonl` or CSV otherwise.
pub fn read_detections(path: &Path, vocab: &SpeciesVocab) -> Result<Vec<Detection>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_detections_jsonl(path, vocab)
    } else {
        read_detections_csv(path, vocab)
    }
}
