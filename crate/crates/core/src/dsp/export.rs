//! Window cache as an `.npz` archive: `pixels.npy` (float32, N x H x W),
//! `t0.npy` (float64, N) and `meta.json` (schema, geometry, source files).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeometryMap, SpectrogramWindow};
use crate::{Error, Result};

pub const WINDOW_EXPORT_SCHEMA: &str = "callscope.windows/1";

#[derive(Serialize, Deserialize)]
struct Meta {
    schema: String,
    geometry: GeometryMap,
    source_files: Vec<String>,
}

fn npy(descr: &str, shape: &[usize], payload: &[u8]) -> Vec<u8> {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape_txt = if dims.len() == 1 { format!("({},)", dims[0]) } else { format!("({})", dims.join(", ")) };
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // Magic (6) + version (2) + length (2) + header + newline, padded to 64.
    while (10 + header.len() + 1) % 64 != 0 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

fn npy_payload(bytes: &[u8]) -> Result<(String, &[u8])> {
    let bad = || Error::Validation("malformed npy entry".into());
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(bad());
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(bytes.get(10..10 + hlen).ok_or_else(bad)?).map_err(|_| bad())?;
    Ok((header.to_string(), &bytes[10 + hlen..]))
}

pub fn save_windows_npz(path: &Path, windows: &[SpectrogramWindow]) -> Result<()> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Validation("no windows to export".into()))?;
    let g = first.geometry.clone();
    if windows.iter().any(|w| w.geometry != g) {
        return Err(Error::Validation("windows with differing geometry".into()));
    }
    let mut pix = Vec::with_capacity(windows.len() * g.out_height * g.out_width * 4);
    for w in windows {
        for &v in &w.pixels {
            pix.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let t0: Vec<u8> = windows.iter().flat_map(|w| w.t0.to_le_bytes()).collect();
    let meta = Meta {
        schema: WINDOW_EXPORT_SCHEMA.into(),
        geometry: g.clone(),
        source_files: windows.iter().map(|w| w.source_file.clone()).collect(),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut z = zip::ZipWriter::new(file);
    let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Stored);
    let io = |e: std::io::Error| Error::io(path, e);
    let zerr = |e: zip::result::ZipError| Error::io(path, std::io::Error::other(e));
    z.start_file("pixels.npy", opts).map_err(zerr)?;
    z.write_all(&npy("<f4", &[windows.len(), g.out_height, g.out_width], &pix)).map_err(io)?;
    z.start_file("t0.npy", opts).map_err(zerr)?;
    z.write_all(&npy("<f8", &[windows.len()], &t0)).map_err(io)?;
    z.start_file("meta.json", opts).map_err(zerr)?;
    z.write_all(serde_json::to_string_pretty(&meta)?.as_bytes()).map_err(io)?;
    z.finish().map_err(zerr)?;
    Ok(())
}

/// Pixels come back at float32 precision.
pub fn load_windows_npz(path: &Path) -> Result<Vec<SpectrogramWindow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut z = zip::ZipArchive::new(file).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let mut read = |name: &str| -> Result<Vec<u8>> {
        let mut entry = z
            .by_name(name)
            .map_err(|e| Error::Validation(format!("{}: missing {name}: {e}", path.display())))?;
        let mut buf = Vec::new();
        entry.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(buf)
    };
    let meta: Meta = serde_json::from_slice(&read("meta.json")?)?;
    if meta.schema != WINDOW_EXPORT_SCHEMA {
        return Err(Error::Validation(format!("unsupported window schema {}", meta.schema)));
    }
    let pix_raw = read("pixels.npy")?;
    let t0_raw = read("t0.npy")?;
    let (ph, pix) = npy_payload(&pix_raw)?;
    let (th, t0) = npy_payload(&t0_raw)?;
    if !ph.contains("'<f4'") || !th.contains("'<f8'") {
        return Err(Error::Validation("unexpected dtype in window archive".into()));
    }
    let n = meta.source_files.len();
    let per = meta.geometry.out_height * meta.geometry.out_width;
    if pix.len() != n * per * 4 || t0.len() != n * 8 {
        return Err(Error::Validation("window archive sizes disagree with metadata".into()));
    }
    Ok((0..n)
        .map(|i| SpectrogramWindow {
            pixels: pix[i * per * 4..(i + 1) * per * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
            t0: f64::from_le_bytes(t0[i * 8..i * 8 + 8].try_into().unwrap()),
            geometry: meta.geometry.clone(),
            source_file: meta.source_files[i].clone(),
        })
        .collect())
}
