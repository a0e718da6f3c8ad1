//! Download and checksum of the published annotated corpus.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Contents of the repository's `config/dataset.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSpec {
    pub record: u64,
    pub file_name: String,
    /// Lowercase hex. `None` means not pinned yet: the download proceeds and
    /// the observed digest is reported so it can be pinned.
    pub sha256: Option<String>,
}

impl ArchiveSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn url(&self) -> String {
        format!(
            "https://zenodo.org/records/{}/files/{}?download=1",
            self.record, self.file_name
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FetchOutcome {
    pub archive: PathBuf,
    pub extracted_to: PathBuf,
    pub sha256: String,
    pub verified: bool,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Checks `path` against the pinned digest. Mismatch is a validation error;
/// an unpinned spec yields `Ok(false)`.
pub fn verify(path: &Path, spec: &ArchiveSpec) -> Result<(String, bool)> {
    let got = sha256_file(path)?;
    match &spec.sha256 {
        Some(want) if !want.eq_ignore_ascii_case(&got) => Err(Error::Validation(format!(
            "checksum mismatch for {}: expected {want}, got {got}",
            path.display()
        ))),
        Some(_) => Ok((got, true)),
        None => Ok((got, false)),
    }
}

fn download(url: &str, dest: &Path) -> Result<()> {
    let resp = ureq::get(url)
        .call()
        .map_err(|e| Error::Network(format!("{url}: {e}")))?;
    let tmp = dest.with_extension("part");
    let mut out = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut reader = resp.into_reader();
    std::io::copy(&mut reader, &mut out).map_err(|e| Error::Network(format!("{url}: {e}")))?;
    out.flush().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, dest).map_err(|e| Error::io(dest, e))
}

pub fn extract_zip(archive: &Path, dest: &Path) -> Result<()> {
    let f = std::fs::File::open(archive).map_err(|e| Error::io(archive, e))?;
    let mut zip = zip::ZipArchive::new(f).map_err(|e| Error::Audio {
        path: archive.into(),
        message: format!("not a readable zip archive: {e}"),
    })?;
    zip.extract(dest).map_err(|e| match e {
        zip::result::ZipError::Io(io) => Error::io(dest, io),
        other => Error::Validation(format!("{}: {other}", archive.display())),
    })
}

/// Downloads into `cache_dir` unless a verified copy is already there, then
/// extracts next to it.
pub fn fetch(spec: &ArchiveSpec, cache_dir: &Path) -> Result<FetchOutcome> {
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let archive = cache_dir.join(&spec.file_name);
    if archive.is_file() && verify(&archive, spec).is_err() {
        log::warn!("cached archive failed verification, downloading again");
        std::fs::remove_file(&archive).map_err(|e| Error::io(&archive, e))?;
    }
    if !archive.is_file() {
        download(&spec.url(), &archive)?;
    }
    let (sha256, verified) = verify(&archive, spec)?;
    if !verified {
        log::warn!("archive digest not pinned; observed sha256 {sha256}");
    }
    let extracted_to = cache_dir.join(format!("record-{}", spec.record));
    if !extracted_to.is_dir() {
        extract_zip(&archive, &extracted_to)?;
    }
    Ok(FetchOutcome {
        archive,
        extracted_to,
        sha256,
        verified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let pinned = ArchiveSpec { record: 1, file_name: "x".into(), sha256: Some("00".into()) };
        assert!(matches!(verify(&p, &pinned), Err(Error::Validation(_))));
        let open = ArchiveSpec { sha256: None, ..pinned };
        assert!(!verify(&p, &open).unwrap().1);
    }

    #[test]
    fn extracts_zip() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("a.zip");
        {
            let f = std::fs::File::create(&p).unwrap();
            let mut z = zip::ZipWriter::new(f);
            z.start_file::<_, ()>("GrGr/a.txt", zip::write::SimpleFileOptions::default()).unwrap();
            z.write_all(b"hello").unwrap();
            z.finish().unwrap();
        }
        extract_zip(&p, &d.path().join("out")).unwrap();
        assert_eq!(std::fs::read(d.path().join("out/GrGr/a.txt")).unwrap(), b"hello");
    }
}
