//! Output artifacts: a one-line provenance header and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const PREFIX: &str = "# pcir ";

/// Provenance line written at the top of every generated artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Header {
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn line(&self) -> String {
        format!("{PREFIX}config={} seed={}\n", self.config_hash, self.seed)
    }

    fn parse(line: &str) -> Option<Header> {
        let rest = line.strip_prefix(PREFIX)?;
        let mut hash = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("config", v)) => hash = Some(v.to_string()),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => {}
            }
        }
        Some(Header::new(hash?, seed?))
    }
}

/// Splits a leading header line off `bytes`.
pub fn split_header(bytes: &[u8]) -> (Option<Header>, &[u8]) {
    let end = bytes.iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| i + 1);
    let header = std::str::from_utf8(&bytes[..end])
        .ok()
        .and_then(|l| Header::parse(l.trim_end()));
    match header {
        Some(h) => (Some(h), &bytes[end..]),
        None => (None, bytes),
    }
}

/// Header of the artifact at `path`, if it exists and has one.
pub fn read_header(path: &Path) -> Option<Header> {
    let bytes = fs::read(path).ok()?;
    split_header(&bytes).0
}

/// Writes via a temporary sibling and a rename, creating parent
/// directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().map_or_else(|| "artifact".into(), |n| n.to_string_lossy().into_owned());
    tmp.set_file_name(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Header line followed by `body`, written atomically.
pub fn write_artifact(path: &Path, header: &Header, body: &[u8]) -> Result<()> {
    let mut bytes = header.line().into_bytes();
    bytes.extend_from_slice(body);
    write_atomic(path, &bytes)
}

/// Reads an artifact produced by `command`, returning its body.
pub fn read_artifact(path: &Path, command: &str) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            command: command.to_string(),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, body) = split_header(&bytes);
    Ok(body.to_vec())
}
