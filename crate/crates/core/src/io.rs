//! File helpers: atomic writes and the versioned JSON container used for
//! banks, networks and pipeline artifacts.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct Container<T> {
    format: String,
    version: u32,
    payload: T,
}

/// Serializes `value` inside a `{format, version, payload}` container.
/// Floats survive the round trip bit-exactly.
pub fn to_container<T: Serialize>(format: &str, version: u32, value: &T) -> Result<Vec<u8>> {
    let c = Container {
        format: format.to_string(),
        version,
        payload: value,
    };
    let mut bytes = serde_json::to_vec(&c)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn from_container<T: DeserializeOwned>(format: &str, version: u32, bytes: &[u8]) -> Result<T> {
    let c: Container<T> = serde_json::from_slice(bytes)?;
    if c.format != format {
        return Err(Error::Serde(format!(
            "expected `{format}` container, found `{}`",
            c.format
        )));
    }
    if c.version != version {
        return Err(Error::Serde(format!(
            "unsupported `{format}` version {} (expected {version})",
            c.version
        )));
    }
    Ok(c.payload)
}

pub fn save_container<T: Serialize>(
    path: &Path,
    format: &str,
    version: u32,
    value: &T,
) -> Result<()> {
    write_atomic(path, &to_container(format, version, value)?)
}

pub fn load_container<T: DeserializeOwned>(path: &Path, format: &str, version: u32) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_container(format, version, &bytes)
}
