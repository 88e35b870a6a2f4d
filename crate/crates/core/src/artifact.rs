//! Versioned JSON artifact container shared by every persisted model piece.
//!
//! ```text
//! { "kind": "...", "format_version": N, "content_hash": "<sha256 hex>", "payload": {...} }
//! ```
//!
//! The hash covers the canonical compact encoding of `payload` (object keys
//! sorted), so a loaded artifact can be checked for tampering and later stages
//! can record which upstream artifact they consumed.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    kind: String,
    format_version: u32,
    content_hash: String,
    payload: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Write through a sibling temp file and rename, so readers never observe a
/// half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_canonical(payload: &impl Serialize) -> Result<(serde_json::Value, String)> {
    let value = serde_json::to_value(payload)
        .map_err(|e| Error::Numeric(format!("cannot encode artifact: {e}")))?;
    let bytes = serde_json::to_vec(&value).expect("Value always encodes");
    Ok((value, sha256_hex(&bytes)))
}

/// Content hash the artifact would carry, without writing it.
pub fn content_hash(payload: &impl Serialize) -> Result<String> {
    Ok(to_canonical(payload)?.1)
}

/// Save `payload` and return its content hash.
pub fn save<T: Serialize>(path: &Path, kind: &str, format_version: u32, payload: &T) -> Result<String> {
    let (value, hash) = to_canonical(payload)?;
    let env = Envelope {
        kind: kind.to_string(),
        format_version,
        content_hash: hash.clone(),
        payload: value,
    };
    let mut text = serde_json::to_string_pretty(&env).expect("Value always encodes");
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(hash)
}

/// Load, checking kind, version and hash. Returns the payload and its hash.
pub fn load<T: DeserializeOwned>(path: &Path, kind: &str, format_version: u32) -> Result<(T, String)> {
    let err = |message: String| Error::Artifact {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if env.kind != kind {
        return Err(err(format!("expected artifact kind '{kind}', found '{}'", env.kind)));
    }
    if env.format_version != format_version {
        return Err(err(format!(
            "format_version {} unsupported (expected {format_version})",
            env.format_version
        )));
    }
    let bytes = serde_json::to_vec(&env.payload).expect("Value always encodes");
    let hash = sha256_hex(&bytes);
    if hash != env.content_hash {
        return Err(err("content hash mismatch".into()));
    }
    let payload = serde_json::from_value(env.payload).map_err(|e| err(e.to_string()))?;
    Ok((payload, hash))
}
