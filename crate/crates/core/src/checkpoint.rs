//! Versioned JSON artifacts with embedded content hashes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the canonical JSON serialization of `value`.
pub fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    content_hash: String,
    payload: T,
}

/// Writes `value` wrapped in an envelope; returns the payload hash.
pub fn save<T: Serialize>(value: &T, kind: &str, path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let hash = content_hash(value)?;
    let env = Envelope {
        kind: kind.to_string(),
        version: FORMAT_VERSION,
        content_hash: hash.clone(),
        payload: value,
    };
    let bytes = serde_json::to_vec(&env)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(hash)
}

/// Reads an artifact, checking kind, version and content hash.
pub fn load<T: Serialize + DeserializeOwned>(kind: &str, path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<T> = serde_json::from_slice(&bytes)?;
    if env.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{}: expected a {kind} artifact, found {}",
            path.display(),
            env.kind
        )));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {}",
            path.display(),
            env.version
        )));
    }
    let actual = content_hash(&env.payload)?;
    if actual != env.content_hash {
        return Err(Error::Checkpoint(format!("{}: content hash mismatch", path.display())));
    }
    Ok(env.payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        let v = vec![0.1f64, 1.0 / 3.0, -2.5e-300];
        let h = save(&v, "vec", &p).unwrap();
        assert_eq!(h, content_hash(&v).unwrap());
        let back: Vec<f64> = load("vec", &p).unwrap();
        assert_eq!(back, v);
        assert!(load::<Vec<f64>>("other", &p).is_err());

        let text = fs::read_to_string(&p).unwrap().replace("-2.5e-300", "-2.6e-300");
        fs::write(&p, text).unwrap();
        assert!(matches!(load::<Vec<f64>>("vec", &p), Err(Error::Checkpoint(_))));
    }

    proptest::proptest! {
        #[test]
        fn any_finite_floats_round_trip(v in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 0..64)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("a.json");
            save(&v, "vec", &p).unwrap();
            let back: Vec<f64> = load("vec", &p).unwrap();
            proptest::prop_assert_eq!(back, v);
        }
    }
}
