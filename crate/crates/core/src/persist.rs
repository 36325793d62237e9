//! Versioned binary persistence for model and index artifacts.
//!
//! Layout: 4 magic bytes, an artifact-kind byte, a little-endian u16 format
//! version, a scalar-width byte (4 for `f32`, 8 for `f64`), then the
//! bincode-encoded payload. Loading checks every header field so a stale or
//! foreign file fails loudly instead of deserializing garbage.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"RLAB";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ArtifactKind {
    SparseIndex = 1,
    EncoderParams = 2,
    InverseModel = 3,
    RouterModel = 4,
    DenseIndex = 5,
}

impl ArtifactKind {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::SparseIndex),
            2 => Some(Self::EncoderParams),
            3 => Some(Self::InverseModel),
            4 => Some(Self::RouterModel),
            5 => Some(Self::DenseIndex),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not an artifact file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: artifact kind {found} where {expected} was expected")]
    WrongKind {
        path: String,
        found: u8,
        expected: u8,
    },
    #[error("{path}: format version {found}, this build reads version {expected}")]
    VersionMismatch {
        path: String,
        found: u16,
        expected: u16,
    },
    #[error("{path}: scalar width {found} bytes, this build expects {expected}")]
    ScalarWidthMismatch {
        path: String,
        found: u8,
        expected: u8,
    },
    #[error("{path}: payload decode failed: {message}")]
    Decode { path: String, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> PersistError {
    PersistError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save<T: Serialize>(
    path: &Path,
    kind: ArtifactKind,
    version: u16,
    scalar_width: u8,
    value: &T,
) -> Result<(), PersistError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC).map_err(|e| io_err(path, e))?;
    w.write_all(&[kind as u8]).map_err(|e| io_err(path, e))?;
    w.write_all(&version.to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    w.write_all(&[scalar_width]).map_err(|e| io_err(path, e))?;
    bincode::serialize_into(&mut w, value).map_err(|e| PersistError::Decode {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load<T: DeserializeOwned>(
    path: &Path,
    kind: ArtifactKind,
    version: u16,
    scalar_width: u8,
) -> Result<T, PersistError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if magic != MAGIC {
        return Err(PersistError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let mut kind_byte = [0u8; 1];
    r.read_exact(&mut kind_byte).map_err(|e| io_err(path, e))?;
    if ArtifactKind::from_u8(kind_byte[0]) != Some(kind) {
        return Err(PersistError::WrongKind {
            path: path.display().to_string(),
            found: kind_byte[0],
            expected: kind as u8,
        });
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver).map_err(|e| io_err(path, e))?;
    let found = u16::from_le_bytes(ver);
    if found != version {
        return Err(PersistError::VersionMismatch {
            path: path.display().to_string(),
            found,
            expected: version,
        });
    }
    let mut width = [0u8; 1];
    r.read_exact(&mut width).map_err(|e| io_err(path, e))?;
    if width[0] != scalar_width {
        return Err(PersistError::ScalarWidthMismatch {
            path: path.display().to_string(),
            found: width[0],
            expected: scalar_width,
        });
    }
    bincode::deserialize_from(&mut r).map_err(|e| PersistError::Decode {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
