//! Recorded sessions: the exact message stream a client saw, one message
//! per line.

use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::protocol::{decode_all, encode, DecodeError, TelemetryMessage};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Decode { path: PathBuf, source: DecodeError },
    #[error("{path}: sequence {found} follows {previous}")]
    Sequence { path: PathBuf, previous: u64, found: u64 },
}

pub fn read_transcript(path: &Path) -> Result<Vec<TelemetryMessage>, TranscriptError> {
    let bytes = std::fs::read(path).map_err(|source| TranscriptError::Io {
        path: path.to_owned(),
        source,
    })?;
    let messages: Vec<TelemetryMessage> = decode_all(&bytes).map_err(|source| TranscriptError::Decode {
        path: path.to_owned(),
        source,
    })?;
    for w in messages.windows(2) {
        if w[1].sequence <= w[0].sequence {
            return Err(TranscriptError::Sequence {
                path: path.to_owned(),
                previous: w[0].sequence,
                found: w[1].sequence,
            });
        }
    }
    Ok(messages)
}

pub fn write_transcript(path: &Path, messages: &[TelemetryMessage]) -> std::io::Result<()> {
    let mut out = Vec::new();
    for m in messages {
        out.extend(encode(m));
    }
    std::fs::write(path, out)
}
