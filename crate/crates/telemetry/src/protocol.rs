//! Wire messages and the newline-delimited JSON codec.
//!
//! Every message is one UTF-8 JSON document followed by `\n`. The same
//! documents travel as text frames over WebSocket.

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use aps_core::session::OperatorCommand;

/// Bumped on any incompatible schema change.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    State,
    Sample,
    Fault,
    Ack,
    MissionEvent,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryMessage {
    pub kind: MessageKind,
    /// Strictly increasing per connection, starting at 0.
    pub sequence: u64,
    /// Simulation time, s.
    pub t: f64,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    SetTargetDepth,
    ManualStep,
    SetUnderway,
    StartMission,
    Pause,
    Resume,
    AckFault,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandMessage {
    pub command_id: String,
    pub kind: CommandKind,
    #[serde(default = "empty_args", skip_serializing_if = "is_empty_args")]
    pub args: Value,
}

fn empty_args() -> Value {
    Value::Object(Default::default())
}

fn is_empty_args(v: &Value) -> bool {
    v.as_object().is_some_and(|m| m.is_empty())
}

impl CommandMessage {
    pub fn new(command_id: impl Into<String>, kind: CommandKind, args: Value) -> Self {
        Self {
            command_id: command_id.into(),
            kind,
            args,
        }
    }

    /// Typed command with its arguments checked.
    pub fn to_operator(&self) -> Result<OperatorCommand, String> {
        let mut doc = match &self.args {
            Value::Object(m) => m.clone(),
            Value::Null => Default::default(),
            other => return Err(format!("args must be an object, got {other}")),
        };
        if doc.contains_key("kind") {
            return Err("args must not contain `kind`".into());
        }
        doc.insert("kind".into(), serde_json::to_value(self.kind).expect("kind serializes"));
        let cmd: OperatorCommand = serde_json::from_value(Value::Object(doc.clone()))
            .map_err(|e| format!("bad args for {:?}: {e}", self.kind))?;
        // Unit variants accept anything, so check for leftovers here.
        let used = serde_json::to_value(&cmd).expect("command serializes");
        if let Some((key, _)) = doc.iter().find(|(k, v)| !v.is_null() && used.get(k.as_str()).is_none()) {
            return Err(format!("unknown argument `{key}` for {:?}", self.kind));
        }
        Ok(cmd)
    }
}

/// Payload of an `ack` message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckPayload {
    /// Null when the command was too malformed to carry an id.
    pub command_id: Option<String>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    /// Connection the command arrived on.
    pub client: u64,
}

/// Payload of a `state` message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub protocol_version: u32,
    /// First message on a connection.
    pub snapshot: bool,
    pub state: aps_core::session::StateSnapshot,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("invalid UTF-8 at byte {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("truncated message at byte {offset}: no terminating newline")]
    Truncated { offset: usize },
    #[error("malformed message at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
}

impl DecodeError {
    pub fn offset(&self) -> usize {
        match self {
            DecodeError::InvalidUtf8 { offset }
            | DecodeError::Truncated { offset }
            | DecodeError::Malformed { offset, .. } => *offset,
        }
    }
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec(msg).expect("message serializes");
    out.push(b'\n');
    out
}

pub fn encode_line<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("message serializes")
}

/// Decode one line (without its newline). `offset` is the line's position
/// in the stream and is used for error reporting.
pub fn decode_line<T: for<'de> Deserialize<'de>>(line: &[u8], offset: usize) -> Result<T, DecodeError> {
    let text = std::str::from_utf8(line).map_err(|e| DecodeError::InvalidUtf8 {
        offset: offset + e.valid_up_to(),
    })?;
    serde_json::from_str(text).map_err(|e| DecodeError::Malformed {
        offset: offset + column_to_byte(text, e.column()),
        message: e.to_string(),
    })
}

fn column_to_byte(text: &str, column: usize) -> usize {
    text.char_indices().nth(column.saturating_sub(1)).map_or(text.len(), |(i, _)| i)
}

/// Decode a complete buffer of newline-terminated messages.
pub fn decode_all<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<T>, DecodeError> {
    let mut dec = LineDecoder::new();
    let mut out = Vec::new();
    for item in dec.feed(bytes) {
        out.push(decode_line(&item.1, item.0)?);
    }
    dec.finish()?;
    Ok(out)
}

/// Incremental splitter for a byte stream of newline-delimited messages.
#[derive(Debug, Default)]
pub struct LineDecoder {
    pending: Vec<u8>,
    /// Stream offset of `pending[0]`.
    offset: usize,
}

impl LineDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns complete non-empty lines with their stream offsets. Empty
    /// lines are skipped with a warning.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<(usize, Vec<u8>)> {
        self.pending.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut start = 0;
        while let Some(pos) = self.pending[start..].iter().position(|&b| b == b'\n') {
            let end = start + pos;
            let mut line = &self.pending[start..end];
            if line.last() == Some(&b'\r') {
                line = &line[..line.len() - 1];
            }
            if line.iter().all(u8::is_ascii_whitespace) {
                warn!("skipping empty line at byte {}", self.offset + start);
            } else {
                out.push((self.offset + start, line.to_vec()));
            }
            start = end + 1;
        }
        self.pending.drain(..start);
        self.offset += start;
        out
    }

    /// Call at end of stream; leftover bytes are a truncated message.
    pub fn finish(&self) -> Result<(), DecodeError> {
        if self.pending.iter().all(u8::is_ascii_whitespace) {
            Ok(())
        } else {
            Err(DecodeError::Truncated { offset: self.offset })
        }
    }
}
