//! Telemetry and command protocol for live and replayed sessions.
//!
//! Messages are newline-delimited JSON over TCP. Connections that open
//! with an HTTP `GET` are upgraded to WebSocket and carry the same
//! documents as text frames.

pub mod hub;
pub mod protocol;
pub mod server;
pub mod transcript;

pub use hub::{Hub, Outgoing};
pub use protocol::{
    AckPayload, CommandKind, CommandMessage, DecodeError, MessageKind, StatePayload, TelemetryMessage,
    PROTOCOL_VERSION,
};
pub use server::{
    record_session, replay, run_loop, serve, LoopOptions, ReplayConfig, RunStats, ServerConfig, ServerError, ServerHandle,
    DEFAULT_PORT,
};
pub use transcript::{read_transcript, write_transcript, TranscriptError};
