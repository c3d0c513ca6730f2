//! Fan-out of telemetry to connected clients.
//!
//! Each client has a bounded buffer. Broadcasting never blocks: a client
//! whose buffer is full is disconnected.

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use log::{info, warn};
use serde_json::Value;
use std::io::Write;
use std::sync::Mutex;

use crate::protocol::{encode_line, MessageKind, TelemetryMessage};

pub type ClientId = u64;

pub const DEFAULT_CLIENT_BUFFER: usize = 1024;

/// A message before it is stamped with a per-connection sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub kind: MessageKind,
    pub t: f64,
    pub payload: Value,
}

impl Outgoing {
    pub fn from_message(m: &TelemetryMessage) -> Self {
        Self {
            kind: m.kind,
            t: m.t,
            payload: m.payload.clone(),
        }
    }
}

enum Sink {
    Channel(Sender<String>),
    Writer(Box<dyn Write + Send>),
}

struct Slot {
    id: ClientId,
    next_sequence: u64,
    greeted: bool,
    sink: Sink,
    on_drop: Option<Box<dyn FnOnce() + Send>>,
}

impl Slot {
    fn stamp(&mut self, m: &Outgoing) -> String {
        let msg = TelemetryMessage {
            kind: m.kind,
            sequence: self.next_sequence,
            t: m.t,
            payload: m.payload.clone(),
        };
        self.next_sequence += 1;
        encode_line(&msg)
    }

    /// False if the client must be dropped.
    fn deliver(&mut self, m: &Outgoing) -> bool {
        let line = self.stamp(m);
        match &mut self.sink {
            Sink::Channel(tx) => match tx.try_send(line) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    warn!("client {} is not keeping up; disconnecting", self.id);
                    false
                }
                Err(TrySendError::Disconnected(_)) => false,
            },
            Sink::Writer(w) => {
                let ok = w.write_all(line.as_bytes()).and_then(|_| w.write_all(b"\n")).is_ok();
                if !ok {
                    warn!("transcript write failed; recording stopped");
                }
                ok
            }
        }
    }
}

#[derive(Default)]
struct Inner {
    slots: Vec<Slot>,
    next_id: ClientId,
    dropped_slow: u64,
}

pub struct Hub {
    inner: Mutex<Inner>,
    capacity: usize,
}

impl Hub {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            capacity: capacity.max(1),
        }
    }

    /// Add a network client. `on_drop` runs if the hub disconnects it, e.g.
    /// to shut down its socket.
    pub fn register(&self, on_drop: Option<Box<dyn FnOnce() + Send>>) -> (ClientId, Receiver<String>) {
        let (tx, rx) = bounded(self.capacity);
        let mut inner = self.inner.lock().expect("hub lock");
        let id = inner.next_id;
        inner.next_id += 1;
        inner.slots.push(Slot {
            id,
            next_sequence: 0,
            greeted: false,
            sink: Sink::Channel(tx),
            on_drop,
        });
        info!("client {id} connected");
        (id, rx)
    }

    /// Record everything broadcast from now on, exactly as a client
    /// connected at this moment would see it.
    pub fn add_recorder(&self, writer: Box<dyn Write + Send>) -> ClientId {
        let mut inner = self.inner.lock().expect("hub lock");
        let id = inner.next_id;
        inner.next_id += 1;
        inner.slots.push(Slot {
            id,
            next_sequence: 0,
            greeted: false,
            sink: Sink::Writer(writer),
            on_drop: None,
        });
        id
    }

    pub fn unregister(&self, id: ClientId) {
        let mut inner = self.inner.lock().expect("hub lock");
        if let Some(pos) = inner.slots.iter().position(|s| s.id == id) {
            let slot = inner.slots.remove(pos);
            finish(slot);
            info!("client {id} disconnected");
        }
    }

    pub fn client_count(&self) -> usize {
        let inner = self.inner.lock().expect("hub lock");
        inner.slots.iter().filter(|s| matches!(s.sink, Sink::Channel(_))).count()
    }

    /// Clients disconnected for falling behind.
    pub fn dropped_slow(&self) -> u64 {
        self.inner.lock().expect("hub lock").dropped_slow
    }

    /// Treat every current client as already greeted.
    pub fn mark_all_greeted(&self) {
        for s in self.inner.lock().expect("hub lock").slots.iter_mut() {
            s.greeted = true;
        }
    }

    /// Send `messages` to every client. Clients that have not received
    /// anything yet first get `greeting` (if any).
    pub fn broadcast(&self, greeting: Option<&dyn Fn() -> Outgoing>, messages: &[Outgoing]) {
        let mut inner = self.inner.lock().expect("hub lock");
        let mut greeting_msg: Option<Outgoing> = None;
        let mut keep = Vec::with_capacity(inner.slots.len());
        let mut slow = 0;
        for mut slot in inner.slots.drain(..) {
            let mut ok = true;
            if !slot.greeted {
                if let Some(g) = greeting {
                    let msg = greeting_msg.get_or_insert_with(g);
                    ok = slot.deliver(msg);
                }
                slot.greeted = true;
            }
            for m in messages {
                if !ok {
                    break;
                }
                ok = slot.deliver(m);
            }
            if ok {
                keep.push(slot);
            } else {
                if matches!(&slot.sink, Sink::Channel(tx) if tx.is_full()) {
                    slow += 1;
                }
                finish(slot);
            }
        }
        inner.slots = keep;
        inner.dropped_slow += slow;
    }

    /// Flush recorders and end every stream. Clients still receive what
    /// is already buffered for them.
    pub fn close(&self) {
        let mut inner = self.inner.lock().expect("hub lock");
        for mut slot in inner.slots.drain(..) {
            slot.on_drop = None;
            finish(slot);
        }
    }
}

fn finish(mut slot: Slot) {
    if let Sink::Writer(w) = &mut slot.sink {
        let _ = w.flush();
    }
    if let Some(f) = slot.on_drop.take() {
        f();
    }
}
