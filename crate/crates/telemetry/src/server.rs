//! Live session server.
//!
//! One thread owns the simulation. Connection workers parse commands and
//! push them onto a bounded queue; the owner drains the queue before each
//! tick, so commands apply in arrival order. Output fans out through the
//! [`Hub`], which never blocks the owner.

use crossbeam_channel::{bounded, Receiver, Sender};
use log::{debug, info, warn};
use serde_json::Value;
use std::io::{self, BufWriter, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};
use thiserror::Error;

use aps_core::hydro::SimError;
use aps_core::mission::MissionStatus;
use aps_core::scenario::Pacing;
use aps_core::session::{CommandOutcome, OperatorCommand, Session, SessionEvent};

use crate::hub::{ClientId, Hub, Outgoing, DEFAULT_CLIENT_BUFFER};
use crate::protocol::{decode_line, AckPayload, CommandMessage, LineDecoder, MessageKind, StatePayload, PROTOCOL_VERSION};

pub const DEFAULT_PORT: u16 = 7878;
pub const DEFAULT_COMMAND_QUEUE: usize = 256;

/// How long a new connection has to start a WebSocket handshake before it
/// is treated as a plain stream client.
const SNIFF_TIMEOUT: Duration = Duration::from_millis(250);
const WS_POLL: Duration = Duration::from_millis(5);
const ACCEPT_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("cannot open transcript {path}: {source}")]
    Transcript { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("worker thread panicked")]
    Panicked,
}

/// A command as it crosses from a connection worker to the owner.
#[derive(Debug)]
pub struct QueuedCommand {
    pub client: ClientId,
    pub command: Result<CommandMessage, Rejected>,
}

/// A message that could not be parsed as a command.
#[derive(Debug, Clone)]
pub struct Rejected {
    pub command_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoopOptions {
    pub pacing: Pacing,
    /// Broadcast state every this many ticks. 1 gives the control rate.
    pub state_every: u64,
    pub max_ticks: Option<u64>,
    /// Stop once the mission completes or faults.
    pub stop_when_finished: bool,
    pub start_mission: bool,
    /// Hold the first tick until this many clients are connected.
    pub wait_for_clients: usize,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            pacing: Pacing::Realtime,
            state_every: 1,
            max_ticks: None,
            stop_when_finished: false,
            start_mission: false,
            wait_for_clients: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub ticks: u64,
    pub commands_accepted: u64,
    pub commands_rejected: u64,
    /// Wall-clock lateness of tick starts against their deadlines, s.
    /// Zero when not paced.
    pub max_lateness: f64,
    pub mean_lateness: f64,
    pub dropped_clients: u64,
}

pub fn state_message(session: &Session, snapshot: bool) -> Outgoing {
    let state = session.snapshot();
    let t = state.time;
    let payload = StatePayload {
        protocol_version: PROTOCOL_VERSION,
        snapshot,
        state,
    };
    Outgoing {
        kind: MessageKind::State,
        t,
        payload: serde_json::to_value(payload).expect("state serializes"),
    }
}

pub fn event_message(event: &SessionEvent) -> Outgoing {
    let (kind, t, payload) = match event {
        SessionEvent::Sample(s) => (MessageKind::Sample, s.timestamp, serde_json::to_value(s)),
        SessionEvent::Fault(f) => (MessageKind::Fault, f.time, serde_json::to_value(f)),
        SessionEvent::Mission(m) => (MessageKind::MissionEvent, m.time, serde_json::to_value(m)),
        SessionEvent::ModeChange { time, .. } => (MessageKind::MissionEvent, *time, serde_json::to_value(event)),
    };
    Outgoing {
        kind,
        t,
        payload: payload.expect("event serializes"),
    }
}

fn ack_message(t: f64, client: ClientId, command_id: Option<String>, outcome: CommandOutcome) -> Outgoing {
    let ack = AckPayload {
        command_id,
        accepted: outcome.accepted,
        reason: outcome.reason,
        warning: outcome.warning,
        client,
    };
    Outgoing {
        kind: MessageKind::Ack,
        t,
        payload: serde_json::to_value(ack).expect("ack serializes"),
    }
}

fn rejected(reason: String) -> CommandOutcome {
    CommandOutcome {
        accepted: false,
        reason: Some(reason),
        warning: None,
    }
}

/// Drive `session` and publish through `hub` until stopped. Every queued
/// command is acked exactly once, in arrival order.
pub fn run_loop(
    session: &mut Session,
    hub: &Hub,
    commands: Option<&Receiver<QueuedCommand>>,
    options: &LoopOptions,
    stop: &AtomicBool,
) -> Result<RunStats, SimError> {
    let mut stats = RunStats::default();
    let period = Duration::from_secs_f64(session.control_period());
    let state_every = options.state_every.max(1);
    let mut pending: Vec<Outgoing> = Vec::new();
    if options.start_mission {
        let outcome = session.apply_command(&OperatorCommand::StartMission);
        if !outcome.accepted {
            warn!("mission did not start: {:?}", outcome.reason);
        }
    }
    while hub.client_count() < options.wait_for_clients {
        if stop.load(Ordering::Relaxed) {
            return Ok(stats);
        }
        thread::sleep(ACCEPT_POLL);
    }
    let started = Instant::now();
    let mut lateness_sum = 0.0;
    loop {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        if options.max_ticks.is_some_and(|m| stats.ticks >= m) {
            break;
        }
        if options.stop_when_finished
            && matches!(session.mission.status, MissionStatus::Completed | MissionStatus::Faulted)
        {
            break;
        }
        if options.pacing == Pacing::Realtime {
            let deadline = started + period * stats.ticks as u32;
            let now = Instant::now();
            if now < deadline {
                thread::sleep(deadline - now);
            }
            let late = Instant::now().saturating_duration_since(deadline).as_secs_f64();
            lateness_sum += late;
            stats.max_lateness = stats.max_lateness.max(late);
        }

        if let Some(rx) = commands {
            for queued in rx.try_iter() {
                let t = session.time();
                let (id, outcome) = match queued.command {
                    Ok(cmd) => {
                        let outcome = match cmd.to_operator() {
                            Ok(op) => session.apply_command(&op),
                            Err(reason) => rejected(reason),
                        };
                        (Some(cmd.command_id), outcome)
                    }
                    Err(r) => (r.command_id, rejected(r.reason)),
                };
                debug!("client {} command {:?}: {:?}", queued.client, id, outcome);
                if outcome.accepted {
                    stats.commands_accepted += 1;
                } else {
                    stats.commands_rejected += 1;
                }
                pending.push(ack_message(t, queued.client, id, outcome));
            }
        }

        let (events, _) = session.tick()?;
        stats.ticks += 1;
        pending.extend(events.iter().map(event_message));
        if stats.ticks % state_every == 0 {
            pending.push(state_message(session, false));
        }
        let greet = || state_message(session, true);
        hub.broadcast(Some(&greet), &pending);
        pending.clear();
    }
    if options.pacing == Pacing::Realtime && stats.ticks > 0 {
        stats.mean_lateness = lateness_sum / stats.ticks as f64;
    }
    stats.dropped_clients = hub.dropped_slow();
    Ok(stats)
}

/// Run `session` offline and write what a client connected from the start
/// would have received.
pub fn record_session<W: Write + Send + 'static>(
    session: &mut Session,
    options: &LoopOptions,
    writer: W,
) -> Result<RunStats, SimError> {
    let hub = Hub::new(1);
    hub.add_recorder(Box::new(writer));
    let options = LoopOptions {
        pacing: Pacing::Fast,
        wait_for_clients: 0,
        ..options.clone()
    };
    let stats = run_loop(session, &hub, None, &options, &AtomicBool::new(false));
    hub.close();
    stats
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub loop_options: LoopOptions,
    pub client_buffer: usize,
    pub command_queue: usize,
    /// Record everything broadcast to this file.
    pub transcript: Option<PathBuf>,
}

impl ServerConfig {
    pub fn local(port: u16) -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], port)),
            loop_options: LoopOptions::default(),
            client_buffer: DEFAULT_CLIENT_BUFFER,
            command_queue: DEFAULT_COMMAND_QUEUE,
            transcript: None,
        }
    }
}

/// A running endpoint.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    hub: Arc<Hub>,
    acceptor: Option<JoinHandle<()>>,
    worker: Option<JoinHandle<Result<RunStats, ServerError>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.hub.client_count()
    }

    pub fn is_finished(&self) -> bool {
        self.worker.as_ref().is_none_or(|w| w.is_finished())
    }

    /// Stop the worker now and disconnect everyone.
    pub fn stop(mut self) -> Result<RunStats, ServerError> {
        self.stop.store(true, Ordering::Relaxed);
        self.finish()
    }

    /// Wait for the worker to end on its own.
    pub fn wait(mut self) -> Result<RunStats, ServerError> {
        self.finish()
    }

    fn finish(&mut self) -> Result<RunStats, ServerError> {
        let result = match self.worker.take() {
            Some(w) => w.join().map_err(|_| ServerError::Panicked).and_then(|r| r),
            None => Ok(RunStats::default()),
        };
        self.stop.store(true, Ordering::Relaxed);
        self.hub.close();
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        result
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.worker.is_some() {
            self.stop.store(true, Ordering::Relaxed);
            let _ = self.finish();
        }
    }
}

/// Start serving `session`. Fails if the address is in use.
pub fn serve(mut session: Session, config: ServerConfig) -> Result<ServerHandle, ServerError> {
    let transcript = match &config.transcript {
        Some(path) => Some(std::fs::File::create(path).map_err(|source| ServerError::Transcript {
            path: path.clone(),
            source,
        })?),
        None => None,
    };
    let stop = Arc::new(AtomicBool::new(false));
    let hub = Arc::new(Hub::new(config.client_buffer));
    if let Some(file) = transcript {
        hub.add_recorder(Box::new(BufWriter::new(file)));
    }
    let (cmd_tx, cmd_rx) = bounded(config.command_queue.max(1));
    let (addr, acceptor) = start_acceptor(config.addr, hub.clone(), Some(cmd_tx), stop.clone())?;

    let options = config.loop_options.clone();
    let worker = {
        let hub = hub.clone();
        let stop = stop.clone();
        thread::Builder::new()
            .name("aps-sim".into())
            .spawn(move || {
                let stats = run_loop(&mut session, &hub, Some(&cmd_rx), &options, &stop)?;
                info!("simulation stopped after {} ticks", stats.ticks);
                hub.close();
                Ok(stats)
            })
            .expect("spawn simulation thread")
    };
    info!("serving on {addr}");
    Ok(ServerHandle {
        addr,
        stop,
        hub,
        acceptor: Some(acceptor),
        worker: Some(worker),
    })
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub addr: SocketAddr,
    /// Time compression. `f64::INFINITY` streams without pauses.
    pub speed: f64,
    /// Hold the stream until this many clients are connected.
    pub wait_for_clients: usize,
    pub client_buffer: usize,
}

impl ReplayConfig {
    pub fn local(port: u16, speed: f64) -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], port)),
            speed,
            wait_for_clients: 1,
            client_buffer: DEFAULT_CLIENT_BUFFER,
        }
    }
}

/// Stream a recorded transcript over the live protocol. Clients connected
/// when streaming starts see the recorded messages unchanged. Late joiners
/// first get the most recent recorded state. Commands are acked as
/// rejected.
pub fn replay(
    messages: Vec<crate::protocol::TelemetryMessage>,
    config: ReplayConfig,
) -> Result<ServerHandle, ServerError> {
    let stop = Arc::new(AtomicBool::new(false));
    let hub = Arc::new(Hub::new(config.client_buffer));
    let (cmd_tx, cmd_rx) = bounded::<QueuedCommand>(DEFAULT_COMMAND_QUEUE);
    let (addr, acceptor) = start_acceptor(config.addr, hub.clone(), Some(cmd_tx), stop.clone())?;
    let speed = if config.speed > 0.0 { config.speed } else { 1.0 };
    let wait_for = config.wait_for_clients;

    let worker = {
        let hub = hub.clone();
        let stop = stop.clone();
        thread::Builder::new()
            .name("aps-replay".into())
            .spawn(move || {
                let mut stats = RunStats::default();
                while hub.client_count() < wait_for {
                    if stop.load(Ordering::Relaxed) {
                        return Ok(stats);
                    }
                    thread::sleep(ACCEPT_POLL);
                }
                hub.mark_all_greeted();
                let t0 = messages.first().map_or(0.0, |m| m.t);
                let started = Instant::now();
                let mut last_state: Option<Outgoing> = None;
                for m in &messages {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    if speed.is_finite() {
                        let offset = ((m.t - t0) / speed).max(0.0);
                        let deadline = started + Duration::from_secs_f64(offset);
                        let now = Instant::now();
                        if now < deadline {
                            thread::sleep(deadline - now);
                        }
                    }
                    let mut batch = Vec::new();
                    for q in cmd_rx.try_iter() {
                        let id = match q.command {
                            Ok(c) => Some(c.command_id),
                            Err(r) => r.command_id,
                        };
                        stats.commands_rejected += 1;
                        batch.push(ack_message(m.t, q.client, id, rejected("replay is read-only".into())));
                    }
                    let out = Outgoing::from_message(m);
                    batch.push(out.clone());
                    let greeting = last_state.clone().map(|mut s| {
                        if let Value::Object(map) = &mut s.payload {
                            map.insert("snapshot".into(), Value::Bool(true));
                        }
                        s
                    });
                    let greet = move || greeting.clone().expect("checked");
                    let has_greeting = last_state.is_some();
                    hub.broadcast(if has_greeting { Some(&greet) } else { None }, &batch);
                    if m.kind == MessageKind::State {
                        last_state = Some(out);
                    }
                    stats.ticks += 1;
                }
                stats.dropped_clients = hub.dropped_slow();
                hub.close();
                Ok(stats)
            })
            .expect("spawn replay thread")
    };
    Ok(ServerHandle {
        addr,
        stop,
        hub,
        acceptor: Some(acceptor),
        worker: Some(worker),
    })
}

fn start_acceptor(
    addr: SocketAddr,
    hub: Arc<Hub>,
    commands: Option<Sender<QueuedCommand>>,
    stop: Arc<AtomicBool>,
) -> Result<(SocketAddr, JoinHandle<()>), ServerError> {
    let listener = TcpListener::bind(addr).map_err(|source| ServerError::Bind { addr, source })?;
    let local = listener.local_addr().map_err(|source| ServerError::Bind { addr, source })?;
    listener
        .set_nonblocking(true)
        .map_err(|source| ServerError::Bind { addr, source })?;
    let handle = thread::Builder::new()
        .name("aps-accept".into())
        .spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        debug!("connection from {peer}");
                        let hub = hub.clone();
                        let commands = commands.clone();
                        let stop = stop.clone();
                        let _ = thread::Builder::new()
                            .name(format!("aps-conn-{peer}"))
                            .spawn(move || handle_connection(stream, hub, commands, stop));
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                    Err(e) => {
                        warn!("accept failed: {e}");
                        thread::sleep(ACCEPT_POLL);
                    }
                }
            }
        })
        .expect("spawn accept thread");
    Ok((local, handle))
}

fn handle_connection(stream: TcpStream, hub: Arc<Hub>, commands: Option<Sender<QueuedCommand>>, stop: Arc<AtomicBool>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let result = if sniff_websocket(&stream) {
        serve_websocket(stream, &hub, commands.as_ref(), &stop)
    } else {
        serve_stream(stream, &hub, commands.as_ref())
    };
    if let Err(e) = result {
        debug!("connection ended: {e}");
    }
}

fn sniff_websocket(stream: &TcpStream) -> bool {
    let _ = stream.set_read_timeout(Some(SNIFF_TIMEOUT));
    let deadline = Instant::now() + SNIFF_TIMEOUT;
    let mut buf = [0u8; 4];
    loop {
        match stream.peek(&mut buf) {
            Ok(4) => return &buf == b"GET ",
            Ok(0) => return false,
            Ok(n) => {
                if !b"GET ".starts_with(&buf[..n]) || Instant::now() >= deadline {
                    return false;
                }
                thread::sleep(Duration::from_millis(1));
            }
            Err(_) => return false,
        }
    }
}

/// Parse one command line. Messages that are not valid commands still
/// yield an id when one can be found, so the ack can name it.
fn parse_command(line: &[u8], offset: usize) -> Result<CommandMessage, Rejected> {
    decode_line::<CommandMessage>(line, offset).map_err(|e| {
        let command_id = serde_json::from_slice::<Value>(line)
            .ok()
            .and_then(|v| v.get("command_id").and_then(Value::as_str).map(str::to_owned));
        Rejected {
            command_id,
            reason: e.to_string(),
        }
    })
}

fn submit(commands: Option<&Sender<QueuedCommand>>, client: ClientId, command: Result<CommandMessage, Rejected>) -> bool {
    match commands {
        Some(tx) => tx.send(QueuedCommand { client, command }).is_ok(),
        None => true,
    }
}

fn serve_stream(stream: TcpStream, hub: &Hub, commands: Option<&Sender<QueuedCommand>>) -> io::Result<()> {
    let _ = stream.set_read_timeout(None);
    let killer = stream.try_clone()?;
    let (id, rx) = hub.register(Some(Box::new(move || {
        let _ = killer.shutdown(Shutdown::Both);
    })));
    let mut writer = stream.try_clone()?;
    let writer_thread = thread::spawn(move || {
        for line in rx.iter() {
            if writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .is_err()
            {
                break;
            }
        }
        // Also wakes the reader below.
        let _ = writer.shutdown(Shutdown::Both);
    });

    let mut reader = stream;
    let mut decoder = LineDecoder::new();
    let mut buf = [0u8; 4096];
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(_) => break,
        };
        for (offset, line) in decoder.feed(&buf[..n]) {
            if !submit(commands, id, parse_command(&line, offset)) {
                break;
            }
        }
    }
    hub.unregister(id);
    let _ = reader.shutdown(Shutdown::Both);
    let _ = writer_thread.join();
    Ok(())
}

fn serve_websocket(
    stream: TcpStream,
    hub: &Hub,
    commands: Option<&Sender<QueuedCommand>>,
    stop: &AtomicBool,
) -> io::Result<()> {
    use tungstenite::{Error as WsError, Message};

    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let killer = stream.try_clone()?;
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::new(ErrorKind::InvalidData, e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(WS_POLL))?;
    let (id, rx) = hub.register(Some(Box::new(move || {
        let _ = killer.shutdown(Shutdown::Both);
    })));
    let mut offset = 0usize;
    'outer: while !stop.load(Ordering::Relaxed) {
        loop {
            match rx.try_recv() {
                Ok(line) => match ws.send(Message::text(line)) {
                    Ok(()) => {}
                    Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                    Err(_) => break 'outer,
                },
                Err(crossbeam_channel::TryRecvError::Empty) => break,
                Err(crossbeam_channel::TryRecvError::Disconnected) => break 'outer,
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                for line in text.split('\n') {
                    let trimmed = line.trim();
                    if trimmed.is_empty() {
                        continue;
                    }
                    if !submit(commands, id, parse_command(trimmed.as_bytes(), offset)) {
                        break 'outer;
                    }
                    offset += line.len() + 1;
                }
            }
            Ok(Message::Binary(_)) => {
                let r = Rejected {
                    command_id: None,
                    reason: "binary frames are not supported".into(),
                };
                if !submit(commands, id, Err(r)) {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    hub.unregister(id);
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}
