//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aps_core::controller::ControllerMode;
use aps_core::datalog::{depth_normalized_summary, SampleRecord};
use aps_core::field::ParameterField;
use aps_core::hydro::{self, Bathymetry, PlantState, RelayCommand};
use aps_core::mission::{Cast, Leg, MissionPlan};
use aps_core::scenario::{Pacing, Scenario};
use aps_core::session::{run_mission, OperatorCommand, Session, SessionEvent};
use aps_core::specs::{ProbeSpec, WinchSpec};
use aps_telemetry::protocol::{decode_all, encode, CommandKind, CommandMessage, MessageKind, TelemetryMessage};
use aps_telemetry::server::{event_message, record_session, replay, serve, state_message};
use aps_telemetry::{read_transcript, LoopOptions, ReplayConfig, ServerConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn aps(args: &[&str]) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_aps"));
    for var in ["APS_SEED", "APS_DT", "APS_OUT", "APS_PORT", "APS_PACE"] {
        cmd.env_remove(var);
    }
    cmd.args(args).output().expect("spawn aps")
}

fn figure(text: &str, label: &str) -> Result<f64, String> {
    let line = text
        .lines()
        .find(|l| l.starts_with(label))
        .ok_or_else(|| format!("no `{label}` line"))?;
    line[label.len()..]
        .split_whitespace()
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("unparseable `{line}`"))
}

fn within_rel(v: f64, target: f64, rel: f64) -> bool {
    ((v - target) / target).abs() <= rel
}

fn flotation_and_structure() -> Outcome {
    let path = root().join("scenarios/lake_hertel.toml");
    let start = Instant::now();
    let o = aps(&["check", path.to_str().unwrap()]);
    let elapsed = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&o.stdout);
    ensure(o.status.code() == Some(0), || format!("exit {:?}", o.status.code()))?;
    let fb = figure(&text, "buoyant force:")?;
    let w = figure(&text, "max total weight:")?;
    let sf = figure(&text, "structural S.F.:")?;
    ensure(within_rel(fb, 1256.8, 0.002), || format!("buoyant force {fb} N"))?;
    ensure(within_rel(w, 106.76, 0.002), || format!("max weight {w} kg"))?;
    ensure((sf - 8.163).abs() <= 0.01, || format!("S.F. {sf}"))?;
    ensure(elapsed < 1.0, || format!("runtime {elapsed:.3} s"))?;
    Ok(format!("{fb} N, {w} kg, S.F. {sf}, all rules pass, {elapsed:.3} s"))
}

fn deep_env(depth: f64) -> hydro::Environment<f64> {
    let mut env = Scenario::lake_hertel().environment;
    env.bathymetry = Bathymetry::Flat { depth };
    env.obstructions.clear();
    env
}

fn retrieval_timing() -> Outcome {
    let s = Scenario::lake_hertel();
    let env = deep_env(20.0);
    let period = s.controller.control_period;
    let start = Instant::now();
    let mut plant = PlantState::hanging(10.0, s.mission_start());
    let mut steps = 0u64;
    while plant.probe_depth > 0.0 {
        plant = hydro::step(&plant, RelayCommand::Retrieve, &env, &s.probe, &s.winch, s.dt).map_err(|e| e.to_string())?;
        ensure(plant.tether_taut, || "line went slack".into())?;
        steps += 1;
    }
    let wall = start.elapsed().as_secs_f64();
    let t = steps as f64 * s.dt;
    ensure((t - 30.28).abs() <= 2.0 * period, || format!("{t:.2} s"))?;
    ensure(wall < 1.0, || format!("wall clock {wall:.3} s"))?;
    Ok(format!("{t:.2} s (30.28 ± {:.1}), wall clock {:.1} ms", 2.0 * period, wall * 1e3))
}

fn terminal_velocity_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let env = deep_env(1e5);
    let winch = WinchSpec {
        spool_capacity: 1e5,
        ..WinchSpec::trac_fisherman_25()
    };
    let mut worst_rel: f64 = 0.0;
    let mut worst_over = f64::NEG_INFINITY;
    for k in 0..20 {
        let mass = rng.gen_range(0.3..11.0);
        let probe = ProbeSpec {
            mass_air: mass,
            volume: mass / env.water_density * rng.gen_range(0.2..0.99),
            drag_coefficient: rng.gen_range(0.3..2.0),
            cross_section_area: rng.gen_range(0.0005..0.05),
            ..ProbeSpec::exo1()
        };
        let vt = hydro::terminal_velocity(&probe, &env).map_err(|e| e.to_string())?;
        let oracle = (2.0 * probe.wet_weight(env.water_density, env.gravity)
            / (env.water_density * probe.drag_coefficient * probe.cross_section_area))
            .sqrt();
        ensure((vt - oracle).abs() <= 1e-12 * oracle, || format!("config {k}: closed form {vt} vs {oracle}"))?;
        let mut plant = PlantState::slack(1e5, 0.0, env.bathymetry_center());
        for _ in 0..20_000 {
            plant = hydro::step(&plant, RelayCommand::Off, &env, &probe, &winch, 0.01).map_err(|e| e.to_string())?;
            ensure(!plant.tether_taut, || format!("config {k}: line caught the probe"))?;
            worst_over = worst_over.max(plant.probe_velocity - vt);
            ensure(plant.probe_velocity <= vt + 1e-6, || {
                format!("config {k}: {} exceeds v_t {vt}", plant.probe_velocity)
            })?;
        }
        let rel = (plant.probe_velocity - vt).abs() / vt;
        worst_rel = worst_rel.max(rel);
        ensure(rel <= 1e-3, || format!("config {k}: settled at {} vs v_t {vt}", plant.probe_velocity))?;
    }
    Ok(format!(
        "20 configs, worst relative error {worst_rel:.1e}, max excess over v_t {worst_over:.1e} m/s"
    ))
}

fn closed_loop_settling() -> Outcome {
    let scenario = Scenario::lake_hertel();
    let c = &scenario.controller;
    let bound = c.deadband + scenario.winch.payout_speed.max(scenario.winch.retrieval_speed) * c.control_period;
    let mut worst: f64 = 0.0;
    let mut times = Vec::new();
    for target in [2.0, 4.0, 6.0, 8.0] {
        let mut session = Session::new(&scenario).map_err(|e| e.to_string())?;
        let ack = session.apply_command(&OperatorCommand::SetTargetDepth { depth: target });
        ensure(ack.accepted, || format!("{target} m rejected: {:?}", ack.reason))?;
        let mut rows = Vec::new();
        let mut held_at = None;
        while session.time() < 120.0 {
            let (_, row) = session.tick().map_err(|e| e.to_string())?;
            rows.push(row);
            if held_at.is_none() && session.controller.mode() == ControllerMode::Holding {
                held_at = Some(session.time());
            }
            if held_at.is_some_and(|t| session.time() >= t + 30.0) {
                break;
            }
        }
        let held_at = held_at.ok_or_else(|| format!("{target} m: never reached Holding"))?;
        let entry = rows
            .iter()
            .position(|r| (r.measured_depth - target).abs() <= c.deadband)
            .ok_or_else(|| format!("{target} m: never entered the deadband"))?;
        let approach = rows[..entry]
            .iter()
            .rev()
            .map(|r| r.relay)
            .find(|r| *r != RelayCommand::Off);
        for r in &rows[entry..] {
            let reversal = r.relay != RelayCommand::Off && Some(r.relay) != approach;
            ensure(!reversal, || format!("{target} m: relay reversed at t = {:.1} s", r.time))?;
        }
        for r in rows.iter().filter(|r| r.time >= held_at) {
            let err = (r.probe_depth - target).abs();
            worst = worst.max(err);
            ensure(err <= bound, || format!("{target} m: off by {err:.3} m at t = {:.1}", r.time))?;
            ensure(r.mode == ControllerMode::Holding, || format!("{target} m: left Holding"))?;
        }
        times.push(format!("{target} m in {held_at:.1} s"));
    }
    Ok(format!(
        "{}; worst |error| {worst:.3} m (bound {bound:.3}), no reversals",
        times.join(", ")
    ))
}

fn stall_fault() -> Outcome {
    let scenario = Scenario::vegetation();
    let veg = scenario.environment.obstructions.first().ok_or("no obstruction")?.clone();
    ensure(veg.top_depth == 4.0, || format!("obstruction at {} m", veg.top_depth))?;
    let first_target = scenario.mission.legs.iter().find_map(|l| match l {
        Leg::Station { casts, .. } => casts.first().map(|c| c.target_depth),
        _ => None,
    });
    ensure(first_target == Some(8.0), || format!("first cast to {first_target:?} m"))?;
    let window = scenario.controller.stall_window;
    ensure(window == 5.0, || format!("stall window {window}"))?;
    let period = scenario.controller.control_period;
    let payout = scenario.winch.payout_speed;

    let mut session = Session::new(&scenario).map_err(|e| e.to_string())?;
    session.apply_command(&OperatorCommand::StartMission);
    let mut rows = Vec::new();
    let mut fault = None;
    while session.time() < scenario.max_duration && fault.is_none() {
        let (events, row) = session.tick().map_err(|e| e.to_string())?;
        rows.push(row);
        fault = events.into_iter().find_map(|e| match e {
            SessionEvent::Fault(f) => Some(f),
            _ => None,
        });
    }
    let fault = fault.ok_or("no fault raised")?;
    ensure(fault.reason.contains("stall"), || fault.reason.clone())?;
    // The probe descends taut at payout speed until it lands, so the
    // landing time inside the tick follows from the depth at tick start.
    let k = rows
        .windows(2)
        .position(|w| w[0].probe_depth < veg.top_depth && w[1].probe_depth >= veg.top_depth - 1e-9)
        .ok_or("probe never reached the obstruction")?;
    let before = &rows[k];
    ensure(k > 0 && (before.probe_depth - rows[k - 1].probe_depth - payout * period).abs() < 1e-9, || {
        "descent before landing was not taut at payout speed".into()
    })?;
    let pinned = before.time + (veg.top_depth - before.probe_depth) / payout;
    let delay = fault.time - pinned;
    ensure((delay - window).abs() <= period + 1e-9, || format!("fault {delay:.3} s after landing"))?;

    for _ in 0..100 {
        let (_, row) = session.tick().map_err(|e| e.to_string())?;
        ensure(row.relay == RelayCommand::Off && row.mode == ControllerMode::Fault, || {
            format!("relay {:?} in {:?} before acknowledgment", row.relay, row.mode)
        })?;
    }
    let ack = session.apply_command(&OperatorCommand::AckFault);
    ensure(ack.accepted, || "acknowledgment refused".into())?;
    ensure(session.controller.mode() != ControllerMode::Fault, || "still faulted after ack".into())?;
    Ok(format!(
        "landed at t = {pinned:.2} s, fault at {:.2} s ({delay:.3} s later, ± {period}), relay Off for 10 s until acknowledged",
        fault.time
    ))
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let lake = root().join("scenarios/lake_hertel.toml");
    for d in &dirs {
        let o = aps(&["run", lake.to_str().unwrap(), "--seed", "11", "--run-id", "a", "--out", d.path().to_str().unwrap()]);
        ensure(o.status.code() == Some(0), || format!("run exited {:?}", o.status.code()))?;
    }
    let mut sizes = Vec::new();
    for suffix in [".log.ndjson", ".csv", ".profiles.csv", ".trajectory.csv", ".transcript.ndjson"] {
        let name = format!("lake_hertel_11_a{suffix}");
        let a = std::fs::read(dirs[0].path().join(&name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(&name)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name} differs"))?;
        sizes.push(format!("{suffix} {} B", a.len()));
    }
    Ok(format!("two runs, seed 11: identical {}", sizes.join(", ")))
}

fn convergence() -> Outcome {
    let s = Scenario::lake_hertel();
    let env = deep_env(100.0);
    let winch = WinchSpec {
        spool_capacity: 100.0,
        ..s.winch.clone()
    };
    let start = PlantState::slack(100.0, 0.0, s.mission_start());
    let depth_at_5s = |dt: f64| -> Result<f64, String> {
        let mut p = start.clone();
        for _ in 0..(5.0 / dt).round() as usize {
            p = hydro::step(&p, RelayCommand::Off, &env, &s.probe, &winch, dt).map_err(|e| e.to_string())?;
        }
        Ok(p.probe_depth)
    };
    let reference = depth_at_5s(1e-4)?;
    let coarse = depth_at_5s(0.01)?;
    let diff = (coarse - reference).abs();
    ensure(diff <= 5e-3, || format!("|Δ| = {diff:.2e} m"))?;
    Ok(format!("depth at 5 s {coarse:.5} m vs reference {reference:.5} m, |Δ| = {diff:.2e} m (≤ 5e-3)"))
}

/// Exact when the rounding error of the sum is zero (Knuth's two-sum).
fn sum_is_exact(a: f64, b: f64) -> bool {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    err == 0.0
}

fn data_product() -> Outcome {
    let mut scenario = Scenario::lake_hertel();
    scenario.environment.fields.parameters.clear();
    scenario
        .environment
        .fields
        .parameters
        .insert("v".into(), ParameterField::linear(10.0, -0.5));
    scenario.probe.parameter_list = vec!["v".into()];
    let station = scenario.environment.bathymetry_center();
    scenario.asv.position = station;
    scenario.mission = MissionPlan {
        legs: vec![Leg::Station {
            hold_position: station,
            casts: vec![Cast {
                target_depth: 8.0,
                dwell: 10.0,
            }],
        }],
    };
    let run = run_mission(&scenario).map_err(|e| e.to_string())?;
    let summary = depth_normalized_summary(&run.samples, "v", 0.5).map_err(|e| e.to_string())?;
    ensure(summary.bins.len() >= 15, || format!("only {} bins", summary.bins.len()))?;
    for w in summary.bins.windows(2) {
        ensure(w[1].mean < w[0].mean, || {
            format!("bin {} mean {} !< {}", w[1].depth_low, w[1].mean, w[0].mean)
        })?;
    }

    let (a, b) = (4.0, -16.0);
    let scaled: Vec<SampleRecord> = run
        .samples
        .iter()
        .map(|r| {
            let mut r = r.clone();
            let v = r.values["v"];
            assert!(sum_is_exact(a * v, b));
            r.values.insert("v".into(), a * v + b);
            r
        })
        .collect();
    let rescaled = depth_normalized_summary(&scaled, "v", 0.5).map_err(|e| e.to_string())?;
    for (x, y) in summary.bins.iter().zip(&rescaled.bins) {
        ensure(x.mean.to_bits() == y.mean.to_bits() && x.std.to_bits() == y.std.to_bits(), || {
            format!("bin {} changed under v -> {a}v{b:+}", x.depth_low)
        })?;
    }
    ensure(summary.bins.len() == rescaled.bins.len(), || "bin count changed".into())?;
    Ok(format!(
        "{} records, {} bins strictly decreasing ({:.3} to {:.3}), bit-identical under v -> {a}v{b:+}",
        run.samples.len(),
        summary.bins.len(),
        summary.bins[0].mean,
        summary.bins.last().unwrap().mean
    ))
}

fn protocol() -> Outcome {
    // Codec: one real message of every kind.
    let mut session = Session::new(&Scenario::vegetation()).map_err(|e| e.to_string())?;
    session.apply_command(&OperatorCommand::StartMission);
    let mut messages = vec![state_message(&session, true)];
    while !messages.iter().any(|m| m.kind == MessageKind::Fault) {
        let (events, _) = session.tick().map_err(|e| e.to_string())?;
        messages.extend(events.iter().map(event_message));
    }
    messages.push(aps_telemetry::Outgoing {
        kind: MessageKind::Ack,
        t: session.time(),
        payload: serde_json::json!({"command_id": "c1", "accepted": true, "client": 0}),
    });
    let stamped: Vec<TelemetryMessage> = messages
        .iter()
        .enumerate()
        .map(|(i, m)| TelemetryMessage {
            kind: m.kind,
            sequence: i as u64,
            t: m.t,
            payload: m.payload.clone(),
        })
        .collect();
    let bytes: Vec<u8> = stamped.iter().flat_map(encode).collect();
    let back: Vec<TelemetryMessage> = decode_all(&bytes).map_err(|e| e.to_string())?;
    ensure(back == stamped, || "message codec did not round-trip".into())?;
    for kind in [MessageKind::State, MessageKind::Sample, MessageKind::Fault, MessageKind::Ack, MessageKind::MissionEvent] {
        ensure(stamped.iter().any(|m| m.kind == kind), || format!("no {kind:?} message"))?;
    }
    let commands: Vec<CommandMessage> = [
        CommandKind::SetTargetDepth,
        CommandKind::ManualStep,
        CommandKind::SetUnderway,
        CommandKind::StartMission,
        CommandKind::Pause,
        CommandKind::Resume,
        CommandKind::AckFault,
    ]
    .into_iter()
    .enumerate()
    .map(|(i, k)| CommandMessage::new(format!("id{i}"), k, serde_json::json!({})))
    .collect();
    let bytes: Vec<u8> = commands.iter().flat_map(encode).collect();
    let back: Vec<CommandMessage> = decode_all(&bytes).map_err(|e| e.to_string())?;
    ensure(back == commands, || "command codec did not round-trip".into())?;

    // Record, then replay over TCP.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.ndjson");
    let mut live = Session::new(&Scenario::lake_hertel()).map_err(|e| e.to_string())?;
    let options = LoopOptions {
        start_mission: true,
        max_ticks: Some(6000),
        ..LoopOptions::default()
    };
    record_session(&mut live, &options, std::fs::File::create(&path).unwrap()).map_err(|e| e.to_string())?;
    let recorded = read_transcript(&path).map_err(|e| e.to_string())?;
    let server = replay(recorded.clone(), ReplayConfig::local(0, f64::INFINITY)).map_err(|e| e.to_string())?;
    let stream = TcpStream::connect(server.local_addr()).map_err(|e| e.to_string())?;
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    let reader = std::thread::spawn(move || {
        BufReader::new(stream)
            .lines()
            .map_while(Result::ok)
            .map(|l| decode_all::<TelemetryMessage>(format!("{l}\n").as_bytes()).unwrap().remove(0))
            .collect::<Vec<_>>()
    });
    server.wait().map_err(|e| e.to_string())?;
    let replayed = reader.join().map_err(|_| "reader panicked")?;
    ensure(replayed == recorded, || {
        format!("replay differs: {} vs {} messages", replayed.len(), recorded.len())
    })?;

    // Cadence with three clients that never read.
    let ticks = 50;
    let server = serve(
        Session::new(&Scenario::lake_hertel()).map_err(|e| e.to_string())?,
        ServerConfig {
            loop_options: LoopOptions {
                pacing: Pacing::Realtime,
                start_mission: true,
                max_ticks: Some(ticks),
                wait_for_clients: 3,
                ..LoopOptions::default()
            },
            client_buffer: 8,
            ..ServerConfig::local(0)
        },
    )
    .map_err(|e| e.to_string())?;
    let idle: Vec<TcpStream> = (0..3).map(|_| TcpStream::connect(server.local_addr()).unwrap()).collect();
    let stats = server.wait().map_err(|e| e.to_string())?;
    drop(idle);
    ensure(stats.ticks == ticks, || format!("{} ticks", stats.ticks))?;
    ensure(stats.max_lateness <= 0.02, || format!("max tick lateness {:.1} ms", stats.max_lateness * 1e3))?;
    Ok(format!(
        "all 5 message kinds and 7 command kinds round-trip; {} messages over {:.0} s replayed identically; \
         3 slow clients: max tick lateness {:.2} ms (≤ 20), mean {:.3} ms",
        recorded.len(),
        recorded.last().map_or(0.0, |m| m.t),
        stats.max_lateness * 1e3,
        stats.mean_lateness * 1e3
    ))
}

trait ScenarioExt {
    fn mission_start(&self) -> aps_core::GeoPoint;
}

impl ScenarioExt for Scenario {
    fn mission_start(&self) -> aps_core::GeoPoint {
        self.asv.position
    }
}

trait EnvExt {
    fn bathymetry_center(&self) -> aps_core::GeoPoint;
}

impl EnvExt for hydro::Environment<f64> {
    fn bathymetry_center(&self) -> aps_core::GeoPoint {
        self.fields.origin
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("flotation and structure check", flotation_and_structure),
        ("retrieval timing", retrieval_timing),
        ("terminal-velocity oracle", terminal_velocity_oracle),
        ("closed-loop settling", closed_loop_settling),
        ("stall fault", stall_fault),
        ("determinism", determinism),
        ("convergence", convergence),
        ("data product", data_product),
        ("protocol", protocol),
    ];
    let mut failed = 0;
    println!("\nrunning {} acceptance criteria", criteria.len());
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed\n", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
