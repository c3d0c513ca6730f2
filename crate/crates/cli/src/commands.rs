use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::Path;

use aps_core::datalog::{depth_normalized_summary, read_log, write_summary_csv};
use aps_core::scenario::ScenarioError;
use aps_core::session::{run_mission, MissionOutcome, Session};
use aps_core::specs::{buoyant_force, max_total_weight, structural_safety_factor, CompatibilityReport};
use aps_telemetry::{read_transcript, replay, serve, LoopOptions, ReplayConfig, ServerConfig};

use crate::artifacts::{default_run_id, write_run};
use crate::settings::{load_scenario, Overrides, Source};
use crate::{CliError, Command, EXIT_FAULT, EXIT_INCOMPATIBLE, EXIT_OK};

pub fn dispatch(cmd: &Command, over: &Overrides, out: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Check { scenario } => check(scenario, over, out),
        Command::Run {
            scenario,
            run_id,
            no_transcript,
        } => run(scenario, over, run_id.as_deref(), !no_transcript, out),
        Command::Serve {
            scenario,
            bind,
            state_rate,
            start_mission,
            duration,
            record,
        } => {
            let loaded = load_scenario(scenario, over)?;
            let report = loaded.scenario.compatibility()?;
            if !report.all_passed() {
                return Err(ScenarioError::Incompatible(report).into());
            }
            let period = loaded.scenario.controller.control_period;
            if !(*state_rate > 0.0) {
                return Err(CliError::Usage("--state-rate must be > 0".into()));
            }
            let state_every = (1.0 / (state_rate * period)).round().max(1.0) as u64;
            let config = ServerConfig {
                addr: SocketAddr::new(*bind, over.port().value),
                loop_options: LoopOptions {
                    pacing: loaded.settings.pace.value,
                    state_every,
                    max_ticks: duration.map(|d| (d / period).round() as u64),
                    start_mission: *start_mission,
                    ..LoopOptions::default()
                },
                transcript: record.clone(),
                ..ServerConfig::local(0)
            };
            let session = Session::new(&loaded.scenario)?;
            let handle = serve(session, config)?;
            writeln!(out, "{}: {}", loaded.scenario.name, loaded.settings).map_err(CliError::io("stdout"))?;
            writeln!(out, "listening on {}", handle.local_addr()).map_err(CliError::io("stdout"))?;
            out.flush().map_err(CliError::io("stdout"))?;
            let stats = handle.wait()?;
            writeln!(
                out,
                "stopped after {} ticks; max tick lateness {:.1} ms; {} slow clients dropped",
                stats.ticks,
                stats.max_lateness * 1e3,
                stats.dropped_clients
            )
            .map_err(CliError::io("stdout"))?;
            Ok(EXIT_OK)
        }
        Command::Replay {
            transcript,
            bind,
            speed,
            wait_for,
        } => {
            let messages = read_transcript(transcript)?;
            let speed = if *speed == 0.0 { f64::INFINITY } else { *speed };
            if !(speed > 0.0) {
                return Err(CliError::Usage("--speed must be >= 0".into()));
            }
            let config = ReplayConfig {
                addr: SocketAddr::new(*bind, over.port().value),
                speed,
                wait_for_clients: *wait_for,
                ..ReplayConfig::local(0, speed)
            };
            let n = messages.len();
            let handle = replay(messages, config)?;
            writeln!(out, "replaying {n} messages on {}", handle.local_addr()).map_err(CliError::io("stdout"))?;
            out.flush().map_err(CliError::io("stdout"))?;
            handle.wait()?;
            Ok(EXIT_OK)
        }
        Command::Summarize {
            log,
            params,
            bin_width,
        } => summarize(log, params, *bin_width, over, out),
    }
}

pub fn print_report(report: &CompatibilityReport<f64>, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "compatibility:")?;
    for v in &report.verdicts {
        writeln!(
            out,
            "  [{}] {}: {:.3} {} (limit {:.3} {})",
            if v.passed { "pass" } else { "FAIL" },
            v.rule,
            v.measured.value(),
            v.measured.unit(),
            v.limit.value(),
            v.limit.unit()
        )?;
    }
    Ok(())
}

fn check(path: &Path, over: &Overrides, out: &mut dyn Write) -> Result<i32, CliError> {
    let loaded = load_scenario(path, over)?;
    let s = &loaded.scenario;
    let fb = buoyant_force(&s.platform).map_err(ScenarioError::from)?;
    let wmax = max_total_weight(&s.platform).map_err(ScenarioError::from)?;
    let sf = structural_safety_factor(&s.structure).map_err(ScenarioError::from)?;
    let report = s.compatibility()?;
    let io = CliError::io("stdout");
    let mut text = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(text, "scenario {} ({})", s.name, loaded.path.display());
    let _ = writeln!(text, "settings: {}", loaded.settings);
    let _ = writeln!(text, "buoyant force:     {:.1} {}", fb.value(), fb.unit());
    let _ = writeln!(text, "max total weight:  {:.1} {}", wmax.value(), wmax.unit());
    let _ = writeln!(text, "structural S.F.:   {sf:.2}");
    out.write_all(text.as_bytes()).map_err(io)?;
    print_report(&report, out).map_err(CliError::io("stdout"))?;
    let passed = report.all_passed();
    writeln!(out, "{}", if passed { "all checks passed" } else { "compatibility check failed" })
        .map_err(CliError::io("stdout"))?;
    Ok(if passed { EXIT_OK } else { EXIT_INCOMPATIBLE })
}

fn run(
    path: &Path,
    over: &Overrides,
    run_id: Option<&str>,
    transcript: bool,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let loaded = load_scenario(path, over)?;
    let scenario = &loaded.scenario;
    let mission = run_mission(scenario)?;
    let run_id = run_id.map_or_else(|| default_run_id(&scenario.config_hash()), str::to_owned);
    let dir = over.out().value;
    let (manifest, manifest_path) = write_run(&dir, &loaded, &mission, &run_id, transcript)?;

    let w = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(CliError::io("stdout"));
    w(out, format!("{}: {}", scenario.name, loaded.settings))?;
    let code = match &mission.outcome {
        MissionOutcome::Completed { time } => {
            w(out, format!("mission completed at t = {time:.1} s"))?;
            EXIT_OK
        }
        MissionOutcome::TimedOut { time } => {
            w(out, format!("warning: mission still running at t = {time:.1} s (max_duration)"))?;
            EXIT_OK
        }
        MissionOutcome::Faulted(f) => {
            w(
                out,
                format!(
                    "FAULT at t = {:.1} s: {} (depth {:.2} m, line out {:.2} m)",
                    f.time, f.reason, f.depth, f.line_out
                ),
            )?;
            EXIT_FAULT
        }
    };
    w(out, format!("{} records, {} profiles", manifest.records, manifest.profiles))?;
    for s in &manifest.skipped_summaries {
        w(out, format!("no summary for {}: {}", s.parameter, s.reason))?;
    }
    w(out, format!("manifest: {}", manifest_path.display()))?;
    Ok(code)
}

fn summarize(
    log: &Path,
    params: &[String],
    bin_width: f64,
    over: &Overrides,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let records = read_log(log)?;
    let params: Vec<String> = if params.is_empty() {
        let mut all: Vec<String> = records.iter().flat_map(|r| r.values.keys().cloned()).collect();
        all.sort();
        all.dedup();
        all
    } else {
        params.to_vec()
    };
    if params.is_empty() {
        return Err(CliError::Usage(format!("{}: no parameters to summarize", log.display())));
    }
    let out_dir = over.out();
    let stem = log
        .file_name()
        .map(|n| n.to_string_lossy().trim_end_matches(".ndjson").trim_end_matches(".log").to_string())
        .unwrap_or_else(|| "log".into());
    for p in &params {
        let summary = depth_normalized_summary(&records, p, bin_width)
            .map_err(|e| CliError::Usage(format!("{}: {e}", log.display())))?;
        if out_dir.source == Source::Default {
            write_summary_csv(&summary, &mut *out)?;
        } else {
            std::fs::create_dir_all(&out_dir.value).map_err(CliError::io(&out_dir.value))?;
            let path = out_dir.value.join(format!("{stem}.summary.{p}.csv"));
            let tmp = path.with_extension("csv.tmp");
            let file = std::fs::File::create(&tmp).map_err(CliError::io(&tmp))?;
            write_summary_csv(&summary, file)?;
            std::fs::rename(&tmp, &path).map_err(CliError::io(&path))?;
            writeln!(out, "wrote {}", path.display()).map_err(CliError::io("stdout"))?;
        }
    }
    Ok(EXIT_OK)
}
