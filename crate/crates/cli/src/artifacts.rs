//! Run outputs. Every file is written under a temporary name and renamed
//! into place; the manifest goes last, so its presence means the run's
//! artifacts are complete.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aps_core::datalog::{
    assemble_profiles, depth_normalized_summary, write_csv, write_profiles_csv, write_summary_csv, DataLog,
    DEFAULT_BIN_WIDTH,
};
use aps_core::session::{MissionOutcome, MissionRun, Session};
use aps_telemetry::{record_session, LoopOptions};

use crate::settings::{Loaded, ScenarioSettings};
use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactEntry {
    pub role: String,
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedSummary {
    pub parameter: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub scenario: String,
    pub scenario_file: String,
    pub scenario_sha256: String,
    pub config_hash: String,
    pub run_id: String,
    pub seed: u64,
    pub dt: f64,
    pub settings: ScenarioSettings,
    pub outcome: MissionOutcome,
    pub records: usize,
    pub profiles: usize,
    pub artifacts: Vec<ArtifactEntry>,
    pub skipped_summaries: Vec<SkippedSummary>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `<scenario>_<seed>_<runid>`
pub fn base_name(scenario: &str, seed: u64, run_id: &str) -> String {
    format!("{scenario}_{seed}_{run_id}")
}

pub fn default_run_id(config_hash: &str) -> String {
    config_hash.chars().take(12).collect()
}

struct Writer<'a> {
    dir: &'a Path,
    base: &'a str,
    entries: Vec<ArtifactEntry>,
}

impl Writer<'_> {
    fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}", self.base))
    }

    /// Write via a temporary file and rename into place.
    fn put<F>(&mut self, role: &str, suffix: &str, fill: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    {
        let path = self.path(suffix);
        let tmp = self.path(&format!("{suffix}.tmp"));
        let file = File::create(&tmp).map_err(CliError::io(&tmp))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush().map_err(CliError::io(&tmp))?;
        drop(w);
        std::fs::rename(&tmp, &path).map_err(CliError::io(&path))?;
        let bytes = std::fs::read(&path).map_err(CliError::io(&path))?;
        self.entries.push(ArtifactEntry {
            role: role.to_string(),
            file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(path)
    }
}

/// Write every artifact of `run` into `dir` and return the manifest.
pub fn write_run(
    dir: &Path,
    loaded: &Loaded,
    run: &MissionRun,
    run_id: &str,
    transcript: bool,
) -> Result<(Manifest, PathBuf), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let scenario = &loaded.scenario;
    let base = base_name(&scenario.name, scenario.seed, run_id);
    let mut w = Writer {
        dir,
        base: &base,
        entries: Vec::new(),
    };
    let params = scenario.probe.parameter_list.clone();

    w.put("log", ".log.ndjson", |out| {
        let mut log = DataLog::new(out, Some(params.clone())).with_flush_every(usize::MAX);
        for r in &run.samples {
            log.append_record(r)?;
        }
        log.flush()?;
        Ok(())
    })?;
    w.put("table", ".csv", |out| Ok(write_csv(&run.samples, out)?))?;
    let profiles = assemble_profiles(&run.samples);
    w.put("profiles", ".profiles.csv", |out| Ok(write_profiles_csv(&profiles, out)?))?;

    let mut skipped = Vec::new();
    let mut sorted = params.clone();
    sorted.sort();
    for p in &sorted {
        match depth_normalized_summary(&run.samples, p, DEFAULT_BIN_WIDTH) {
            Ok(summary) => {
                w.put("summary", &format!(".summary.{p}.csv"), |out| Ok(write_summary_csv(&summary, out)?))?;
            }
            Err(e) => skipped.push(SkippedSummary {
                parameter: p.clone(),
                reason: e.to_string(),
            }),
        }
    }

    w.put("trajectory", ".trajectory.csv", |out| {
        let mut c = csv::Writer::from_writer(out);
        for row in &run.trajectory {
            c.serialize(row).map_err(aps_core::datalog::LogError::from)?;
        }
        c.flush().map_err(CliError::io("trajectory"))?;
        Ok(())
    })?;
    w.put("events", ".events.ndjson", |out| {
        for e in &run.events {
            serde_json::to_writer(&mut *out, e).expect("event serializes");
            out.write_all(b"\n").map_err(CliError::io("events"))?;
        }
        Ok(())
    })?;

    if transcript {
        let mut session = Session::new(scenario)?;
        let options = LoopOptions {
            start_mission: true,
            stop_when_finished: true,
            max_ticks: Some((scenario.max_duration / scenario.controller.control_period).ceil() as u64),
            ..LoopOptions::default()
        };
        w.put("transcript", ".transcript.ndjson", |out| {
            let file = out.get_ref().try_clone().map_err(CliError::io("transcript"))?;
            record_session(&mut session, &options, BufWriter::new(file))
                .map_err(aps_core::scenario::ScenarioError::from)?;
            Ok(())
        })?;
    }

    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: scenario.name.clone(),
        scenario_file: loaded.path.display().to_string(),
        scenario_sha256: sha256_hex(loaded.text.as_bytes()),
        config_hash: scenario.config_hash(),
        run_id: run_id.to_string(),
        seed: scenario.seed,
        dt: scenario.dt,
        settings: loaded.settings.clone(),
        outcome: run.outcome.clone(),
        records: run.samples.len(),
        profiles: profiles.len(),
        artifacts: w.entries.clone(),
        skipped_summaries: skipped,
    };
    let path = w.put("manifest", ".manifest.json", |out| {
        serde_json::to_writer_pretty(&mut *out, &manifest).expect("manifest serializes");
        out.write_all(b"\n").map_err(CliError::io("manifest"))?;
        Ok(())
    })?;
    Ok((manifest, path))
}
