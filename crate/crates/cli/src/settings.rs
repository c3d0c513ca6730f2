//! Effective settings. Precedence: flag, then environment, then the
//! scenario file, then the built-in default.

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};

use aps_core::scenario::{Pacing, Scenario, ScenarioError, ScenarioFile};
use aps_telemetry::DEFAULT_PORT;

use crate::CliError;

pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Flag,
    Env,
    File,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::Env => "env",
            Source::File => "file",
            Source::Default => "default",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sourced<T> {
    pub value: T,
    pub source: Source,
}

/// Values given on the command line or in the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<(u64, Source)>,
    pub dt: Option<(f64, Source)>,
    pub pace: Option<(Pacing, Source)>,
    pub out: Option<(PathBuf, Source)>,
    pub port: Option<(u16, Source)>,
}

fn source_of(matches: &ArgMatches, id: &str) -> Source {
    let mut m = matches;
    loop {
        match m.value_source(id) {
            Some(ValueSource::CommandLine) => return Source::Flag,
            Some(ValueSource::EnvVariable) => return Source::Env,
            _ => {}
        }
        match m.subcommand() {
            Some((_, sub)) => m = sub,
            None => return Source::Default,
        }
    }
}

impl Overrides {
    pub fn from_matches(matches: &ArgMatches, g: &crate::GlobalArgs) -> Self {
        let with = |id: &str| source_of(matches, id);
        Self {
            seed: g.seed.map(|v| (v, with("seed"))),
            dt: g.dt.map(|v| (v, with("dt"))),
            pace: g.pace.map(|v| (v, with("pace"))),
            out: g.out.clone().map(|v| (v, with("out"))),
            port: g.port.map(|v| (v, with("port"))),
        }
    }

    pub fn out(&self) -> Sourced<PathBuf> {
        match &self.out {
            Some((v, s)) => Sourced { value: v.clone(), source: *s },
            None => Sourced {
                value: PathBuf::from(DEFAULT_OUT),
                source: Source::Default,
            },
        }
    }

    pub fn port(&self) -> Sourced<u16> {
        match self.port {
            Some((value, source)) => Sourced { value, source },
            None => Sourced {
                value: DEFAULT_PORT,
                source: Source::Default,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSettings {
    pub seed: Sourced<u64>,
    pub dt: Sourced<f64>,
    pub pace: Sourced<Pacing>,
}

impl fmt::Display for ScenarioSettings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed {} ({}), dt {} s ({}), pace {} ({})",
            self.seed.value,
            self.seed.source,
            self.dt.value,
            self.dt.source,
            match self.pace.value {
                Pacing::Realtime => "realtime",
                Pacing::Fast => "fast",
            },
            self.pace.source
        )
    }
}

pub struct Loaded {
    pub path: PathBuf,
    pub text: String,
    pub scenario: Scenario,
    pub settings: ScenarioSettings,
}

fn pick<T: Clone>(over: &Option<(T, Source)>, in_file: bool, file_value: T) -> Sourced<T> {
    match over {
        Some((v, s)) => Sourced {
            value: v.clone(),
            source: *s,
        },
        None => Sourced {
            value: file_value,
            source: if in_file { Source::File } else { Source::Default },
        },
    }
}

/// Read, apply overrides and validate.
pub fn load_scenario(path: &Path, over: &Overrides) -> Result<Loaded, CliError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| {
        CliError::Scenario(ScenarioError::Io {
            path: origin.clone(),
            source,
        })
    })?;
    let mut file = ScenarioFile::parse(&text, &origin)?;
    // Parsing succeeded, so this cannot fail.
    let table: toml::Table = toml::from_str(&text).unwrap_or_default();
    let settings = ScenarioSettings {
        seed: pick(&over.seed, table.contains_key("seed"), file.seed),
        dt: pick(&over.dt, table.contains_key("dt"), file.dt),
        pace: pick(&over.pace, table.contains_key("pacing"), file.pacing),
    };
    file.seed = settings.seed.value;
    file.dt = settings.dt.value;
    file.pacing = settings.pace.value;
    let scenario = file.resolve()?;
    scenario.validate()?;
    Ok(Loaded {
        path: path.to_owned(),
        text,
        scenario,
        settings,
    })
}
