//! Scenario documents.
//!
//! A scenario is one TOML file holding every spec, the environment, the
//! mission and the run settings. Unknown keys are errors. Winch speeds are
//! written in m/min, as on manufacturer data sheets.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

use crate::asv::ASVModel;
use crate::controller::{ControlError, ControllerConfig};
use crate::field::FieldModel;
use crate::geo::GeoPoint;
use crate::hydro::{Bathymetry, Environment, Obstruction, SimError};
use crate::mission::{Cast, Leg, MissionPlan};
use crate::specs::{
    check_probe_compatibility, CompatibilityReport, PlatformSpec, ProbeSpec, SpecError, StructuralCheck, WinchSpec,
};
use crate::units::{m_per_min_to_m_per_s, m_per_s_to_m_per_min};

pub const SCENARIO_VERSION: u32 = 1;

/// The survey site used by the default scenario.
pub const LAKE_HERTEL: GeoPoint = GeoPoint::new(45.54437, -73.15212);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pacing {
    /// Ticks follow the wall clock. Used when serving.
    #[default]
    Realtime,
    /// As fast as possible. Headless runs always use this.
    Fast,
}

impl std::str::FromStr for Pacing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "realtime" => Ok(Pacing::Realtime),
            "fast" => Ok(Pacing::Fast),
            other => Err(format!("unknown pacing `{other}` (expected realtime or fast)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WinchFile {
    pub max_payload: f64,
    pub payout_speed_m_per_min: f64,
    pub retrieval_speed_m_per_min: f64,
    pub spool_capacity: f64,
    pub operating_voltage: f64,
    #[serde(default = "default_dwell")]
    pub min_relay_dwell: f64,
}

fn default_dwell() -> f64 {
    crate::specs::DEFAULT_MIN_RELAY_DWELL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformFile {
    pub pontoon_volume_each: f64,
    pub pontoon_count: u32,
    pub buoyancy_safety_factor: f64,
    pub dry_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentFile {
    pub water_density: f64,
    pub gravity: f64,
    pub bathymetry: Bathymetry<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obstructions: Vec<Obstruction<f64>>,
    pub fields: FieldModel,
}

/// Optional overrides of the controller defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deadband: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hysteresis: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stall_window: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stall_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shallow_setpoint: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manual_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub pacing: Pacing,
    /// Tether out at the start; the probe hangs on it.
    #[serde(default = "default_initial_line")]
    pub initial_line_out: f64,
    /// Headless runs stop here if the mission has not finished, s.
    #[serde(default = "default_max_duration")]
    pub max_duration: f64,
    pub probe: ProbeSpec<f64>,
    pub winch: WinchFile,
    pub platform: PlatformFile,
    pub structure: StructuralCheck<f64>,
    pub asv: ASVModel,
    #[serde(default)]
    pub controller: ControllerFile,
    pub environment: EnvironmentFile,
    pub mission: MissionPlan,
}

fn default_dt() -> f64 {
    crate::hydro::DEFAULT_DT
}

fn default_initial_line() -> f64 {
    0.25
}

fn default_max_duration() -> f64 {
    3600.0
}

/// Fully resolved scenario in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub pacing: Pacing,
    pub initial_line_out: f64,
    pub max_duration: f64,
    pub probe: ProbeSpec<f64>,
    pub winch: WinchSpec<f64>,
    pub platform: PlatformSpec<f64>,
    pub structure: StructuralCheck<f64>,
    pub asv: ASVModel,
    pub controller: ControllerConfig<f64>,
    pub environment: Environment<f64>,
    pub mission: MissionPlan,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported scenario version {0} (expected {SCENARIO_VERSION})")]
    Version(u32),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("probe is not compatible with the winch and platform")]
    Incompatible(CompatibilityReport<f64>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ScenarioError::Parse {
                path: origin.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn resolve(&self) -> Result<Scenario, ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        let winch = WinchSpec {
            max_payload: self.winch.max_payload,
            payout_speed: m_per_min_to_m_per_s(self.winch.payout_speed_m_per_min),
            retrieval_speed: m_per_min_to_m_per_s(self.winch.retrieval_speed_m_per_min),
            spool_capacity: self.winch.spool_capacity,
            operating_voltage: self.winch.operating_voltage,
            min_relay_dwell: self.winch.min_relay_dwell,
        };
        let env = &self.environment;
        let platform = PlatformSpec {
            pontoon_volume_each: self.platform.pontoon_volume_each,
            pontoon_count: self.platform.pontoon_count,
            water_density: env.water_density,
            gravity: env.gravity,
            buoyancy_safety_factor: self.platform.buoyancy_safety_factor,
            dry_mass: self.platform.dry_mass,
        };
        let mut controller = ControllerConfig::for_winch(&winch);
        let c = &self.controller;
        let overrides = [
            (&mut controller.deadband, c.deadband),
            (&mut controller.hysteresis, c.hysteresis),
            (&mut controller.stall_window, c.stall_window),
            (&mut controller.stall_epsilon, c.stall_epsilon),
            (&mut controller.slack_tolerance, c.slack_tolerance),
            (&mut controller.control_period, c.control_period),
            (&mut controller.shallow_setpoint, c.shallow_setpoint),
            (&mut controller.manual_step, c.manual_step),
        ];
        for (slot, v) in overrides {
            if let Some(v) = v {
                *slot = v;
            }
        }
        Ok(Scenario {
            name: self.name.clone(),
            seed: self.seed,
            dt: self.dt,
            pacing: self.pacing,
            initial_line_out: self.initial_line_out,
            max_duration: self.max_duration,
            probe: self.probe.clone(),
            winch,
            platform,
            structure: self.structure.clone(),
            asv: self.asv.clone(),
            controller,
            environment: Environment {
                water_density: env.water_density,
                gravity: env.gravity,
                bathymetry: env.bathymetry.clone(),
                obstructions: env.obstructions.clone(),
                fields: env.fields.clone(),
            },
            mission: self.mission.clone(),
        })
    }
}

/// Whole multiples only: `ratio(0.1, 0.01) == Some(10)`.
pub fn whole_ratio(num: f64, den: f64) -> Option<u64> {
    let r = (num / den).round();
    (r >= 1.0 && (r * den - num).abs() <= 1e-9 * num.abs().max(1.0)).then_some(r as u64)
}

impl Scenario {
    /// Parse only; see [`Scenario::validate`].
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        ScenarioFile::parse(text, origin)?.resolve()
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Every module invariant that can be checked before a run.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        self.probe.validate()?;
        self.winch.validate()?;
        self.platform.validate()?;
        self.structure.validate()?;
        self.asv.validate().map_err(ScenarioError::Invalid)?;
        self.environment.validate()?;
        self.controller.validate()?;
        self.mission
            .validate(&self.probe, &self.winch)
            .map_err(ScenarioError::Invalid)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidTimestep(self.dt).into());
        }
        if whole_ratio(self.controller.control_period, self.dt).is_none() {
            return invalid(format!(
                "control period {} s is not a whole multiple of dt {} s",
                self.controller.control_period, self.dt
            ));
        }
        if whole_ratio(self.probe.sample_period, self.controller.control_period).is_none() {
            return invalid(format!(
                "sample period {} s is not a whole multiple of the control period {} s",
                self.probe.sample_period, self.controller.control_period
            ));
        }
        if !(self.max_duration > 0.0) {
            return invalid("max_duration must be > 0".into());
        }
        let floor = self.environment.effective_floor(&self.asv.position);
        if !(self.initial_line_out >= 0.0 && self.initial_line_out <= self.winch.spool_capacity.min(floor)) {
            return invalid(format!(
                "initial_line_out {} outside [0, {}]",
                self.initial_line_out,
                self.winch.spool_capacity.min(floor)
            ));
        }
        for p in &self.probe.parameter_list {
            if !self.environment.fields.parameters.contains_key(p) {
                return invalid(format!("probe parameter `{p}` has no field in the environment"));
            }
        }
        Ok(())
    }

    pub fn compatibility(&self) -> Result<CompatibilityReport<f64>, ScenarioError> {
        Ok(check_probe_compatibility(&self.probe, &self.winch, &self.platform)?)
    }

    /// SHA-256 of the canonical JSON form of the resolved scenario.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn lake_hertel() -> Self {
        lake_hertel_file().resolve().expect("builtin scenario resolves")
    }

    pub fn vegetation() -> Self {
        vegetation_file().resolve().expect("builtin scenario resolves")
    }
}

/// Start 60 m west of the station, sample underway on the way in, profile
/// the water column at four depths, and return.
pub fn lake_hertel_file() -> ScenarioFile {
    let station = LAKE_HERTEL;
    let start = station.displaced(-60.0, -20.0);
    let probe = ProbeSpec::<f64>::exo1();
    let winch = WinchSpec::<f64>::trac_fisherman_25();
    let platform = PlatformSpec::<f64>::twin_pontoon();
    ScenarioFile {
        version: SCENARIO_VERSION,
        name: "lake_hertel".into(),
        seed: 1,
        dt: crate::hydro::DEFAULT_DT,
        pacing: Pacing::Realtime,
        initial_line_out: default_initial_line(),
        max_duration: default_max_duration(),
        probe,
        winch: WinchFile {
            max_payload: winch.max_payload,
            payout_speed_m_per_min: 21.336,
            retrieval_speed_m_per_min: 19.812,
            spool_capacity: winch.spool_capacity,
            operating_voltage: winch.operating_voltage,
            min_relay_dwell: winch.min_relay_dwell,
        },
        platform: PlatformFile {
            pontoon_volume_each: platform.pontoon_volume_each,
            pontoon_count: platform.pontoon_count,
            buoyancy_safety_factor: platform.buoyancy_safety_factor,
            dry_mass: platform.dry_mass,
        },
        structure: StructuralCheck::aluminium_frame(),
        asv: ASVModel {
            max_speed: 1.5,
            position: start,
            heading: 0.0,
            station_keep_radius: 2.0,
        },
        controller: ControllerFile::default(),
        environment: EnvironmentFile {
            water_density: platform.water_density,
            gravity: platform.gravity,
            bathymetry: Bathymetry::Bowl {
                center: station,
                center_depth: 12.0,
                shore_depth: 0.5,
                radius: 400.0,
            },
            obstructions: vec![],
            fields: FieldModel::stratified_lake(station),
        },
        mission: MissionPlan {
            legs: vec![
                Leg::Transit {
                    to: station,
                    speed: 1.0,
                },
                Leg::Station {
                    hold_position: station,
                    casts: [2.0, 4.0, 6.0, 8.0]
                        .iter()
                        .map(|&target_depth| Cast {
                            target_depth,
                            dwell: 10.0,
                        })
                        .collect(),
                },
                Leg::Transit { to: start, speed: 1.0 },
            ],
        },
    }
}

/// A weed bed topping out at 4 m under the station; the single 8 m cast
/// cannot complete.
pub fn vegetation_file() -> ScenarioFile {
    let mut f = lake_hertel_file();
    f.name = "vegetation".into();
    let station = LAKE_HERTEL;
    f.environment.obstructions.push(Obstruction {
        center: station,
        radius: 15.0,
        top_depth: 4.0,
    });
    f.mission.legs = vec![
        Leg::Transit {
            to: station,
            speed: 1.0,
        },
        Leg::Station {
            hold_position: station,
            casts: vec![Cast {
                target_depth: 8.0,
                dwell: 10.0,
            }],
        },
    ];
    f
}

/// Winch speeds as written in a scenario file.
pub fn winch_speeds_m_per_min(w: &WinchSpec<f64>) -> (f64, f64) {
    (m_per_s_to_m_per_min(w.payout_speed), m_per_s_to_m_per_min(w.retrieval_speed))
}
