//! A running simulation: plant, controller, vehicle and mission advanced
//! together one control period at a time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asv::{advance_asv_at, ASVModel};
use crate::controller::{ControlInput, ControllerMode, ControllerState, StepDirection, WinchController};
use crate::datalog::SampleRecord;
use crate::hydro::{self, PlantState, RelayCommand, SimError};
use crate::mission::{AsvGoal, MissionEvent, MissionExecutor, MissionStatus, Phase};
use crate::scenario::{whole_ratio, Scenario, ScenarioError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorCommand {
    SetTargetDepth { depth: f64 },
    ManualStep {
        direction: StepDirection,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_line: Option<f64>,
    },
    SetUnderway {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        setpoint: Option<f64>,
    },
    StartMission,
    Pause,
    Resume,
    AckFault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandOutcome {
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl CommandOutcome {
    fn ok() -> Self {
        Self {
            accepted: true,
            reason: None,
            warning: None,
        }
    }

    fn rejected(reason: impl Into<String>) -> Self {
        Self {
            accepted: false,
            reason: Some(reason.into()),
            warning: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultReport {
    pub time: f64,
    pub reason: String,
    pub depth: f64,
    pub line_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Sample(SampleRecord),
    ModeChange {
        time: f64,
        from: ControllerMode,
        to: ControllerMode,
    },
    Fault(FaultReport),
    Mission(MissionEvent),
}

/// One row per control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub lat: f64,
    pub lon: f64,
    pub asv_speed: f64,
    pub line_out: f64,
    pub probe_depth: f64,
    pub measured_depth: f64,
    pub relay: RelayCommand,
    pub mode: ControllerMode,
    pub target_depth: Option<f64>,
}

/// Everything a client needs to draw the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub time: f64,
    pub plant: PlantState<f64>,
    pub measured_depth: f64,
    pub controller: ControllerState<f64>,
    pub asv: ASVModel,
    pub mission_status: MissionStatus,
    pub mission_phase: Phase,
    pub spool_capacity: f64,
    pub deadband: f64,
}

pub struct Session {
    pub scenario: Scenario,
    pub plant: PlantState<f64>,
    pub controller: WinchController<f64>,
    pub asv: ASVModel,
    pub mission: MissionExecutor,
    rng: ChaCha8Rng,
    tick: u64,
    steps_per_tick: u64,
    ticks_per_sample: u64,
    measured_depth: f64,
    asv_speed: f64,
    goal: Option<AsvGoal>,
    pending: Vec<SessionEvent>,
    last_sample_time: Option<f64>,
}

impl Session {
    pub fn new(scenario: &Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let period = scenario.controller.control_period;
        let steps_per_tick = whole_ratio(period, scenario.dt).expect("validated");
        let ticks_per_sample = whole_ratio(scenario.probe.sample_period, period).expect("validated");
        let plant = PlantState::hanging(scenario.initial_line_out, scenario.asv.position);
        Ok(Self {
            scenario: scenario.clone(),
            measured_depth: plant.probe_depth,
            plant,
            controller: WinchController::new(scenario.controller.clone()),
            asv: scenario.asv.clone(),
            mission: MissionExecutor::new(scenario.mission.clone()),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            tick: 0,
            steps_per_tick,
            ticks_per_sample,
            asv_speed: 0.0,
            goal: None,
            pending: Vec::new(),
            last_sample_time: None,
        })
    }

    /// Simulation time of the next tick, s.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.controller.control_period
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn control_period(&self) -> f64 {
        self.scenario.controller.control_period
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            time: self.time(),
            plant: self.plant.clone(),
            measured_depth: self.measured_depth,
            controller: self.controller.state.clone(),
            asv: self.asv.clone(),
            mission_status: self.mission.status,
            mission_phase: self.mission.phase,
            spool_capacity: self.scenario.winch.spool_capacity,
            deadband: self.scenario.controller.deadband,
        }
    }

    /// Apply an operator command between ticks. Conflicting commands are
    /// last-writer-wins.
    pub fn apply_command(&mut self, cmd: &OperatorCommand) -> CommandOutcome {
        let now = self.time();
        let before = self.controller.mode();
        let outcome = match cmd {
            OperatorCommand::SetTargetDepth { depth } => {
                match self.controller.command_target_depth(*depth, &self.scenario.winch) {
                    Ok(()) => CommandOutcome::ok(),
                    Err(e) => CommandOutcome::rejected(e.to_string()),
                }
            }
            OperatorCommand::ManualStep { direction, step_line } => {
                match self.controller.manual_step(*direction, *step_line) {
                    Ok((report, warning)) => {
                        let mut o = CommandOutcome::ok();
                        if let Some(w) = warning {
                            o.warning = Some(format!(
                                "{w:?}: requested {} m, applied {} m",
                                report.requested, report.applied
                            ));
                        }
                        o
                    }
                    Err(e) => CommandOutcome::rejected(e.to_string()),
                }
            }
            OperatorCommand::SetUnderway { setpoint } => match self.controller.set_underway(*setpoint) {
                Ok(()) => CommandOutcome::ok(),
                Err(e) => CommandOutcome::rejected(e.to_string()),
            },
            OperatorCommand::AckFault => {
                let mut o = CommandOutcome::ok();
                if let Some(w) = self.controller.acknowledge_fault() {
                    o.warning = Some(format!("{w:?}"));
                }
                o
            }
            OperatorCommand::StartMission => match self.mission.start(now) {
                Ok(events) => {
                    self.pending.extend(events.into_iter().map(SessionEvent::Mission));
                    CommandOutcome::ok()
                }
                Err(e) => CommandOutcome::rejected(e),
            },
            OperatorCommand::Pause => match self.mission.pause(now, "operator") {
                Ok(ev) => {
                    self.goal = None;
                    self.pending.push(SessionEvent::Mission(ev));
                    CommandOutcome::ok()
                }
                Err(e) => CommandOutcome::rejected(e),
            },
            OperatorCommand::Resume => match self.mission.resume(now, &self.controller) {
                Ok(ev) => {
                    self.pending.push(SessionEvent::Mission(ev));
                    CommandOutcome::ok()
                }
                Err(e) => CommandOutcome::rejected(e),
            },
        };
        let after = self.controller.mode();
        if after != before {
            self.pending.push(SessionEvent::ModeChange {
                time: now,
                from: before,
                to: after,
            });
        }
        outcome
    }

    fn sample(&mut self, time: f64) -> Result<SampleRecord, SimError> {
        let all = hydro::sample_fields(
            &self.scenario.environment,
            self.asv.position,
            self.plant.probe_depth,
            time,
            self.scenario.seed,
        )?;
        let values = self
            .scenario
            .probe
            .parameter_list
            .iter()
            .map(|p| (p.clone(), all[p]))
            .collect();
        Ok(SampleRecord {
            timestamp: time,
            lat: self.asv.position.lat,
            lon: self.asv.position.lon,
            depth: self.measured_depth,
            mode: self.controller.mode(),
            values,
        })
    }

    /// Advance one control period. Returns the events of this tick, ending
    /// with the trajectory row at the tick's start time.
    pub fn tick(&mut self) -> Result<(Vec<SessionEvent>, TrajectoryPoint), SimError> {
        let t = self.time();
        let mut events = std::mem::take(&mut self.pending);
        let mode_before = self.controller.mode();

        self.measured_depth = hydro::measure_depth(&self.plant, &self.scenario.probe, &mut self.rng);
        self.controller.control_step(ControlInput {
            fused_depth: self.measured_depth,
            line_out: self.plant.line_out,
            asv_fix: self.asv.position,
            time: t,
        });

        if self.mission.status == MissionStatus::Running {
            let (goal, mission_events) =
                self.mission
                    .update(t, &mut self.controller, &self.scenario.winch, &self.asv);
            self.goal = goal;
            events.extend(mission_events.into_iter().map(SessionEvent::Mission));
        } else {
            self.goal = None;
        }

        let mode = self.controller.mode();
        if mode != mode_before {
            events.push(SessionEvent::ModeChange {
                time: t,
                from: mode_before,
                to: mode,
            });
        }
        let new_fault = mode == ControllerMode::Fault && mode_before != ControllerMode::Fault;
        if new_fault {
            events.push(SessionEvent::Fault(FaultReport {
                time: t,
                reason: self.controller.state.fault_reason.clone().unwrap_or_default(),
                depth: self.measured_depth,
                line_out: self.plant.line_out,
            }));
        }
        if self.tick % self.ticks_per_sample == 0 || new_fault {
            if self.last_sample_time.map_or(true, |last| t > last) {
                events.push(SessionEvent::Sample(self.sample(t)?));
                self.last_sample_time = Some(t);
            }
        }

        let point = TrajectoryPoint {
            time: t,
            lat: self.asv.position.lat,
            lon: self.asv.position.lon,
            asv_speed: self.asv_speed,
            line_out: self.plant.line_out,
            probe_depth: self.plant.probe_depth,
            measured_depth: self.measured_depth,
            relay: self.controller.relay(),
            mode,
            target_depth: self.controller.state.target_depth,
        };

        let dt = self.scenario.dt;
        self.plant.asv_position = self.asv.position;
        for k in 0..self.steps_per_tick {
            let relay = self.controller.relay_at(t + k as f64 * dt);
            self.plant = hydro::step(
                &self.plant,
                relay,
                &self.scenario.environment,
                &self.scenario.probe,
                &self.scenario.winch,
                dt,
            )?;
        }

        let period = self.control_period();
        match self.goal {
            Some(goal) => {
                let (asv, speed) = advance_asv_at(&self.asv, goal.to, goal.speed, period);
                self.asv = asv;
                self.asv_speed = speed;
            }
            None => self.asv_speed = 0.0,
        }
        self.plant.asv_speed = self.asv_speed;
        self.plant.asv_heading = self.asv.heading;
        self.tick += 1;
        Ok((events, point))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MissionOutcome {
    Completed { time: f64 },
    Faulted(FaultReport),
    TimedOut { time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionRun {
    pub outcome: MissionOutcome,
    pub samples: Vec<SampleRecord>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Non-sample events in order.
    pub events: Vec<SessionEvent>,
}

/// Run the scenario's mission headless until it completes, faults or hits
/// `max_duration`.
pub fn run_mission(scenario: &Scenario) -> Result<MissionRun, ScenarioError> {
    let report = scenario.compatibility()?;
    if !report.all_passed() {
        return Err(ScenarioError::Incompatible(report));
    }
    let mut session = Session::new(scenario)?;
    let start = session.apply_command(&OperatorCommand::StartMission);
    debug_assert!(start.accepted);

    let mut samples = Vec::new();
    let mut trajectory = Vec::new();
    let mut other = Vec::new();
    let mut fault = None;
    let outcome = loop {
        let (events, point) = session.tick()?;
        trajectory.push(point);
        for e in events {
            match e {
                SessionEvent::Sample(s) => samples.push(s),
                SessionEvent::Fault(f) => {
                    fault = Some(f.clone());
                    other.push(SessionEvent::Fault(f));
                }
                e => other.push(e),
            }
        }
        match session.mission.status {
            MissionStatus::Completed => break MissionOutcome::Completed { time: session.time() },
            MissionStatus::Faulted => {
                break MissionOutcome::Faulted(fault.clone().expect("fault event precedes faulted status"))
            }
            _ => {}
        }
        if session.time() >= scenario.max_duration {
            break MissionOutcome::TimedOut { time: session.time() };
        }
    };
    Ok(MissionRun {
        outcome,
        samples,
        trajectory,
        events: other,
    })
}
