//! Winch depth controller.
//!
//! A bang-bang regulator on fused probe depth drives a two-channel relay
//! (payout / off / retrieve). Relay changes respect a minimum dwell so the
//! winch never reverses directly. A stall monitor faults the controller if
//! the measured depth stops changing while the winch is running; the fault
//! holds the relay off until an operator acknowledges it.

use log::warn;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::hydro::RelayCommand;
use crate::scalar::Scalar;
use crate::specs::WinchSpec;

/// Slack on time comparisons so `n·period` lands on the intended tick.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Underway,
    Deploying,
    Holding,
    Retrieving,
    Fault,
    Idle,
}

impl fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerMode::Underway => "underway",
            ControllerMode::Deploying => "deploying",
            ControllerMode::Holding => "holding",
            ControllerMode::Retrieving => "retrieving",
            ControllerMode::Fault => "fault",
            ControllerMode::Idle => "idle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig<T> {
    /// Half-width of the hold band around the target, m.
    pub deadband: T,
    /// Extra error beyond the deadband needed to leave Holding, m.
    pub hysteresis: T,
    /// s
    pub min_relay_dwell: T,
    /// Seconds of unchanged depth under an active relay before faulting.
    pub stall_window: T,
    /// Depth change that counts as movement for the stall monitor, m.
    pub stall_epsilon: T,
    /// Paid-out line beyond the probe depth treated as slack being reeled in, m.
    pub slack_tolerance: T,
    /// s
    pub control_period: T,
    /// Depth at or above which the probe counts as stowed for transit, m.
    pub shallow_setpoint: T,
    /// Default line length for manual steps, m.
    pub manual_step: T,
    pub spool_capacity: T,
    pub payout_speed: T,
    pub retrieval_speed: T,
}

impl<T: Scalar> ControllerConfig<T> {
    pub fn for_winch(winch: &WinchSpec<T>) -> Self {
        Self {
            deadband: T::lit(0.05),
            hysteresis: T::lit(0.025),
            min_relay_dwell: winch.min_relay_dwell,
            stall_window: T::lit(5.0),
            stall_epsilon: T::lit(0.02),
            slack_tolerance: T::lit(0.1),
            control_period: T::lit(0.1),
            shallow_setpoint: T::lit(0.3),
            manual_step: T::lit(0.25),
            spool_capacity: winch.spool_capacity,
            payout_speed: winch.payout_speed,
            retrieval_speed: winch.retrieval_speed,
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let checks = [
            ("deadband", self.deadband),
            ("min_relay_dwell", self.min_relay_dwell),
            ("stall_window", self.stall_window),
            ("stall_epsilon", self.stall_epsilon),
            ("control_period", self.control_period),
            ("manual_step", self.manual_step),
            ("spool_capacity", self.spool_capacity),
            ("payout_speed", self.payout_speed),
            ("retrieval_speed", self.retrieval_speed),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > T::zero()) {
                return Err(ControlError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        for (name, v) in [
            ("hysteresis", self.hysteresis),
            ("slack_tolerance", self.slack_tolerance),
            ("shallow_setpoint", self.shallow_setpoint),
        ] {
            if !(v.is_finite() && v >= T::zero()) {
                return Err(ControlError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// One control-rate observation of the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInput<T> {
    /// Pressure-depth of the probe, m. The GPS fix only tags position.
    pub fused_depth: T,
    /// Estimated paid-out tether, m.
    pub line_out: T,
    pub asv_fix: GeoPoint,
    /// s
    pub time: T,
}

/// Open-loop timed run of the winch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualRun<T> {
    pub relay: RelayCommand,
    pub duration: T,
    /// Set once the relay actually engages.
    pub deadline: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualStepReport<T> {
    pub requested: T,
    pub applied: T,
    pub clipped: bool,
    /// Relay on-time, s.
    pub duration: T,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("controller is in fault ({0}); acknowledge the fault first")]
    FaultActive(String),
    #[error("target depth {target} m outside [0, {max}] m")]
    TargetOutOfRange { target: f64, max: f64 },
    #[error("manual step length must be > 0")]
    InvalidStep,
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlWarning {
    NotInFault,
    StepClipped,
    StepIsNoOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState<T> {
    pub mode: ControllerMode,
    pub target_depth: Option<T>,
    pub relay_out: RelayCommand,
    pub last_relay_change: Option<T>,
    /// Mean of the readings since the last detected movement, m.
    pub stall_reference_depth: T,
    pub stall_reference_time: T,
    pub stall_reference_samples: u32,
    pub fault_reason: Option<String>,
    pub underway_setpoint: Option<T>,
    pub manual: Option<ManualRun<T>>,
    pub last_input: Option<ControlInput<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinchController<T> {
    pub config: ControllerConfig<T>,
    pub state: ControllerState<T>,
}

impl<T: Scalar> WinchController<T> {
    pub fn new(config: ControllerConfig<T>) -> Self {
        Self {
            config,
            state: ControllerState {
                mode: ControllerMode::Idle,
                target_depth: None,
                relay_out: RelayCommand::Off,
                last_relay_change: None,
                stall_reference_depth: T::zero(),
                stall_reference_time: T::zero(),
                stall_reference_samples: 1,
                fault_reason: None,
                underway_setpoint: None,
                manual: None,
                last_input: None,
            },
        }
    }

    pub fn mode(&self) -> ControllerMode {
        self.state.mode
    }

    pub fn relay(&self) -> RelayCommand {
        self.state.relay_out
    }

    /// Relay as seen by the winch at `time`; timed manual pulses end at
    /// their deadline rather than at the next control tick.
    pub fn relay_at(&self, time: T) -> RelayCommand {
        match &self.state.manual {
            Some(ManualRun {
                deadline: Some(d), ..
            }) if time >= *d - T::lit(TIME_EPS) => RelayCommand::Off,
            _ => self.state.relay_out,
        }
    }

    fn now(&self) -> T {
        self.state.last_input.as_ref().map_or(T::zero(), |i| i.time)
    }

    fn current_depth(&self) -> T {
        self.state.last_input.as_ref().map_or(T::zero(), |i| i.fused_depth)
    }

    fn current_line(&self) -> T {
        self.state.last_input.as_ref().map_or(T::zero(), |i| i.line_out)
    }

    fn reject_in_fault(&self) -> Result<(), ControlError> {
        match self.state.mode {
            ControllerMode::Fault => Err(ControlError::FaultActive(
                self.state.fault_reason.clone().unwrap_or_default(),
            )),
            _ => Ok(()),
        }
    }

    fn clear_goals(&mut self) {
        self.state.target_depth = None;
        self.state.underway_setpoint = None;
        self.state.manual = None;
    }

    fn reset_stall_reference(&mut self) {
        self.state.stall_reference_depth = self.current_depth();
        self.state.stall_reference_time = self.now();
        self.state.stall_reference_samples = 1;
    }

    fn set_relay(&mut self, relay: RelayCommand, at: T) {
        if relay == self.state.relay_out {
            return;
        }
        let was_off = !self.state.relay_out.is_active();
        self.state.relay_out = relay;
        self.state.last_relay_change = Some(at);
        if was_off && relay.is_active() {
            self.reset_stall_reference();
        }
    }

    /// Request a relay state subject to the dwell floor. Reversals go
    /// through Off first. Returns the relay actually in effect.
    fn request_relay(&mut self, desired: RelayCommand, now: T) -> RelayCommand {
        let current = self.state.relay_out;
        if desired == current {
            return current;
        }
        let next = if current.is_active() && desired.is_active() {
            RelayCommand::Off
        } else {
            desired
        };
        let dwell_ok = self.state.last_relay_change.map_or(true, |t| {
            now - t >= self.config.min_relay_dwell - T::lit(TIME_EPS)
        });
        if dwell_ok {
            self.set_relay(next, now);
        }
        self.state.relay_out
    }

    fn force_off(&mut self, now: T) {
        self.set_relay(RelayCommand::Off, now);
    }

    /// Command closed-loop regulation to `target` metres.
    pub fn command_target_depth(&mut self, target: T, limits: &WinchSpec<T>) -> Result<(), ControlError> {
        self.reject_in_fault()?;
        if !(target >= T::zero() && target <= limits.spool_capacity) {
            return Err(ControlError::TargetOutOfRange {
                target: target.as_f64(),
                max: limits.spool_capacity.as_f64(),
            });
        }
        self.clear_goals();
        self.state.target_depth = Some(target);
        self.reset_stall_reference();
        let now = self.now();
        let error = target - self.current_depth();
        if error.abs() <= self.config.deadband {
            self.force_off(now);
            self.state.mode = ControllerMode::Holding;
            return Ok(());
        }
        let (desired, mode) = if error > T::zero() {
            (RelayCommand::Payout, ControllerMode::Deploying)
        } else {
            (RelayCommand::Retrieve, ControllerMode::Retrieving)
        };
        self.state.mode = mode;
        self.request_relay(desired, now);
        Ok(())
    }

    /// Retrieve until the probe is at or above `shallow_setpoint`, then
    /// hold it there for transit.
    pub fn set_underway(&mut self, shallow_setpoint: Option<T>) -> Result<(), ControlError> {
        self.reject_in_fault()?;
        let setpoint = shallow_setpoint.unwrap_or(self.config.shallow_setpoint);
        self.clear_goals();
        let now = self.now();
        if self.current_depth() <= setpoint {
            self.force_off(now);
            self.state.mode = ControllerMode::Underway;
        } else {
            self.state.underway_setpoint = Some(setpoint);
            self.state.mode = ControllerMode::Retrieving;
            self.request_relay(RelayCommand::Retrieve, now);
        }
        Ok(())
    }

    /// Open-loop step of `step_line` metres (default from config).
    pub fn manual_step(
        &mut self,
        direction: StepDirection,
        step_line: Option<T>,
    ) -> Result<(ManualStepReport<T>, Option<ControlWarning>), ControlError> {
        self.reject_in_fault()?;
        let requested = step_line.unwrap_or(self.config.manual_step);
        if !(requested > T::zero()) {
            return Err(ControlError::InvalidStep);
        }
        let line = self.current_line();
        let (room, relay, speed) = match direction {
            StepDirection::Down => (
                self.config.spool_capacity - line,
                RelayCommand::Payout,
                self.config.payout_speed,
            ),
            StepDirection::Up => (line, RelayCommand::Retrieve, self.config.retrieval_speed),
        };
        let applied = requested.min(room.max(T::zero()));
        let clipped = applied < requested;
        let duration = applied / speed;
        let report = ManualStepReport {
            requested,
            applied,
            clipped,
            duration,
        };
        if applied <= T::zero() {
            warn!("manual step {direction:?} is a no-op at line_out {line}");
            return Ok((report, Some(ControlWarning::StepIsNoOp)));
        }
        self.clear_goals();
        self.state.manual = Some(ManualRun {
            relay,
            duration,
            deadline: None,
        });
        self.state.mode = match relay {
            RelayCommand::Payout => ControllerMode::Deploying,
            _ => ControllerMode::Retrieving,
        };
        if clipped {
            warn!("manual step clipped from {requested} m to {applied} m");
        }
        Ok((report, clipped.then_some(ControlWarning::StepClipped)))
    }

    /// Leave Fault for Idle. Outside Fault this is a no-op with a warning.
    pub fn acknowledge_fault(&mut self) -> Option<ControlWarning> {
        if self.state.mode != ControllerMode::Fault {
            warn!("acknowledge_fault outside fault mode ignored");
            return Some(ControlWarning::NotInFault);
        }
        let now = self.now();
        self.force_off(now);
        self.state.mode = ControllerMode::Idle;
        self.state.fault_reason = None;
        self.clear_goals();
        None
    }

    /// Advance one control period and return the relay command.
    pub fn control_step(&mut self, input: ControlInput<T>) -> RelayCommand {
        let now = input.time;
        let depth = input.fused_depth;
        let line = input.line_out;
        self.state.last_input = Some(input.clone());

        match self.state.mode {
            ControllerMode::Fault | ControllerMode::Idle | ControllerMode::Underway => {
                self.force_off(now);
                return self.state.relay_out;
            }
            _ => {}
        }

        if let Some(run) = self.state.manual.clone() {
            self.manual_tick(run, now);
        } else if let Some(setpoint) = self.state.underway_setpoint {
            if depth <= setpoint {
                if !self.request_relay(RelayCommand::Off, now).is_active() {
                    self.state.underway_setpoint = None;
                    self.state.mode = ControllerMode::Underway;
                }
            } else {
                self.request_relay(RelayCommand::Retrieve, now);
                self.state.mode = ControllerMode::Retrieving;
            }
        } else if let Some(target) = self.state.target_depth {
            self.regulate(target, depth, now);
        } else {
            self.force_off(now);
            self.state.mode = ControllerMode::Idle;
        }

        // never drive the line past either end of the spool
        let relay = self.state.relay_out;
        if (relay == RelayCommand::Payout && line >= self.config.spool_capacity)
            || (relay == RelayCommand::Retrieve && line <= T::zero())
        {
            self.force_off(now);
            if self.state.manual.take().is_some() {
                self.state.mode = ControllerMode::Idle;
            }
        }

        self.detect_stall(&input);
        self.state.relay_out
    }

    fn manual_tick(&mut self, run: ManualRun<T>, now: T) {
        match run.deadline {
            None => {
                if self.request_relay(run.relay, now) == run.relay {
                    let deadline = now + run.duration;
                    if let Some(m) = self.state.manual.as_mut() {
                        m.deadline = Some(deadline);
                    }
                }
            }
            Some(deadline) if now >= deadline - T::lit(TIME_EPS) => {
                // the winch already stopped at the deadline
                self.set_relay(RelayCommand::Off, deadline);
                self.state.manual = None;
                self.state.mode = ControllerMode::Idle;
            }
            Some(_) => {}
        }
    }

    fn regulate(&mut self, target: T, depth: T, now: T) {
        let error = target - depth;
        let band = if self.state.mode == ControllerMode::Holding {
            self.config.deadband + self.config.hysteresis
        } else {
            self.config.deadband
        };
        let desired = if error.abs() <= band {
            RelayCommand::Off
        } else if error > T::zero() {
            RelayCommand::Payout
        } else {
            RelayCommand::Retrieve
        };
        let actual = self.request_relay(desired, now);
        self.state.mode = match (desired, actual) {
            (RelayCommand::Off, RelayCommand::Off) => ControllerMode::Holding,
            (RelayCommand::Payout, _) => ControllerMode::Deploying,
            (RelayCommand::Retrieve, _) => ControllerMode::Retrieving,
            // still waiting out the dwell before stopping
            (RelayCommand::Off, RelayCommand::Payout) => ControllerMode::Deploying,
            (RelayCommand::Off, RelayCommand::Retrieve) => ControllerMode::Retrieving,
        };
    }

    /// Update the stall monitor; faults if depth has not moved by
    /// `stall_epsilon` within `stall_window` of continuous winch motion.
    /// Readings are compared with the mean of those since the last movement
    /// so single noisy readings do not restart the window.
    pub fn detect_stall(&mut self, input: &ControlInput<T>) {
        let relay = self.state.relay_out;
        if !relay.is_active() {
            return;
        }
        let now = input.time;
        let depth = input.fused_depth;
        let reeling_slack =
            relay == RelayCommand::Retrieve && input.line_out - depth > self.config.slack_tolerance;
        if reeling_slack || (depth - self.state.stall_reference_depth).abs() >= self.config.stall_epsilon {
            self.state.stall_reference_depth = depth;
            self.state.stall_reference_time = now;
            self.state.stall_reference_samples = 1;
            return;
        }
        let n = self.state.stall_reference_samples.saturating_add(1);
        self.state.stall_reference_samples = n;
        let r = self.state.stall_reference_depth;
        self.state.stall_reference_depth = r + (depth - r) / T::from_u32(n).unwrap_or_else(T::one);
        if now - self.state.stall_reference_time >= self.config.stall_window - T::lit(TIME_EPS) {
            let reason = match relay {
                RelayCommand::Payout => "stall during payout",
                _ => "stall during retrieval",
            };
            warn!("{reason} at depth {depth} m, t = {now} s");
            self.force_off(now);
            self.clear_goals();
            self.state.mode = ControllerMode::Fault;
            self.state.fault_reason = Some(reason.to_string());
        }
    }
}
