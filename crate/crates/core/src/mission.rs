//! Mission plans and the executor that walks them.
//!
//! The executor is a pure state machine: each control tick it looks at the
//! controller mode and vehicle position, issues controller commands, and
//! tells the caller where the vehicle should be heading.

use serde::{Deserialize, Serialize};

use crate::asv::ASVModel;
use crate::controller::{ControllerMode, WinchController};
use crate::geo::GeoPoint;
use crate::specs::{ProbeSpec, WinchSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cast {
    /// m
    pub target_depth: f64,
    /// Time to hold at the target once reached, s.
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Leg {
    Transit {
        to: GeoPoint,
        /// m/s
        speed: f64,
    },
    Station {
        hold_position: GeoPoint,
        #[serde(default)]
        casts: Vec<Cast>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionPlan {
    pub legs: Vec<Leg>,
}

impl MissionPlan {
    pub fn validate(&self, probe: &ProbeSpec<f64>, winch: &WinchSpec<f64>) -> Result<(), String> {
        if self.legs.is_empty() {
            return Err("mission needs at least one leg".into());
        }
        for (i, leg) in self.legs.iter().enumerate() {
            match leg {
                Leg::Transit { speed, .. } => {
                    if !(*speed > 0.0 && speed.is_finite()) {
                        return Err(format!("leg {i}: transit speed must be > 0"));
                    }
                }
                Leg::Station { casts, .. } => {
                    for (j, c) in casts.iter().enumerate() {
                        if !(c.target_depth >= 0.0 && c.target_depth <= winch.spool_capacity) {
                            return Err(format!(
                                "leg {i} cast {j}: target depth {} outside [0, {}]",
                                c.target_depth, winch.spool_capacity
                            ));
                        }
                        if !(c.dwell >= probe.sample_period) {
                            return Err(format!(
                                "leg {i} cast {j}: dwell {} s shorter than the sample period {} s",
                                c.dwell, probe.sample_period
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionStatus {
    NotStarted,
    Running,
    Paused,
    Faulted,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    /// Bring the probe up to the underway setpoint before moving.
    Stow { leg: usize },
    Transit { leg: usize },
    Approach { leg: usize },
    Cast {
        leg: usize,
        cast: usize,
        reached_at: Option<f64>,
    },
    Surface { leg: usize },
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MissionEventKind {
    Started,
    LegStarted { leg: usize },
    CastStarted { leg: usize, cast: usize, target_depth: f64 },
    CastReached { leg: usize, cast: usize },
    CastDone { leg: usize, cast: usize },
    LegCompleted { leg: usize },
    Paused { reason: String },
    Resumed,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionEvent {
    pub time: f64,
    #[serde(flatten)]
    pub kind: MissionEventKind,
}

/// Where the vehicle should go this tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsvGoal {
    pub to: GeoPoint,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionExecutor {
    pub plan: MissionPlan,
    pub phase: Phase,
    pub status: MissionStatus,
    entered: bool,
}

const TIME_EPS: f64 = 1e-9;

impl MissionExecutor {
    pub fn new(plan: MissionPlan) -> Self {
        Self {
            plan,
            phase: Phase::Stow { leg: 0 },
            status: MissionStatus::NotStarted,
            entered: false,
        }
    }

    pub fn start(&mut self, time: f64) -> Result<Vec<MissionEvent>, String> {
        if self.status != MissionStatus::NotStarted {
            return Err(format!("mission already {:?}", self.status).to_lowercase());
        }
        self.status = MissionStatus::Running;
        Ok(vec![
            MissionEvent {
                time,
                kind: MissionEventKind::Started,
            },
            MissionEvent {
                time,
                kind: MissionEventKind::LegStarted { leg: 0 },
            },
        ])
    }

    pub fn pause(&mut self, time: f64, reason: &str) -> Result<MissionEvent, String> {
        if self.status != MissionStatus::Running {
            return Err(format!("cannot pause a mission that is {:?}", self.status).to_lowercase());
        }
        self.status = MissionStatus::Paused;
        Ok(MissionEvent {
            time,
            kind: MissionEventKind::Paused {
                reason: reason.to_string(),
            },
        })
    }

    /// Continue a paused or fault-stopped mission. A cast cut short by a
    /// fault is abandoned and the probe is brought up before moving on.
    pub fn resume(&mut self, time: f64, controller: &WinchController<f64>) -> Result<MissionEvent, String> {
        match self.status {
            MissionStatus::Paused => {}
            MissionStatus::Faulted => {
                if controller.mode() == ControllerMode::Fault {
                    return Err("acknowledge the fault before resuming".into());
                }
                if let Phase::Cast { leg, .. } = self.phase {
                    self.phase = Phase::Surface { leg };
                }
            }
            s => return Err(format!("cannot resume a mission that is {s:?}").to_lowercase()),
        }
        self.status = MissionStatus::Running;
        self.entered = false;
        Ok(MissionEvent {
            time,
            kind: MissionEventKind::Resumed,
        })
    }

    fn goto(&mut self, phase: Phase) {
        self.phase = phase;
        self.entered = false;
    }

    fn next_leg(&mut self, leg: usize, time: f64, events: &mut Vec<MissionEvent>) {
        events.push(MissionEvent {
            time,
            kind: MissionEventKind::LegCompleted { leg },
        });
        if leg + 1 < self.plan.legs.len() {
            events.push(MissionEvent {
                time,
                kind: MissionEventKind::LegStarted { leg: leg + 1 },
            });
            self.goto(Phase::Stow { leg: leg + 1 });
        } else {
            self.goto(Phase::Done);
        }
    }

    fn start_cast(&mut self, leg: usize, cast: usize, time: f64, events: &mut Vec<MissionEvent>) {
        let casts = match &self.plan.legs[leg] {
            Leg::Station { casts, .. } => casts,
            Leg::Transit { .. } => unreachable!("casts only on station legs"),
        };
        if let Some(c) = casts.get(cast) {
            events.push(MissionEvent {
                time,
                kind: MissionEventKind::CastStarted {
                    leg,
                    cast,
                    target_depth: c.target_depth,
                },
            });
            self.goto(Phase::Cast {
                leg,
                cast,
                reached_at: None,
            });
        } else {
            self.goto(Phase::Surface { leg });
        }
    }

    /// One control tick. Returns the vehicle goal (None: hold position).
    pub fn update(
        &mut self,
        time: f64,
        controller: &mut WinchController<f64>,
        winch: &WinchSpec<f64>,
        asv: &ASVModel,
    ) -> (Option<AsvGoal>, Vec<MissionEvent>) {
        let mut events = Vec::new();
        if self.status != MissionStatus::Running {
            return (None, events);
        }
        if controller.mode() == ControllerMode::Fault {
            self.status = MissionStatus::Faulted;
            let reason = controller.state.fault_reason.clone().unwrap_or_else(|| "fault".into());
            events.push(MissionEvent {
                time,
                kind: MissionEventKind::Paused { reason },
            });
            return (None, events);
        }

        // zero-duration phases chain within one tick
        for _ in 0..4 * (self.plan.legs.len() + 8) {
            let before = self.phase;
            let entering = !self.entered;
            self.entered = true;
            match self.phase {
                Phase::Stow { leg } => {
                    if entering && controller.mode() != ControllerMode::Underway {
                        // cannot fail outside Fault, which is handled above
                        let _ = controller.set_underway(None);
                    }
                    if controller.mode() == ControllerMode::Underway {
                        match self.plan.legs[leg] {
                            Leg::Transit { .. } => self.goto(Phase::Transit { leg }),
                            Leg::Station { .. } => self.goto(Phase::Approach { leg }),
                        }
                    }
                }
                Phase::Transit { leg } => {
                    let Leg::Transit { to, .. } = self.plan.legs[leg] else {
                        unreachable!()
                    };
                    if asv.within_radius(&to) {
                        self.next_leg(leg, time, &mut events);
                    }
                }
                Phase::Approach { leg } => {
                    let Leg::Station { hold_position, .. } = &self.plan.legs[leg] else {
                        unreachable!()
                    };
                    if asv.within_radius(hold_position) {
                        self.start_cast(leg, 0, time, &mut events);
                    }
                }
                Phase::Cast { leg, cast, reached_at } => {
                    let Leg::Station { casts, .. } = &self.plan.legs[leg] else {
                        unreachable!()
                    };
                    let c = casts[cast].clone();
                    if entering {
                        let _ = controller.command_target_depth(c.target_depth, winch);
                    }
                    match reached_at {
                        None if controller.mode() == ControllerMode::Holding => {
                            events.push(MissionEvent {
                                time,
                                kind: MissionEventKind::CastReached { leg, cast },
                            });
                            self.phase = Phase::Cast {
                                leg,
                                cast,
                                reached_at: Some(time),
                            };
                        }
                        Some(t0) if time - t0 >= c.dwell - TIME_EPS => {
                            events.push(MissionEvent {
                                time,
                                kind: MissionEventKind::CastDone { leg, cast },
                            });
                            self.start_cast(leg, cast + 1, time, &mut events);
                        }
                        _ => {}
                    }
                }
                Phase::Surface { leg } => {
                    if entering {
                        let _ = controller.set_underway(None);
                    }
                    if controller.mode() == ControllerMode::Underway {
                        self.next_leg(leg, time, &mut events);
                    }
                }
                Phase::Done => {
                    self.status = MissionStatus::Completed;
                    events.push(MissionEvent {
                        time,
                        kind: MissionEventKind::Completed,
                    });
                    return (None, events);
                }
            }
            let settled = self.phase == before && self.entered;
            if settled {
                break;
            }
        }

        let goal = match self.phase {
            Phase::Transit { leg } => match self.plan.legs[leg] {
                Leg::Transit { to, speed } => Some(AsvGoal { to, speed }),
                _ => None,
            },
            Phase::Approach { leg } | Phase::Cast { leg, .. } | Phase::Surface { leg } => match &self.plan.legs[leg] {
                Leg::Station { hold_position, .. } => Some(AsvGoal {
                    to: *hold_position,
                    speed: asv.max_speed,
                }),
                _ => None,
            },
            Phase::Stow { .. } | Phase::Done => None,
        };
        (goal, events)
    }
}
