//! Kinematic surface-vehicle model.

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ASVModel {
    /// m/s
    pub max_speed: f64,
    pub position: GeoPoint,
    /// Compass heading, rad.
    #[serde(default)]
    pub heading: f64,
    /// m
    pub station_keep_radius: f64,
}

impl ASVModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_speed > 0.0 && self.max_speed.is_finite()) {
            return Err("asv.max_speed must be > 0".into());
        }
        if !(self.station_keep_radius > 0.0 && self.station_keep_radius.is_finite()) {
            return Err("asv.station_keep_radius must be > 0".into());
        }
        Ok(())
    }

    pub fn within_radius(&self, goal: &GeoPoint) -> bool {
        self.position.distance_to(goal) <= self.station_keep_radius
    }
}

/// Move toward `goal` for `dt` seconds at up to `speed` (capped by the model's
/// `max_speed`). Inside the station-keeping radius the vehicle holds position.
/// Returns the new model and the speed actually used.
pub fn advance_asv_at(model: &ASVModel, goal: GeoPoint, speed: f64, dt: f64) -> (ASVModel, f64) {
    assert!(dt > 0.0, "dt must be > 0");
    let distance = model.position.distance_to(&goal);
    if distance <= model.station_keep_radius {
        return (model.clone(), 0.0);
    }
    let (east, north) = model.position.offset_to(&goal);
    let v = speed.min(model.max_speed).min(distance / dt);
    let travel = v * dt;
    let heading = east.atan2(north);
    let position = model
        .position
        .displaced(east / distance * travel, north / distance * travel);
    (
        ASVModel {
            position,
            heading,
            ..model.clone()
        },
        v,
    )
}

pub fn advance_asv(model: &ASVModel, goal: GeoPoint, dt: f64) -> ASVModel {
    advance_asv_at(model, goal, model.max_speed, dt).0
}
