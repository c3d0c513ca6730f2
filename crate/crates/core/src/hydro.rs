//! Probe, tether and winch plant.
//!
//! The tether is inextensible, massless and vertical: it only ever limits how
//! deep the probe can be. Below the line length the probe sinks freely under
//! gravity, buoyancy and quadratic drag; the bottom and any vegetation patch
//! under the vehicle act as a hard floor.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::field::FieldModel;
use crate::geo::GeoPoint;
use crate::scalar::Scalar;
use crate::specs::{ProbeSpec, WinchSpec};

/// `probe_depth` within this distance of `line_out` counts as a taut tether.
pub const TAUT_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayCommand {
    Payout,
    Off,
    Retrieve,
}

impl RelayCommand {
    pub fn is_active(self) -> bool {
        self != RelayCommand::Off
    }

    /// Signed line speed (positive pays out) commanded by this relay state.
    pub fn line_velocity<T: Scalar>(self, winch: &WinchSpec<T>) -> T {
        match self {
            RelayCommand::Payout => winch.payout_speed,
            RelayCommand::Off => T::zero(),
            RelayCommand::Retrieve => -winch.retrieval_speed,
        }
    }
}

impl fmt::Display for RelayCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelayCommand::Payout => "payout",
            RelayCommand::Off => "off",
            RelayCommand::Retrieve => "retrieve",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState<T> {
    /// s
    pub time: T,
    /// Paid-out tether, m.
    pub line_out: T,
    /// Positive down, m.
    pub probe_depth: T,
    /// Positive down, m/s.
    pub probe_velocity: T,
    pub tether_taut: bool,
    pub relay: RelayCommand,
    pub asv_position: GeoPoint,
    /// m/s
    pub asv_speed: T,
    /// Compass heading, rad.
    pub asv_heading: T,
}

impl<T: Scalar> PlantState<T> {
    /// Probe hanging still on `line_out` of taut tether.
    pub fn hanging(line_out: T, asv_position: GeoPoint) -> Self {
        Self {
            time: T::zero(),
            line_out,
            probe_depth: line_out,
            probe_velocity: T::zero(),
            tether_taut: true,
            relay: RelayCommand::Off,
            asv_position,
            asv_speed: T::zero(),
            asv_heading: T::zero(),
        }
    }

    /// Slack tether of length `line_out` with the probe at rest at `depth`.
    pub fn slack(line_out: T, depth: T, asv_position: GeoPoint) -> Self {
        Self {
            probe_depth: depth,
            tether_taut: line_out - depth <= T::lit(TAUT_TOLERANCE),
            ..Self::hanging(line_out, asv_position)
        }
    }

    pub fn check_invariants(&self, env: &Environment<T>, winch: &WinchSpec<T>) -> Result<(), SimError> {
        let tol = T::lit(TAUT_TOLERANCE);
        let fail = |what: String| Err(SimError::Invariant(what));
        if self.line_out < T::zero() || self.line_out > winch.spool_capacity {
            return fail(format!("line_out {} outside [0, {}]", self.line_out, winch.spool_capacity));
        }
        let floor = env.effective_floor(&self.asv_position);
        if self.probe_depth < T::zero() || self.probe_depth > floor {
            return fail(format!("probe_depth {} outside [0, {}]", self.probe_depth, floor));
        }
        if self.tether_taut && (self.probe_depth - self.line_out).abs() > tol {
            return fail("taut tether with depth != line_out".into());
        }
        if !self.tether_taut && !(self.probe_depth < self.line_out) {
            return fail("slack tether with depth >= line_out".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bathymetry<T> {
    Flat {
        depth: T,
    },
    /// Paraboloid basin: `center_depth` at `center`, rising to `shore_depth`
    /// at `radius` metres and beyond.
    Bowl {
        center: GeoPoint,
        center_depth: T,
        shore_depth: T,
        radius: T,
    },
}

impl<T: Scalar> Bathymetry<T> {
    pub fn depth_at(&self, at: &GeoPoint) -> T {
        match self {
            Bathymetry::Flat { depth } => *depth,
            Bathymetry::Bowl {
                center,
                center_depth,
                shore_depth,
                radius,
            } => {
                let r = T::lit(center.distance_to(at)) / *radius;
                let shape = (T::one() - r * r).max(T::zero());
                *shore_depth + (*center_depth - *shore_depth) * shape
            }
        }
    }

    fn shallowest(&self) -> T {
        match self {
            Bathymetry::Flat { depth } => *depth,
            Bathymetry::Bowl {
                center_depth,
                shore_depth,
                ..
            } => center_depth.min(*shore_depth),
        }
    }
}

/// Vegetation or debris the probe can settle on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstruction<T> {
    pub center: GeoPoint,
    /// m
    pub radius: T,
    /// m below the surface.
    pub top_depth: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment<T> {
    pub water_density: T,
    pub gravity: T,
    pub bathymetry: Bathymetry<T>,
    pub obstructions: Vec<Obstruction<T>>,
    pub fields: FieldModel,
}

impl<T: Scalar> Environment<T> {
    pub fn bottom_depth(&self, at: &GeoPoint) -> T {
        self.bathymetry.depth_at(at)
    }

    /// Depth the probe cannot sink past when hanging below `at`.
    pub fn effective_floor(&self, at: &GeoPoint) -> T {
        self.obstructions
            .iter()
            .filter(|o| T::lit(o.center.distance_to(at)) <= o.radius)
            .fold(self.bottom_depth(at), |floor, o| floor.min(o.top_depth))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Domain(m));
        if !(self.water_density > T::zero()) || !(self.gravity > T::zero()) {
            return bad("water density and gravity must be > 0".into());
        }
        if !(self.bathymetry.shallowest() > T::zero()) {
            return bad("bottom depth must be > 0 everywhere".into());
        }
        if let Bathymetry::Bowl { radius, .. } = &self.bathymetry {
            if !(*radius > T::zero()) {
                return bad("bathymetry radius must be > 0".into());
            }
        }
        for o in &self.obstructions {
            if !(o.radius > T::zero()) || !(o.top_depth >= T::zero()) {
                return bad("obstruction radius must be > 0 and top_depth >= 0".into());
            }
            let bottom = self.bottom_depth(&o.center);
            if !(o.top_depth < bottom) {
                return bad(format!(
                    "obstruction top {} is not above the local bottom {}",
                    o.top_depth, bottom
                ));
            }
        }
        for (name, f) in &self.fields.parameters {
            f.validate(name).map_err(SimError::Domain)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("time step must be > 0, got {0}")]
    InvalidTimestep(f64),
    #[error("non-finite {what} at t = {time}")]
    NonFinite { what: &'static str, time: f64 },
    #[error("depth {depth} m is below the bottom ({bottom} m)")]
    DepthBelowBottom { depth: f64, bottom: f64 },
    #[error("{0}")]
    Domain(String),
    #[error("plant invariant violated: {0}")]
    Invariant(String),
}

/// One velocity update of `m·dv/dt = W − k·v·|v|` with the drag evaluated at
/// the new velocity. The quadratic has a closed-form root, so the update is
/// monotone in `v` and cannot step past the terminal velocity.
fn drag_velocity_update<T: Scalar>(v: T, wet_weight: T, k: T, mass: T, dt: T) -> T {
    let c = v + dt * wet_weight / mass;
    let b = dt * k / mass;
    if b == T::zero() {
        return c;
    }
    let four = T::lit(4.0);
    let two = T::lit(2.0);
    // v' + b·v'·|v'| = c, sign(v') = sign(c)
    two * c / (T::one() + (T::one() + four * b * c.abs()).sqrt())
}

/// Advance the plant by `dt` under the given relay command.
pub fn step<T: Scalar>(
    state: &PlantState<T>,
    relay: RelayCommand,
    env: &Environment<T>,
    probe: &ProbeSpec<T>,
    winch: &WinchSpec<T>,
    dt: T,
) -> Result<PlantState<T>, SimError> {
    if !(dt > T::zero()) {
        return Err(SimError::InvalidTimestep(dt.as_f64()));
    }
    let time = state.time + dt;
    let line_out = (state.line_out + relay.line_velocity(winch) * dt)
        .max(T::zero())
        .min(winch.spool_capacity);
    let line_rate = (line_out - state.line_out) / dt;

    let wet = probe.wet_weight(env.water_density, env.gravity);
    let k = T::lit(0.5) * env.water_density * probe.drag_coefficient * probe.cross_section_area;
    let mut v = drag_velocity_update(state.probe_velocity, wet, k, probe.mass_air, dt);
    let mut z = state.probe_depth + v * dt;
    if !v.is_finite() || !z.is_finite() {
        return Err(SimError::NonFinite {
            what: "probe state",
            time: time.as_f64(),
        });
    }

    let floor = env.effective_floor(&state.asv_position);
    if z >= line_out && line_out <= floor {
        z = line_out;
        v = line_rate;
    } else if z >= floor {
        z = floor;
        v = T::zero();
    }
    if z < T::zero() {
        z = T::zero();
        v = v.max(T::zero());
    }
    let tether_taut = line_out - z <= T::lit(TAUT_TOLERANCE);

    Ok(PlantState {
        time,
        line_out,
        probe_depth: z,
        probe_velocity: v,
        tether_taut,
        relay,
        ..state.clone()
    })
}

/// Speed at which net weight balances quadratic drag, √(2W / ρC_dA).
pub fn terminal_velocity<T: Scalar>(probe: &ProbeSpec<T>, env: &Environment<T>) -> Result<T, SimError> {
    let wet = probe.wet_weight(env.water_density, env.gravity);
    if wet < T::zero() {
        return Err(SimError::Domain(format!(
            "probe is positively buoyant (wet weight {wet} N)"
        )));
    }
    let denom = env.water_density * probe.drag_coefficient * probe.cross_section_area;
    Ok((T::lit(2.0) * wet / denom).sqrt())
}

/// Pressure-depth reading: true depth plus Gaussian noise, never negative.
pub fn measure_depth<T: Scalar, R: Rng + ?Sized>(state: &PlantState<T>, probe: &ProbeSpec<T>, rng: &mut R) -> T {
    let n: f64 = StandardNormal.sample(rng);
    (state.probe_depth + probe.pressure_sensor_noise_sigma * T::lit(n)).max(T::zero())
}

/// Science values at a point in the water column.
pub fn sample_fields<T: Scalar>(
    env: &Environment<T>,
    at: GeoPoint,
    depth: T,
    time: T,
    seed: u64,
) -> Result<BTreeMap<String, f64>, SimError> {
    let bottom = env.bottom_depth(&at);
    if depth > bottom || depth < T::zero() {
        return Err(SimError::DepthBelowBottom {
            depth: depth.as_f64(),
            bottom: bottom.as_f64(),
        });
    }
    Ok(env.fields.evaluate(at, depth.as_f64(), time.as_f64(), seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ParameterField;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SITE: GeoPoint = GeoPoint::new(45.54437, -73.15212);

    fn env(depth: f64) -> Environment<f64> {
        Environment {
            water_density: 997.0,
            gravity: 9.81,
            bathymetry: Bathymetry::Flat { depth },
            obstructions: vec![],
            fields: FieldModel::stratified_lake(SITE),
        }
    }

    /// Probe with a 5 N wet weight, C_d = 1, A = 0.005 m².
    fn five_newton_probe(mass: f64) -> ProbeSpec<f64> {
        let mut p = ProbeSpec::exo1();
        p.mass_air = mass;
        p.volume = (mass * 9.81 - 5.0) / (997.0 * 9.81);
        p.drag_coefficient = 1.0;
        p.cross_section_area = 0.005;
        p
    }

    fn run(state: &PlantState<f64>, relay: RelayCommand, e: &Environment<f64>, p: &ProbeSpec<f64>,
           w: &WinchSpec<f64>, dt: f64, steps: usize) -> PlantState<f64> {
        let mut s = state.clone();
        for _ in 0..steps {
            s = step(&s, relay, e, p, w, dt).unwrap();
        }
        s
    }

    #[test]
    fn terminal_velocity_closed_form() {
        let e = env(20.0);
        let v = terminal_velocity(&five_newton_probe(1.5), &e).unwrap();
        let oracle = (2.0 * 5.0 / (997.0 * 1.0 * 0.005f64)).sqrt();
        assert!((v - oracle).abs() < 1e-9);
        assert!((v - 1.41634).abs() < 1e-5);

        let mut neutral = five_newton_probe(1.5);
        neutral.volume = 1.5 / 997.0;
        assert!(terminal_velocity(&neutral, &e).unwrap().abs() < 1e-6);

        let mut doubled = five_newton_probe(3.0);
        doubled.volume = (3.0 * 9.81 - 10.0) / (997.0 * 9.81);
        let v2 = terminal_velocity(&doubled, &e).unwrap();
        assert!((v2 / v - 2f64.sqrt()).abs() < 1e-9);

        let mut floaty = five_newton_probe(1.5);
        floaty.volume = 0.01;
        assert!(terminal_velocity(&floaty, &e).is_err());
    }

    #[test]
    fn taut_retrieve_from_ten_metres() {
        let e = env(20.0);
        let p = ProbeSpec::exo1();
        let w = WinchSpec::trac_fisherman_25();
        let mut s = PlantState::hanging(10.0, SITE);
        let mut steps = 0usize;
        while s.probe_depth > 0.0 {
            let next = step(&s, RelayCommand::Retrieve, &e, &p, &w, 0.01).unwrap();
            assert!(next.tether_taut);
            assert!(((s.probe_depth - next.probe_depth) - 0.3302 * 0.01).abs() < 1e-6
                || next.probe_depth == 0.0);
            s = next;
            steps += 1;
        }
        let t = steps as f64 * 0.01;
        assert!((t - 10.0 / 0.3302).abs() <= 0.02, "{t}");
    }

    #[test]
    fn relay_off_on_taut_line_holds_depth() {
        let e = env(20.0);
        let s0 = PlantState::hanging(4.2, SITE);
        let s = run(&s0, RelayCommand::Off, &e, &ProbeSpec::exo1(), &WinchSpec::trac_fisherman_25(), 0.01, 5000);
        assert_eq!(s.probe_depth, 4.2);
        assert!(s.tether_taut);
    }

    #[test]
    fn free_sink_approaches_terminal_velocity_from_below() {
        let e = env(50.0);
        let p = five_newton_probe(1.5);
        let w = WinchSpec::trac_fisherman_25();
        let vt = terminal_velocity(&p, &e).unwrap();
        let mut s = PlantState::slack(10.0, 0.0, SITE);
        let mut last = 0.0;
        for _ in 0..600 {
            s = step(&s, RelayCommand::Off, &e, &p, &w, 0.01).unwrap();
            assert!(!s.tether_taut);
            assert!(s.probe_velocity >= last && s.probe_velocity <= vt + 1e-6);
            last = s.probe_velocity;
        }
        assert!((s.probe_velocity - vt).abs() / vt < 1e-3);
    }

    #[test]
    fn payout_faster_sinker_is_line_limited() {
        // the default probe sinks faster than the winch pays out
        let e = env(20.0);
        let p = ProbeSpec::exo1();
        let w = WinchSpec::trac_fisherman_25();
        assert!(terminal_velocity(&p, &e).unwrap() > w.payout_speed);
        let s = run(&PlantState::hanging(0.0, SITE), RelayCommand::Payout, &e, &p, &w, 0.01, 1000);
        assert!(s.tether_taut);
        assert!((s.probe_velocity - w.payout_speed).abs() < 1e-12);
        assert!((s.line_out - 10.0 * w.payout_speed).abs() < 1e-9);
    }

    #[test]
    fn slow_sinker_accrues_slack() {
        let e = env(20.0);
        let mut p = ProbeSpec::exo1();
        p.volume = p.mass_air / 997.0 * 0.995;
        let w = WinchSpec::trac_fisherman_25();
        assert!(terminal_velocity(&p, &e).unwrap() < w.payout_speed);
        let s = run(&PlantState::hanging(0.0, SITE), RelayCommand::Payout, &e, &p, &w, 0.01, 1000);
        assert!(!s.tether_taut);
        assert!(s.probe_depth < s.line_out);
    }

    #[test]
    fn vegetation_is_a_hard_floor() {
        let mut e = env(20.0);
        e.obstructions.push(Obstruction {
            center: SITE,
            radius: 5.0,
            top_depth: 4.0,
        });
        let p = ProbeSpec::exo1();
        let w = WinchSpec::trac_fisherman_25();
        let s = run(&PlantState::hanging(0.0, SITE), RelayCommand::Payout, &e, &p, &w, 0.01, 2000);
        assert_eq!(s.probe_depth, 4.0);
        assert_eq!(s.probe_velocity, 0.0);
        assert!(!s.tether_taut);
        // outside the patch the probe follows the line
        let away = PlantState::hanging(0.0, SITE.displaced(50.0, 0.0));
        let s = run(&away, RelayCommand::Payout, &e, &p, &w, 0.01, 2000);
        assert!(s.probe_depth > 7.0);
    }

    #[test]
    fn line_is_clamped_to_spool() {
        let e = env(30.0);
        let w = WinchSpec::trac_fisherman_25();
        let s = run(&PlantState::hanging(9.99, SITE), RelayCommand::Payout, &e, &ProbeSpec::exo1(), &w, 0.01, 100);
        assert_eq!(s.line_out, 10.0);
        let s = run(&PlantState::hanging(0.01, SITE), RelayCommand::Retrieve, &e, &ProbeSpec::exo1(), &w, 0.01, 100);
        assert_eq!(s.line_out, 0.0);
        assert_eq!(s.probe_depth, 0.0);
    }

    #[test]
    fn bad_timestep_rejected() {
        let e = env(10.0);
        let s = PlantState::hanging(1.0, SITE);
        let r = step(&s, RelayCommand::Off, &e, &ProbeSpec::exo1(), &WinchSpec::trac_fisherman_25(), 0.0);
        assert_eq!(r, Err(SimError::InvalidTimestep(0.0)));
    }

    #[test]
    fn nan_parameters_surface_as_simulation_fault() {
        let e = env(10.0);
        let mut p = ProbeSpec::exo1();
        p.mass_air = f64::NAN;
        let s = PlantState::slack(5.0, 1.0, SITE);
        let r = step(&s, RelayCommand::Off, &e, &p, &WinchSpec::trac_fisherman_25(), 0.01);
        assert!(matches!(r, Err(SimError::NonFinite { .. })));
    }

    #[test]
    fn noiseless_and_clamped_depth_readings() {
        let mut p = ProbeSpec::exo1();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        p.pressure_sensor_noise_sigma = 0.0;
        let s = PlantState::hanging(3.217, SITE);
        assert_eq!(measure_depth(&s, &p, &mut rng), 3.217);
        p.pressure_sensor_noise_sigma = 0.5;
        let surface = PlantState::hanging(0.0, SITE);
        for _ in 0..1000 {
            assert!(measure_depth(&surface, &p, &mut rng) >= 0.0);
        }
    }

    #[test]
    fn depth_reading_is_unbiased() {
        let mut p = ProbeSpec::exo1();
        p.pressure_sensor_noise_sigma = 0.01;
        let s = PlantState::hanging(5.0, SITE);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n).map(|_| measure_depth(&s, &p, &mut rng)).sum::<f64>() / n as f64;
        // standard error 0.01/sqrt(1e5) ≈ 3.2e-5
        assert!((mean - 5.0).abs() < 0.001);
    }

    #[test]
    fn field_sampling_checks_the_bottom() {
        let mut e = env(6.0);
        e.fields.parameters.clear();
        e.fields.parameters.insert("v".into(), ParameterField::linear(10.0, -0.5));
        let v = sample_fields(&e, SITE, 5.0, 0.0, 1).unwrap();
        assert_eq!(v["v"], 7.5);
        assert_eq!(v, sample_fields(&e, SITE, 5.0, 0.0, 1).unwrap());
        assert!(matches!(
            sample_fields(&e, SITE, 6.5, 0.0, 1),
            Err(SimError::DepthBelowBottom { .. })
        ));
    }

    #[test]
    fn bowl_bathymetry_shallows_toward_shore() {
        let b = Bathymetry::Bowl {
            center: SITE,
            center_depth: 9.0,
            shore_depth: 0.5,
            radius: 400.0,
        };
        assert_eq!(b.depth_at(&SITE), 9.0);
        let mid: f64 = b.depth_at(&SITE.displaced(200.0, 0.0));
        assert!((mid - (0.5 + 8.5 * 0.75)).abs() < 1e-6);
        assert_eq!(b.depth_at(&SITE.displaced(0.0, 1000.0)), 0.5);
    }

    #[test]
    fn environment_validation() {
        let mut e = env(5.0);
        e.obstructions.push(Obstruction { center: SITE, radius: 2.0, top_depth: 6.0 });
        assert!(e.validate().is_err());
        assert!(env(0.0).validate().is_err());
        assert!(env(5.0).validate().is_ok());
    }

    #[test]
    fn first_order_convergence_against_fine_reference() {
        let e = env(50.0);
        let p = five_newton_probe(1.5);
        let w = WinchSpec::trac_fisherman_25();
        let start = PlantState::slack(10.0, 0.0, SITE);
        let depth_at_5s = |dt: f64| run(&start, RelayCommand::Off, &e, &p, &w, dt, (5.0 / dt).round() as usize).probe_depth;
        let reference = depth_at_5s(1e-4);
        let coarse = (depth_at_5s(0.01) - reference).abs();
        let half = (depth_at_5s(0.005) - reference).abs();
        assert!(coarse <= 5e-3, "{coarse}");
        let ratio = coarse / half;
        assert!((1.6..2.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn single_precision_plant_steps() {
        let e: Environment<f32> = Environment {
            water_density: 997.0,
            gravity: 9.81,
            bathymetry: Bathymetry::Flat { depth: 20.0 },
            obstructions: vec![],
            fields: FieldModel::stratified_lake(SITE),
        };
        let mut s = PlantState::<f32>::hanging(10.0, SITE);
        for _ in 0..100 {
            s = step(&s, RelayCommand::Retrieve, &e, &ProbeSpec::exo1(), &WinchSpec::trac_fisherman_25(), 0.01).unwrap();
        }
        assert!((s.probe_depth - (10.0 - 0.3302)).abs() < 1e-3);
    }

    fn relay_strategy() -> impl Strategy<Value = RelayCommand> {
        prop_oneof![Just(RelayCommand::Payout), Just(RelayCommand::Off), Just(RelayCommand::Retrieve)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn invariants_hold_under_random_relay_sequences(
            relays in prop::collection::vec((relay_strategy(), 1usize..200), 1..30),
            veg in prop::option::of(0.5f64..6.0),
            slow in any::<bool>(),
        ) {
            let mut e = env(7.0);
            if let Some(top) = veg {
                e.obstructions.push(Obstruction { center: SITE, radius: 3.0, top_depth: top });
            }
            let mut p = ProbeSpec::exo1();
            if slow {
                p.volume = p.mass_air / 997.0 * 0.995;
            }
            let w = WinchSpec::trac_fisherman_25();
            let dt = 0.01;
            let mut s = PlantState::hanging(0.0, SITE);
            let max_dl = w.max_line_speed() * dt + 1e-12;
            for (relay, n) in relays {
                for _ in 0..n {
                    let next = step(&s, relay, &e, &p, &w, dt).unwrap();
                    prop_assert!(next.check_invariants(&e, &w).is_ok(), "{:?}", next.check_invariants(&e, &w));
                    prop_assert!((next.line_out - s.line_out).abs() <= max_dl);
                    if let Some(top) = veg {
                        prop_assert!(next.probe_depth <= top);
                    }
                    s = next;
                }
            }
        }

        #[test]
        fn slack_free_sink_never_exceeds_terminal_velocity(
            mass in 0.3f64..11.0, density_ratio in 0.2f64..0.99,
            cd in 0.3f64..2.0, area in 0.0005f64..0.05,
        ) {
            let e = env(1000.0);
            let mut p = ProbeSpec::exo1();
            p.mass_air = mass;
            p.volume = mass / 997.0 * density_ratio;
            p.drag_coefficient = cd;
            p.cross_section_area = area;
            let vt = terminal_velocity(&p, &e).unwrap();
            let mut s = PlantState::slack(10.0, 0.0, SITE);
            let w = WinchSpec::trac_fisherman_25();
            for _ in 0..500 {
                s = step(&s, RelayCommand::Off, &e, &p, &w, 0.01).unwrap();
                if s.tether_taut { break; }
                prop_assert!(s.probe_velocity <= vt + 1e-6);
            }
        }

        #[test]
        fn identical_inputs_give_identical_trajectories(
            relays in prop::collection::vec(relay_strategy(), 1..300),
        ) {
            let e = env(8.0);
            let p = ProbeSpec::exo1();
            let w = WinchSpec::trac_fisherman_25();
            let mut a = PlantState::hanging(2.0, SITE);
            let mut b = a.clone();
            for r in relays {
                a = step(&a, r, &e, &p, &w, 0.01).unwrap();
                b = step(&b, r, &e, &p, &w, 0.01).unwrap();
                prop_assert_eq!(a.probe_depth.to_bits(), b.probe_depth.to_bits());
                prop_assert_eq!(a.line_out.to_bits(), b.line_out.to_bits());
            }
        }
    }
}
