//! Physical specifications of the probe, winch and flotation platform, and
//! the static feasibility checks that can be run before any simulation.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::units::{m_per_min_to_m_per_s, Quantity, Unit, UnitError};

pub const DEFAULT_WATER_DENSITY: f64 = 997.0;
pub const DEFAULT_GRAVITY: f64 = 9.81;
pub const DEFAULT_SPOOL_CAPACITY: f64 = 10.0;
pub const DEFAULT_MIN_RELAY_DWELL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("maximum stress must be strictly positive")]
    ZeroStress,
    #[error(transparent)]
    Unit(#[from] UnitError),
}

fn require_positive<T: Scalar>(field: &'static str, v: T) -> Result<(), SpecError> {
    if v.is_finite() && v > T::zero() {
        Ok(())
    } else {
        Err(SpecError::Invalid {
            field,
            reason: format!("must be finite and > 0, got {v}"),
        })
    }
}

/// Sensor probe (sonde) hanging on the tether.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec<T> {
    /// Mass in air, kg.
    pub mass_air: T,
    /// Displaced volume, m³.
    pub volume: T,
    pub drag_coefficient: T,
    /// Frontal area for vertical motion, m².
    pub cross_section_area: T,
    /// Standard deviation of the pressure-depth reading, m.
    pub pressure_sensor_noise_sigma: T,
    /// Science sampling period, s.
    pub sample_period: T,
    pub parameter_list: Vec<String>,
}

impl<T: Scalar> ProbeSpec<T> {
    /// A multiparameter sonde roughly the size of a YSI EXO1 with a cable grip.
    pub fn exo1() -> Self {
        Self {
            mass_air: T::lit(1.65),
            volume: T::lit(0.00112),
            drag_coefficient: T::lit(1.0),
            cross_section_area: T::lit(0.001735),
            pressure_sensor_noise_sigma: T::lit(0.004),
            sample_period: T::one(),
            parameter_list: [
                "conductivity",
                "dissolved_oxygen",
                "orp",
                "ph",
                "salinity",
                "temperature",
                "turbidity",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        require_positive("probe.mass_air", self.mass_air)?;
        require_positive("probe.volume", self.volume)?;
        require_positive("probe.drag_coefficient", self.drag_coefficient)?;
        require_positive("probe.cross_section_area", self.cross_section_area)?;
        require_positive("probe.sample_period", self.sample_period)?;
        if !(self.pressure_sensor_noise_sigma >= T::zero()) {
            return Err(SpecError::Invalid {
                field: "probe.pressure_sensor_noise_sigma",
                reason: "must be >= 0".into(),
            });
        }
        if self.parameter_list.is_empty() {
            return Err(SpecError::Invalid {
                field: "probe.parameter_list",
                reason: "must name at least one parameter".into(),
            });
        }
        Ok(())
    }

    /// Weight in water (N): positive when the probe sinks.
    pub fn wet_weight(&self, water_density: T, gravity: T) -> T {
        self.mass_air * gravity - water_density * gravity * self.volume
    }
}

/// Electric anchor winch carrying the tether.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinchSpec<T> {
    /// kg
    pub max_payload: T,
    /// m/s
    pub payout_speed: T,
    /// m/s
    pub retrieval_speed: T,
    /// Tether length the spool can hold, m.
    pub spool_capacity: T,
    /// V
    pub operating_voltage: T,
    /// Minimum time between relay changes, s.
    pub min_relay_dwell: T,
}

impl<T: Scalar> WinchSpec<T> {
    /// Published figures for the small anchor winch used on the APS.
    pub fn trac_fisherman_25() -> Self {
        Self {
            max_payload: T::lit(11.340),
            payout_speed: m_per_min_to_m_per_s(T::lit(21.336)),
            retrieval_speed: m_per_min_to_m_per_s(T::lit(19.812)),
            spool_capacity: T::lit(DEFAULT_SPOOL_CAPACITY),
            operating_voltage: T::lit(12.0),
            min_relay_dwell: T::lit(DEFAULT_MIN_RELAY_DWELL),
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        require_positive("winch.max_payload", self.max_payload)?;
        require_positive("winch.payout_speed", self.payout_speed)?;
        require_positive("winch.retrieval_speed", self.retrieval_speed)?;
        require_positive("winch.spool_capacity", self.spool_capacity)?;
        require_positive("winch.operating_voltage", self.operating_voltage)?;
        require_positive("winch.min_relay_dwell", self.min_relay_dwell)?;
        Ok(())
    }

    pub fn max_line_speed(&self) -> T {
        self.payout_speed.max(self.retrieval_speed)
    }
}

/// Pontoon-supported frame carrying the winch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSpec<T> {
    /// m³
    pub pontoon_volume_each: T,
    pub pontoon_count: u32,
    /// kg/m³
    pub water_density: T,
    /// m/s²
    pub gravity: T,
    pub buoyancy_safety_factor: T,
    /// Everything except the probe, kg.
    pub dry_mass: T,
}

impl<T: Scalar> PlatformSpec<T> {
    /// Two 0.0642 m³ floats in fresh water.
    pub fn twin_pontoon() -> Self {
        Self {
            pontoon_volume_each: T::lit(0.0642),
            pontoon_count: 2,
            water_density: T::lit(DEFAULT_WATER_DENSITY),
            gravity: T::lit(DEFAULT_GRAVITY),
            buoyancy_safety_factor: T::lit(1.2),
            dry_mass: T::lit(85.0),
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.pontoon_count < 1 {
            return Err(SpecError::Invalid {
                field: "platform.pontoon_count",
                reason: "at least one pontoon is required".into(),
            });
        }
        if !(self.pontoon_volume_each.is_finite() && self.pontoon_volume_each >= T::zero()) {
            return Err(SpecError::Invalid {
                field: "platform.pontoon_volume_each",
                reason: "must be finite and >= 0".into(),
            });
        }
        require_positive("platform.water_density", self.water_density)?;
        require_positive("platform.gravity", self.gravity)?;
        if !(self.buoyancy_safety_factor >= T::one()) {
            return Err(SpecError::Invalid {
                field: "platform.buoyancy_safety_factor",
                reason: format!("must be >= 1, got {}", self.buoyancy_safety_factor),
            });
        }
        if !(self.dry_mass.is_finite() && self.dry_mass >= T::zero()) {
            return Err(SpecError::Invalid {
                field: "platform.dry_mass",
                reason: "must be finite and >= 0".into(),
            });
        }
        Ok(())
    }

    pub fn total_volume(&self) -> T {
        self.pontoon_volume_each * T::from_u32(self.pontoon_count).unwrap_or_else(T::zero)
    }
}

/// Yield strength and peak simulated stress of the mounting frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralCheck<T> {
    /// MPa
    pub yield_strength: T,
    /// MPa
    pub maximum_stress: T,
}

impl<T: Scalar> StructuralCheck<T> {
    /// 6051 aluminium against the peak stress where the rods meet the floats.
    pub fn aluminium_frame() -> Self {
        Self {
            yield_strength: T::lit(120.0),
            maximum_stress: T::lit(14.7),
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        require_positive("structure.yield_strength", self.yield_strength)?;
        if self.maximum_stress == T::zero() {
            return Err(SpecError::ZeroStress);
        }
        require_positive("structure.maximum_stress", self.maximum_stress)
    }
}

/// Buoyant force of the submerged pontoons, ρ·g·V.
pub fn buoyant_force<T: Scalar>(platform: &PlatformSpec<T>) -> Result<Quantity<T>, SpecError> {
    let rho = Quantity::new(platform.water_density, Unit::KilogramPerCubicMeter)?;
    let g = Quantity::new(platform.gravity, Unit::MeterPerSecondSquared)?;
    let v = Quantity::new(platform.total_volume(), Unit::CubicMeter)?;
    // ρ·V is a mass, so the intermediate stays in named units
    Ok(rho.try_mul(v)?.try_mul(g)?)
}

/// Largest total mass the floats carry with the configured safety factor.
pub fn max_total_weight<T: Scalar>(platform: &PlatformSpec<T>) -> Result<Quantity<T>, SpecError> {
    let fb = buoyant_force(platform)?;
    let sf = Quantity::new(platform.buoyancy_safety_factor, Unit::Dimensionless)?;
    let g = Quantity::new(platform.gravity, Unit::MeterPerSecondSquared)?;
    Ok(fb.try_div(sf)?.try_div(g)?)
}

/// Yield strength over peak stress.
pub fn structural_safety_factor<T: Scalar>(check: &StructuralCheck<T>) -> Result<T, SpecError> {
    if check.maximum_stress == T::zero() {
        return Err(SpecError::ZeroStress);
    }
    let yield_q = Quantity::new(check.yield_strength, Unit::Megapascal)?;
    let stress = Quantity::new(check.maximum_stress, Unit::Megapascal)?;
    Ok(yield_q.try_div(stress)?.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompatibilityRule {
    NegativelyBuoyant,
    WithinWinchPayload,
    WithinPlatformCapacity,
}

impl fmt::Display for CompatibilityRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompatibilityRule::NegativelyBuoyant => "probe negatively buoyant (wet weight > 0)",
            CompatibilityRule::WithinWinchPayload => "probe mass within winch payload",
            CompatibilityRule::WithinPlatformCapacity => "dry mass + payload within flotation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleVerdict<T> {
    pub rule: CompatibilityRule,
    pub measured: Quantity<T>,
    pub limit: Quantity<T>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport<T> {
    pub verdicts: Vec<RuleVerdict<T>>,
}

impl<T> CompatibilityReport<T> {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, rule: CompatibilityRule) -> Option<&RuleVerdict<T>> {
        self.verdicts.iter().find(|v| v.rule == rule)
    }
}

/// Evaluate whether a probe can be carried by the winch and platform.
/// Rule failures are reported, not returned as errors.
pub fn check_probe_compatibility<T: Scalar>(
    probe: &ProbeSpec<T>,
    winch: &WinchSpec<T>,
    platform: &PlatformSpec<T>,
) -> Result<CompatibilityReport<T>, SpecError> {
    let wet = probe.wet_weight(platform.water_density, platform.gravity);
    let buoyant = RuleVerdict {
        rule: CompatibilityRule::NegativelyBuoyant,
        measured: Quantity::new(wet, Unit::Newton)?,
        limit: Quantity::new(T::zero(), Unit::Newton)?,
        passed: wet > T::zero(),
    };
    let payload = RuleVerdict {
        rule: CompatibilityRule::WithinWinchPayload,
        measured: Quantity::new(probe.mass_air, Unit::Kilogram)?,
        limit: Quantity::new(winch.max_payload, Unit::Kilogram)?,
        passed: probe.mass_air <= winch.max_payload,
    };
    let capacity = max_total_weight(platform)?;
    let loaded = Quantity::new(platform.dry_mass, Unit::Kilogram)?
        .try_add(Quantity::new(probe.mass_air, Unit::Kilogram)?)?;
    let platform_rule = RuleVerdict {
        rule: CompatibilityRule::WithinPlatformCapacity,
        passed: loaded.value() <= capacity.value(),
        measured: loaded,
        limit: capacity,
    };
    Ok(CompatibilityReport {
        verdicts: vec![buoyant, payload, platform_rule],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn platform(rho: f64, g: f64, v_total: f64, sf: f64) -> PlatformSpec<f64> {
        PlatformSpec {
            pontoon_volume_each: v_total,
            pontoon_count: 1,
            water_density: rho,
            gravity: g,
            buoyancy_safety_factor: sf,
            dry_mass: 0.0,
        }
    }

    #[test]
    fn buoyant_force_examples() {
        let fb = buoyant_force(&PlatformSpec::<f64>::twin_pontoon()).unwrap();
        assert_eq!(fb.unit(), Unit::Newton);
        // 997 * 9.81 * 0.1284
        assert!((fb.value() - 1255.825188).abs() < 1e-6);
        assert!((fb.value() - 1256.8).abs() / 1256.8 < 0.002);

        assert_eq!(buoyant_force(&platform(997.0, 9.81, 0.0, 1.2)).unwrap().value(), 0.0);
        assert_eq!(
            buoyant_force(&platform(1000.0, 10.0, 0.5, 1.2)).unwrap().value(),
            5000.0
        );
    }

    #[test]
    fn max_total_weight_examples() {
        // F_b = 1256.8 N expressed through g = 9.81 and a matching volume.
        let g = 9.81;
        let p = platform(1.0, g, 1256.8 / g, 1.2);
        let w = max_total_weight(&p).unwrap();
        assert_eq!(w.unit(), Unit::Kilogram);
        assert!((w.value() - 106.76).abs() < 0.005, "{}", w.value());

        let p = platform(1.0, g, 100.0, 1.0);
        assert!((max_total_weight(&p).unwrap().value() - 100.0).abs() < 1e-12);

        let w = max_total_weight(&PlatformSpec::<f64>::twin_pontoon()).unwrap();
        let oracle = 997.0 * 0.1284 / 1.2;
        assert!((w.value() - oracle).abs() < 1e-9);
        assert!((w.value() - 106.679).abs() < 1e-9);
    }

    #[test]
    fn structural_safety_factor_examples() {
        let sf = structural_safety_factor(&StructuralCheck::<f64>::aluminium_frame()).unwrap();
        assert!((sf - 8.16).abs() <= 0.01);
        let check = |y: f64, m: f64| {
            structural_safety_factor(&StructuralCheck {
                yield_strength: y,
                maximum_stress: m,
            })
        };
        assert_eq!(check(120.0, 120.0).unwrap(), 1.0);
        assert_eq!(check(100.0, 25.0).unwrap(), 4.0);
        assert_eq!(check(120.0, 0.0), Err(SpecError::ZeroStress));
    }

    #[test]
    fn compatibility_examples() {
        let winch = WinchSpec::<f64>::trac_fisherman_25();
        let plat = PlatformSpec::<f64>::twin_pontoon();
        let mut probe = ProbeSpec::<f64>::exo1();
        probe.mass_air = 1.5;
        probe.volume = 0.0008;
        let report = check_probe_compatibility(&probe, &winch, &plat).unwrap();
        let a = report.verdict(CompatibilityRule::NegativelyBuoyant).unwrap();
        assert!(a.passed);
        let oracle = 1.5 * 9.81 - 997.0 * 9.81 * 0.0008;
        assert!((a.measured.value() - oracle).abs() < 1e-12);
        assert!((a.measured.value() - 6.89).abs() < 0.01);

        probe.mass_air = 11.340;
        let report = check_probe_compatibility(&probe, &winch, &plat).unwrap();
        assert!(report.verdict(CompatibilityRule::WithinWinchPayload).unwrap().passed);

        probe.mass_air = 1.5;
        probe.volume = 0.002;
        let report = check_probe_compatibility(&probe, &winch, &plat).unwrap();
        assert!(!report.verdict(CompatibilityRule::NegativelyBuoyant).unwrap().passed);
        assert!(!report.all_passed());
    }

    #[test]
    fn default_assembly_is_compatible() {
        let report = check_probe_compatibility(
            &ProbeSpec::<f64>::exo1(),
            &WinchSpec::trac_fisherman_25(),
            &PlatformSpec::twin_pontoon(),
        )
        .unwrap();
        assert!(report.all_passed(), "{report:?}");
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut p = PlatformSpec::<f64>::twin_pontoon();
        p.pontoon_count = 0;
        assert!(p.validate().is_err());
        let mut p = PlatformSpec::<f64>::twin_pontoon();
        p.buoyancy_safety_factor = 0.9;
        assert!(p.validate().is_err());
        let mut probe = ProbeSpec::<f64>::exo1();
        probe.parameter_list.clear();
        assert!(probe.validate().is_err());
        let mut w = WinchSpec::<f64>::trac_fisherman_25();
        w.min_relay_dwell = 0.0;
        assert!(w.validate().is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let fb = buoyant_force(&PlatformSpec::<f32>::twin_pontoon()).unwrap();
        assert!((fb.value() - 1255.816).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn buoyant_force_is_linear(k in 0.01f64..100.0, rho in 500.0f64..1100.0,
                                   g in 1.0f64..20.0, v in 0.001f64..1.0) {
            let base = buoyant_force(&platform(rho, g, v, 1.0)).unwrap().value();
            for scaled in [
                platform(k * rho, g, v, 1.0),
                platform(rho, k * g, v, 1.0),
                platform(rho, g, k * v, 1.0),
            ] {
                let f = buoyant_force(&scaled).unwrap().value();
                prop_assert!((f - k * base).abs() <= 1e-12 * (k * base).abs());
            }
        }

        #[test]
        fn max_weight_round_trips_to_buoyant_force(rho in 500.0f64..1100.0, g in 1.0f64..20.0,
                                                   v in 0.001f64..1.0, sf in 1.0f64..5.0) {
            let p = platform(rho, g, v, sf);
            let w = max_total_weight(&p).unwrap().value();
            let fb = buoyant_force(&p).unwrap().value();
            prop_assert!((w * sf * g - fb).abs() <= 4.0 * f64::EPSILON * fb);
        }

        #[test]
        fn lighter_probe_never_fails_payload_rule(m in 0.1f64..20.0, dm in 0.0f64..5.0) {
            let winch = WinchSpec::<f64>::trac_fisherman_25();
            let plat = PlatformSpec::<f64>::twin_pontoon();
            let mut probe = ProbeSpec::<f64>::exo1();
            probe.mass_air = m;
            let heavy = check_probe_compatibility(&probe, &winch, &plat).unwrap();
            probe.mass_air = (m - dm).max(0.01);
            let light = check_probe_compatibility(&probe, &winch, &plat).unwrap();
            let rule = CompatibilityRule::WithinWinchPayload;
            if heavy.verdict(rule).unwrap().passed {
                prop_assert!(light.verdict(rule).unwrap().passed);
            }
        }
    }
}
