//! Unit-checked physical quantities.
//!
//! Each [`Unit`] carries its SI dimension exponents and a scale to the
//! coherent SI unit, so products and quotients of quantities resolve back to a
//! named unit or fail loudly.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::scalar::Scalar;

/// Seconds per minute, for Table-style speeds quoted in m/min.
const SECONDS_PER_MINUTE: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "m")]
    Meter,
    #[serde(rename = "m/s")]
    MeterPerSecond,
    #[serde(rename = "m/s²")]
    MeterPerSecondSquared,
    #[serde(rename = "kg")]
    Kilogram,
    #[serde(rename = "N")]
    Newton,
    #[serde(rename = "Pa")]
    Pascal,
    #[serde(rename = "MPa")]
    Megapascal,
    #[serde(rename = "s")]
    Second,
    #[serde(rename = "V")]
    Volt,
    #[serde(rename = "m³")]
    CubicMeter,
    #[serde(rename = "kg/m³")]
    KilogramPerCubicMeter,
    #[serde(rename = "m²")]
    SquareMeter,
    /// Specific weight.
    #[serde(rename = "N/m³")]
    NewtonPerCubicMeter,
    #[serde(rename = "1")]
    Dimensionless,
}

/// Exponents of (kg, m, s, A).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims([i8; 4]);

impl Dims {
    fn mul(self, o: Dims) -> Dims {
        let mut d = self.0;
        for (a, b) in d.iter_mut().zip(o.0) {
            *a += b;
        }
        Dims(d)
    }

    fn div(self, o: Dims) -> Dims {
        let mut d = self.0;
        for (a, b) in d.iter_mut().zip(o.0) {
            *a -= b;
        }
        Dims(d)
    }
}

const ALL_UNITS: [Unit; 14] = [
    Unit::Dimensionless,
    Unit::Meter,
    Unit::MeterPerSecond,
    Unit::MeterPerSecondSquared,
    Unit::Kilogram,
    Unit::Newton,
    Unit::Pascal,
    Unit::Megapascal,
    Unit::Second,
    Unit::Volt,
    Unit::CubicMeter,
    Unit::KilogramPerCubicMeter,
    Unit::SquareMeter,
    Unit::NewtonPerCubicMeter,
];

impl Unit {
    fn dims(self) -> Dims {
        Dims(match self {
            Unit::Meter => [0, 1, 0, 0],
            Unit::MeterPerSecond => [0, 1, -1, 0],
            Unit::MeterPerSecondSquared => [0, 1, -2, 0],
            Unit::Kilogram => [1, 0, 0, 0],
            Unit::Newton => [1, 1, -2, 0],
            Unit::Pascal | Unit::Megapascal => [1, -1, -2, 0],
            Unit::Second => [0, 0, 1, 0],
            Unit::Volt => [1, 2, -3, -1],
            Unit::CubicMeter => [0, 3, 0, 0],
            Unit::KilogramPerCubicMeter => [1, -3, 0, 0],
            Unit::SquareMeter => [0, 2, 0, 0],
            Unit::NewtonPerCubicMeter => [1, -2, -2, 0],
            Unit::Dimensionless => [0, 0, 0, 0],
        })
    }

    /// Multiplier taking a value in this unit to the coherent SI unit.
    fn scale(self) -> f64 {
        match self {
            Unit::Megapascal => 1.0e6,
            _ => 1.0,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Meter => "m",
            Unit::MeterPerSecond => "m/s",
            Unit::MeterPerSecondSquared => "m/s²",
            Unit::Kilogram => "kg",
            Unit::Newton => "N",
            Unit::Pascal => "Pa",
            Unit::Megapascal => "MPa",
            Unit::Second => "s",
            Unit::Volt => "V",
            Unit::CubicMeter => "m³",
            Unit::KilogramPerCubicMeter => "kg/m³",
            Unit::SquareMeter => "m²",
            Unit::NewtonPerCubicMeter => "N/m³",
            Unit::Dimensionless => "",
        }
    }

    /// Whether a physical amount in this unit can never be negative.
    fn non_negative(self) -> bool {
        matches!(
            self,
            Unit::Kilogram | Unit::CubicMeter | Unit::SquareMeter | Unit::KilogramPerCubicMeter
        )
    }

    /// Coherent (scale 1) unit with the given dimensions, if one is named.
    fn coherent_for(dims: Dims) -> Option<Unit> {
        ALL_UNITS
            .iter()
            .copied()
            .find(|u| u.dims() == dims && u.scale() == 1.0)
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitError {
    #[error("unit mismatch: cannot combine {left} with {right}")]
    Mismatch { left: Unit, right: Unit },
    #[error("result of {op} has no named unit")]
    Unrepresentable { op: &'static str },
    #[error("negative {unit} quantity {value} is not physical")]
    Negative { unit: Unit, value: f64 },
    #[error("quantity value is not finite")]
    NotFinite,
}

/// A real value tagged with its unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity<T> {
    value: T,
    unit: Unit,
}

impl<T: Scalar> Quantity<T> {
    pub fn new(value: T, unit: Unit) -> Result<Self, UnitError> {
        if !value.is_finite() {
            return Err(UnitError::NotFinite);
        }
        if unit.non_negative() && value < T::zero() {
            return Err(UnitError::Negative {
                unit,
                value: value.as_f64(),
            });
        }
        Ok(Self { value, unit })
    }

    pub fn value(&self) -> T {
        self.value
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    /// Value expressed in `unit`, which must share this quantity's dimension.
    pub fn value_in(&self, unit: Unit) -> Result<T, UnitError> {
        if self.unit.dims() != unit.dims() {
            return Err(UnitError::Mismatch {
                left: self.unit,
                right: unit,
            });
        }
        Ok(self.value * T::lit(self.unit.scale() / unit.scale()))
    }

    pub fn convert_to(&self, unit: Unit) -> Result<Self, UnitError> {
        Self::new(self.value_in(unit)?, unit)
    }

    pub fn try_add(self, rhs: Self) -> Result<Self, UnitError> {
        let r = rhs.value_in(self.unit).map_err(|_| UnitError::Mismatch {
            left: self.unit,
            right: rhs.unit,
        })?;
        Self::new(self.value + r, self.unit)
    }

    pub fn try_sub(self, rhs: Self) -> Result<Self, UnitError> {
        let r = rhs.value_in(self.unit).map_err(|_| UnitError::Mismatch {
            left: self.unit,
            right: rhs.unit,
        })?;
        Self::new(self.value - r, self.unit)
    }

    pub fn try_mul(self, rhs: Self) -> Result<Self, UnitError> {
        let dims = self.unit.dims().mul(rhs.unit.dims());
        let unit = Unit::coherent_for(dims).ok_or(UnitError::Unrepresentable { op: "multiply" })?;
        let scale = T::lit(self.unit.scale() * rhs.unit.scale());
        Self::new(self.value * rhs.value * scale, unit)
    }

    pub fn try_div(self, rhs: Self) -> Result<Self, UnitError> {
        let dims = self.unit.dims().div(rhs.unit.dims());
        let unit = Unit::coherent_for(dims).ok_or(UnitError::Unrepresentable { op: "divide" })?;
        let scale = T::lit(self.unit.scale() / rhs.unit.scale());
        Self::new(self.value / rhs.value * scale, unit)
    }

    /// Multiply by a pure number.
    pub fn scale(self, k: T) -> Result<Self, UnitError> {
        Self::new(self.value * k, self.unit)
    }
}

impl<T: Scalar> fmt::Display for Quantity<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.unit {
            Unit::Dimensionless => write!(f, "{}", self.value),
            u => write!(f, "{} {}", self.value, u),
        }
    }
}

/// Convert a speed quoted in metres per minute to metres per second.
pub fn m_per_min_to_m_per_s<T: Scalar>(v: T) -> T {
    v / T::lit(SECONDS_PER_MINUTE)
}

pub fn m_per_s_to_m_per_min<T: Scalar>(v: T) -> T {
    v * T::lit(SECONDS_PER_MINUTE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(v: f64, u: Unit) -> Quantity<f64> {
        Quantity::new(v, u).unwrap()
    }

    #[test]
    fn density_times_gravity_times_volume_is_force() {
        let f = q(1000.0, Unit::KilogramPerCubicMeter)
            .try_mul(q(10.0, Unit::MeterPerSecondSquared))
            .and_then(|x| x.try_mul(q(0.5, Unit::CubicMeter)))
            .unwrap();
        assert_eq!(f.unit(), Unit::Newton);
        assert_eq!(f.value(), 5000.0);
    }

    #[test]
    fn force_over_acceleration_is_mass() {
        let m = q(981.0, Unit::Newton)
            .try_div(q(9.81, Unit::MeterPerSecondSquared))
            .unwrap();
        assert_eq!(m.unit(), Unit::Kilogram);
        assert!((m.value() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn adding_mismatched_units_fails() {
        let err = q(1.0, Unit::Meter).try_add(q(1.0, Unit::Second)).unwrap_err();
        assert!(matches!(err, UnitError::Mismatch { .. }));
    }

    #[test]
    fn pressure_units_convert() {
        let s = q(14.7, Unit::Megapascal);
        assert!((s.value_in(Unit::Pascal).unwrap() - 14.7e6).abs() < 1e-6);
        let sum = q(1.0, Unit::Megapascal).try_add(q(5.0e5, Unit::Pascal)).unwrap();
        assert!((sum.value() - 1.5).abs() < 1e-12);
        let ratio = q(120.0, Unit::Megapascal).try_div(q(120.0e6, Unit::Pascal)).unwrap();
        assert_eq!(ratio.unit(), Unit::Dimensionless);
        assert!((ratio.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_mass_volume_area_density_rejected() {
        for u in [
            Unit::Kilogram,
            Unit::CubicMeter,
            Unit::SquareMeter,
            Unit::KilogramPerCubicMeter,
        ] {
            assert!(matches!(
                Quantity::new(-1.0, u),
                Err(UnitError::Negative { .. })
            ));
        }
        // signed quantities are fine
        assert!(Quantity::new(-1.0, Unit::MeterPerSecond).is_ok());
    }

    #[test]
    fn unnamed_products_are_errors() {
        let err = q(1.0, Unit::Kilogram).try_mul(q(1.0, Unit::Kilogram)).unwrap_err();
        assert!(matches!(err, UnitError::Unrepresentable { .. }));
    }

    #[test]
    fn table_speeds_round_trip_through_m_per_min() {
        let payout: f64 = m_per_min_to_m_per_s(21.336);
        let retrieval: f64 = m_per_min_to_m_per_s(19.812);
        assert!((payout - 0.3556).abs() < 1e-4);
        assert!((retrieval - 0.3302).abs() < 1e-4);
        assert!((m_per_s_to_m_per_min(payout) - 21.336).abs() < 1e-12);
        assert!((m_per_s_to_m_per_min(retrieval) - 19.812).abs() < 1e-12);
    }
}
