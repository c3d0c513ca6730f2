//! Lake-scale geodesy on a local tangent plane.

use serde::{Deserialize, Serialize};

/// Mean Earth radius, m.
pub const EARTH_RADIUS: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    /// Degrees north.
    pub lat: f64,
    /// Degrees east.
    pub lon: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    /// East/north offset in metres from `self` to `other`, projected on the
    /// tangent plane at their mid-latitude.
    pub fn offset_to(&self, other: &GeoPoint) -> (f64, f64) {
        let mid = ((self.lat + other.lat) * 0.5).to_radians();
        let east = (other.lon - self.lon).to_radians() * mid.cos() * EARTH_RADIUS;
        let north = (other.lat - self.lat).to_radians() * EARTH_RADIUS;
        (east, north)
    }

    pub fn distance_to(&self, other: &GeoPoint) -> f64 {
        let (e, n) = self.offset_to(other);
        e.hypot(n)
    }

    /// Compass bearing in radians (0 = north, clockwise positive).
    pub fn bearing_to(&self, other: &GeoPoint) -> f64 {
        let (e, n) = self.offset_to(other);
        e.atan2(n)
    }

    /// Point displaced by `east`/`north` metres.
    pub fn displaced(&self, east: f64, north: f64) -> GeoPoint {
        let lat = self.lat + (north / EARTH_RADIUS).to_degrees();
        let mid = ((self.lat + lat) * 0.5).to_radians();
        let lon = self.lon + (east / (EARTH_RADIUS * mid.cos())).to_degrees();
        GeoPoint { lat, lon }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HERTEL: GeoPoint = GeoPoint::new(45.54437, -73.15212);

    #[test]
    fn displacement_round_trips() {
        let p = HERTEL.displaced(120.0, -35.0);
        let (e, n) = HERTEL.offset_to(&p);
        assert!((e - 120.0).abs() < 1e-6);
        assert!((n + 35.0).abs() < 1e-6);
    }

    #[test]
    fn bearing_due_north_and_east() {
        assert!(HERTEL.bearing_to(&HERTEL.displaced(0.0, 50.0)).abs() < 1e-9);
        let east = HERTEL.bearing_to(&HERTEL.displaced(50.0, 0.0));
        assert!((east - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }
}
