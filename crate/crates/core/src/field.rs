//! Synthetic water-quality fields.
//!
//! Each parameter is a piecewise-linear function of depth, optionally with a
//! thermocline-style step, plus a smooth horizontal pattern and seeded noise.
//! Values are a pure function of `(seed, position, depth, time, parameter)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::geo::GeoPoint;

/// Change of vertical gradient below a given depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientBreak {
    pub depth: f64,
    /// Units per metre below `depth`.
    pub gradient: f64,
}

/// Discontinuity added to every value at or below `depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thermocline {
    pub depth: f64,
    pub step: f64,
}

/// `amplitude · sin(2π·east/λ) · cos(2π·north/λ)` around the field origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizontalVariation {
    pub amplitude: f64,
    /// m
    pub wavelength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterField {
    pub surface_value: f64,
    /// Units per metre from the surface down to the first break.
    #[serde(default)]
    pub gradient: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub breaks: Vec<GradientBreak>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermocline: Option<Thermocline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizontal: Option<HorizontalVariation>,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl ParameterField {
    pub fn linear(surface_value: f64, gradient: f64) -> Self {
        Self {
            surface_value,
            gradient,
            breaks: Vec::new(),
            thermocline: None,
            horizontal: None,
            noise_sigma: 0.0,
        }
    }

    /// Noise-free vertical profile at `depth`.
    pub fn profile(&self, depth: f64) -> f64 {
        let mut value = self.surface_value;
        let mut from = 0.0;
        let mut gradient = self.gradient;
        for b in &self.breaks {
            if depth <= b.depth {
                break;
            }
            value += gradient * (b.depth - from);
            from = b.depth;
            gradient = b.gradient;
        }
        value += gradient * (depth - from);
        if let Some(t) = &self.thermocline {
            if depth >= t.depth {
                value += t.step;
            }
        }
        value
    }

    fn horizontal_term(&self, east: f64, north: f64) -> f64 {
        match &self.horizontal {
            Some(h) if h.wavelength > 0.0 => {
                let k = std::f64::consts::TAU / h.wavelength;
                h.amplitude * (k * east).sin() * (k * north).cos()
            }
            _ => 0.0,
        }
    }

    pub fn validate(&self, name: &str) -> Result<(), String> {
        let finite = [self.surface_value, self.gradient, self.noise_sigma]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.noise_sigma < 0.0 {
            return Err(format!("field `{name}`: values must be finite, noise_sigma >= 0"));
        }
        if self.breaks.windows(2).any(|w| w[1].depth <= w[0].depth)
            || self.breaks.iter().any(|b| b.depth <= 0.0)
        {
            return Err(format!("field `{name}`: break depths must be positive and increasing"));
        }
        if let Some(h) = &self.horizontal {
            if !(h.wavelength > 0.0) {
                return Err(format!("field `{name}`: horizontal wavelength must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldModel {
    /// Reference point for the horizontal variation.
    pub origin: GeoPoint,
    pub parameters: BTreeMap<String, ParameterField>,
}

impl FieldModel {
    /// Evaluate every parameter at a point. No bounds checking on depth.
    pub fn evaluate(&self, at: GeoPoint, depth: f64, time: f64, seed: u64) -> BTreeMap<String, f64> {
        let (east, north) = self.origin.offset_to(&at);
        self.parameters
            .iter()
            .map(|(name, field)| {
                let mut v = field.profile(depth) + field.horizontal_term(east, north);
                if field.noise_sigma > 0.0 {
                    let key = noise_key(seed, &at, depth, time, name);
                    let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(key));
                    v += field.noise_sigma * z;
                }
                (name.clone(), v)
            })
            .collect()
    }

    /// A stratified small lake: every parameter changes with depth, oxygen
    /// and temperature through a step at the thermocline.
    pub fn stratified_lake(origin: GeoPoint) -> Self {
        let mut parameters = BTreeMap::new();
        parameters.insert(
            "temperature".to_string(),
            ParameterField {
                surface_value: 22.0,
                gradient: -0.2,
                breaks: vec![GradientBreak {
                    depth: 3.0,
                    gradient: -0.6,
                }],
                thermocline: Some(Thermocline {
                    depth: 4.0,
                    step: -3.0,
                }),
                horizontal: Some(HorizontalVariation {
                    amplitude: 0.15,
                    wavelength: 600.0,
                }),
                noise_sigma: 0.02,
            },
        );
        parameters.insert(
            "dissolved_oxygen".to_string(),
            ParameterField {
                surface_value: 8.8,
                gradient: -0.15,
                breaks: vec![],
                thermocline: Some(Thermocline {
                    depth: 4.5,
                    step: -2.5,
                }),
                horizontal: Some(HorizontalVariation {
                    amplitude: 0.3,
                    wavelength: 400.0,
                }),
                noise_sigma: 0.03,
            },
        );
        let simple = [
            ("conductivity", 180.0, 2.0, 0.5),
            ("ph", 7.9, -0.08, 0.01),
            ("orp", 380.0, -5.0, 1.0),
            ("salinity", 0.09, 0.001, 0.0005),
            ("turbidity", 1.2, 0.25, 0.05),
        ];
        for (name, surface, gradient, noise) in simple {
            let mut f = ParameterField::linear(surface, gradient);
            f.noise_sigma = noise;
            if name == "turbidity" {
                f.horizontal = Some(HorizontalVariation {
                    amplitude: 0.4,
                    wavelength: 500.0,
                });
            }
            parameters.insert(name.to_string(), f);
        }
        Self { origin, parameters }
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn noise_key(seed: u64, at: &GeoPoint, depth: f64, time: f64, name: &str) -> u64 {
    let mut h = splitmix(seed);
    for word in [at.lat.to_bits(), at.lon.to_bits(), depth.to_bits(), time.to_bits()] {
        h = splitmix(h ^ word);
    }
    for chunk in name.as_bytes().chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        h = splitmix(h ^ u64::from_le_bytes(buf));
    }
    h
}
