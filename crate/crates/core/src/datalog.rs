//! Geo-tagged sample records and the data products built from them.
//!
//! Logs are newline-delimited JSON, one record per line. A CSV export uses
//! the fixed column order `timestamp, lat, lon, depth, mode` followed by the
//! parameters in alphabetical order.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

use crate::controller::ControllerMode;

pub const DEFAULT_BIN_WIDTH: f64 = 0.5;
pub const DEFAULT_FLUSH_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    /// Seconds since the start of the simulation.
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    /// Measured depth, m.
    pub depth: f64,
    pub mode: ControllerMode,
    pub values: BTreeMap<String, f64>,
}

impl SampleRecord {
    pub fn validate(&self, parameters: Option<&[String]>) -> Result<(), LogError> {
        let bad = |m: String| Err(LogError::InvalidRecord(m));
        if ![self.timestamp, self.lat, self.lon, self.depth].iter().all(|v| v.is_finite()) {
            return bad("non-finite timestamp, position or depth".into());
        }
        if self.depth < 0.0 {
            return bad(format!("negative depth {}", self.depth));
        }
        if let Some((k, _)) = self.values.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("non-finite value for `{k}`"));
        }
        if let Some(params) = parameters {
            let expected: BTreeSet<&str> = params.iter().map(String::as_str).collect();
            let got: BTreeSet<&str> = self.values.keys().map(String::as_str).collect();
            if expected != got {
                return bad(format!("value keys {got:?} do not match parameters {expected:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("timestamp {got} is not after the previous record ({last})")]
    OutOfOrder { last: f64, got: f64 },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Append-only record log.
pub struct DataLog<W: Write> {
    out: BufWriter<W>,
    parameters: Option<Vec<String>>,
    last_timestamp: Option<f64>,
    len: usize,
    flush_every: usize,
    unflushed: usize,
}

impl DataLog<File> {
    pub fn create(path: &Path, parameters: Option<Vec<String>>) -> Result<Self, LogError> {
        Ok(Self::new(File::create(path)?, parameters))
    }
}

impl<W: Write> DataLog<W> {
    pub fn new(writer: W, parameters: Option<Vec<String>>) -> Self {
        Self {
            out: BufWriter::new(writer),
            parameters,
            last_timestamp: None,
            len: 0,
            flush_every: DEFAULT_FLUSH_EVERY,
            unflushed: 0,
        }
    }

    /// Flush after every `n` records (`n >= 1`).
    pub fn with_flush_every(mut self, n: usize) -> Self {
        self.flush_every = n.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn append_record(&mut self, record: &SampleRecord) -> Result<(), LogError> {
        record.validate(self.parameters.as_deref())?;
        if let Some(last) = self.last_timestamp {
            if !(record.timestamp > last) {
                return Err(LogError::OutOfOrder {
                    last,
                    got: record.timestamp,
                });
            }
        }
        let line = serde_json::to_string(record).map_err(io::Error::from)?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.last_timestamp = Some(record.timestamp);
        self.len += 1;
        self.unflushed += 1;
        if self.unflushed >= self.flush_every {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush()?;
        self.unflushed = 0;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, LogError> {
        self.out.into_inner().map_err(|e| LogError::Io(e.into_error()))
    }
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<SampleRecord>, LogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<SampleRecord>, LogError> {
    read_records(BufReader::new(File::open(path)?))
}

fn parameter_names(records: &[SampleRecord]) -> Vec<String> {
    let names: BTreeSet<&String> = records.iter().flat_map(|r| r.values.keys()).collect();
    names.into_iter().cloned().collect()
}

/// Tabular export. Missing values are left empty.
pub fn write_csv<W: Write>(records: &[SampleRecord], writer: W) -> Result<(), LogError> {
    let params = parameter_names(records);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp", "lat", "lon", "depth", "mode"];
    header.extend(params.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.timestamp.to_string(),
            r.lat.to_string(),
            r.lon.to_string(),
            r.depth.to_string(),
            r.mode.to_string(),
        ];
        row.extend(params.iter().map(|p| r.values.get(p).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub timestamp: f64,
    pub depth: f64,
    pub mode: ControllerMode,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// Position of the first record, `lat,lon` to 5 decimals.
    pub station_id: String,
    /// 0-based cast number in the log.
    pub cast: usize,
    pub points: Vec<ProfilePoint>,
    /// Cast ended in a fault rather than a hold.
    pub faulted: bool,
}

impl Profile {
    pub fn max_depth(&self) -> f64 {
        self.points.iter().map(|p| p.depth).fold(0.0, f64::max)
    }
}

fn is_travel(mode: ControllerMode) -> bool {
    matches!(mode, ControllerMode::Deploying | ControllerMode::Retrieving)
}

/// Split a time-ordered log into casts. A cast is a run of Deploying or
/// Retrieving records that ends in Holding (the hold is included) or in a
/// fault. Travel that ends any other way, e.g. surfacing for transit, is not
/// a cast.
pub fn assemble_profiles(records: &[SampleRecord]) -> Vec<Profile> {
    let mut profiles = Vec::new();
    let mut travel: Vec<&SampleRecord> = Vec::new();
    let mut current: Option<Profile> = None;

    let point = |r: &SampleRecord| ProfilePoint {
        timestamp: r.timestamp,
        depth: r.depth,
        mode: r.mode,
        values: r.values.clone(),
    };
    let open = |run: &[&SampleRecord], n: usize| Profile {
        station_id: format!("{:.5},{:.5}", run[0].lat, run[0].lon),
        cast: n,
        points: run.iter().map(|r| point(r)).collect(),
        faulted: false,
    };

    for r in records {
        match r.mode {
            m if is_travel(m) => {
                if let Some(p) = current.take() {
                    profiles.push(p);
                }
                travel.push(r);
            }
            ControllerMode::Holding => {
                if let Some(p) = current.as_mut() {
                    p.points.push(point(r));
                } else if !travel.is_empty() {
                    let mut p = open(&travel, profiles.len());
                    p.points.push(point(r));
                    current = Some(p);
                    travel.clear();
                }
            }
            ControllerMode::Fault => {
                if let Some(p) = current.take() {
                    profiles.push(p);
                } else if !travel.is_empty() {
                    let mut p = open(&travel, profiles.len());
                    p.faulted = true;
                    profiles.push(p);
                }
                travel.clear();
            }
            _ => {
                if let Some(p) = current.take() {
                    profiles.push(p);
                }
                travel.clear();
            }
        }
    }
    if let Some(p) = current {
        profiles.push(p);
    }
    profiles
}

pub fn write_profiles_csv<W: Write>(profiles: &[Profile], writer: W) -> Result<(), LogError> {
    let names: BTreeSet<&String> = profiles
        .iter()
        .flat_map(|p| p.points.iter().flat_map(|q| q.values.keys()))
        .collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["station_id", "cast", "timestamp", "depth", "mode"];
    header.extend(names.iter().map(|s| s.as_str()));
    w.write_record(&header)?;
    for p in profiles {
        for q in &p.points {
            let mut row = vec![
                p.station_id.clone(),
                p.cast.to_string(),
                q.timestamp.to_string(),
                q.depth.to_string(),
                q.mode.to_string(),
            ];
            row.extend(names.iter().map(|n| q.values.get(*n).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBin {
    pub depth_low: f64,
    pub depth_high: f64,
    pub count: usize,
    /// Mean of the min-max normalized values.
    pub mean: f64,
    /// Population standard deviation of the normalized values.
    pub std: f64,
    pub raw_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSummary {
    pub parameter: String,
    pub bin_width: f64,
    pub min: f64,
    pub max: f64,
    /// Every value was equal; bins report 0.5 by convention.
    pub constant: bool,
    pub bins: Vec<DepthBin>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SummaryError {
    #[error("need at least 2 records with `{parameter}`, found {found}")]
    InsufficientData { parameter: String, found: usize },
    #[error("bin width must be > 0")]
    InvalidBinWidth,
}

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite value")
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Min-max normalize `parameter` over the whole dataset and summarize it in
/// depth bins of `bin_width` metres.
///
/// Normalization and the bin statistics are computed in exact rational
/// arithmetic, so applying `v -> a·v + b` (a > 0) to values that stay exactly
/// representable leaves every output bit-identical.
pub fn depth_normalized_summary(
    records: &[SampleRecord],
    parameter: &str,
    bin_width: f64,
) -> Result<NormalizedSummary, SummaryError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(SummaryError::InvalidBinWidth);
    }
    let data: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.values.get(parameter).map(|v| (r.depth, *v)))
        .collect();
    if data.len() < 2 {
        return Err(SummaryError::InsufficientData {
            parameter: parameter.to_string(),
            found: data.len(),
        });
    }
    let min = data.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    let max = data.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
    let constant = min == max;
    let lo = exact(min);
    let span = exact(max) - &lo;

    let mut bins: BTreeMap<i64, Vec<(BigRational, f64)>> = BTreeMap::new();
    for (depth, v) in &data {
        let idx = (depth / bin_width).floor() as i64;
        let norm = if constant {
            BigRational::new(BigInt::from(1), BigInt::from(2))
        } else {
            (exact(*v) - &lo) / &span
        };
        bins.entry(idx).or_default().push((norm, *v));
    }

    let bins = bins
        .into_iter()
        .map(|(idx, vals)| {
            let n = BigRational::from_integer(BigInt::from(vals.len()));
            let sum = vals.iter().fold(BigRational::zero(), |acc, (x, _)| acc + x);
            let mean = sum / &n;
            let var = vals.iter().fold(BigRational::zero(), |acc, (x, _)| {
                let d = x - &mean;
                acc + &d * &d
            }) / &n;
            DepthBin {
                depth_low: idx as f64 * bin_width,
                depth_high: (idx + 1) as f64 * bin_width,
                count: vals.len(),
                mean: to_f64(&mean),
                std: to_f64(&var).sqrt(),
                raw_mean: vals.iter().map(|v| v.1).sum::<f64>() / vals.len() as f64,
            }
        })
        .collect();

    Ok(NormalizedSummary {
        parameter: parameter.to_string(),
        bin_width,
        min,
        max,
        constant,
        bins,
    })
}

pub fn write_summary_csv<W: Write>(summary: &NormalizedSummary, writer: W) -> Result<(), LogError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "depth_low", "depth_high", "count", "mean", "std", "raw_mean", "constant"])?;
    for b in &summary.bins {
        w.write_record([
            summary.parameter.clone(),
            b.depth_low.to_string(),
            b.depth_high.to_string(),
            b.count.to_string(),
            b.mean.to_string(),
            b.std.to_string(),
            b.raw_mean.to_string(),
            summary.constant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
