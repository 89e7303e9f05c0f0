//! Hourly carbon-intensity traces and the per-client carbon cost matrix derived from them.
//!
//! Traces are read from a long-format CSV (`timestamp,region,ci_kg_per_kwh`, one row per
//! region-hour). A client draws a fixed power `P_c`, so over a one-hour slot it consumes
//! `E_c = P_c * 1h` and is charged `g_c(t) = E_c * CI_region(c)(t)` kgCO2e.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDateTime, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub const CSV_HEADER: [&str; 3] = ["timestamp", "region", "ci_kg_per_kwh"];
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Error)]
pub enum CiError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error at line {line}: {message}")]
    Schema { line: u64, message: String },
    #[error("region {region} has no value for hour {hour} ({timestamp})")]
    Gap {
        region: String,
        hour: usize,
        timestamp: String,
    },
    #[error("unknown region: {0}")]
    UnknownRegion(String),
    #[error("region listed twice: {0}")]
    DuplicateRegion(String),
    #[error("start time {0} is not aligned to an hour boundary")]
    NotHourAligned(String),
    #[error("horizon of {requested} slots exceeds the {available} available")]
    HorizonTooLong { requested: usize, available: usize },
    #[error("invalid trace data: {0}")]
    InvalidTrace(String),
    #[error("invalid client profile for client {client}: {message}")]
    InvalidProfile { client: usize, message: String },
    #[error("invalid cost matrix: {0}")]
    InvalidMatrix(String),
}

pub type Result<T, E = CiError> = std::result::Result<T, E>;

/// What to do when a requested region-hour is absent from the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    #[default]
    Reject,
    ForwardFill,
}

/// Per-region hourly carbon intensity (kgCO2e/kWh) over `[start, start + hours)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CiTraceSet {
    regions: Vec<String>,
    start: DateTime<Utc>,
    values: Vec<Vec<f64>>,
    hours: usize,
}

impl CiTraceSet {
    pub fn new(regions: Vec<String>, start: DateTime<Utc>, values: Vec<Vec<f64>>) -> Result<Self> {
        check_hour_aligned(start)?;
        if regions.len() != values.len() {
            return Err(CiError::InvalidTrace(format!(
                "{} regions but {} value rows",
                regions.len(),
                values.len()
            )));
        }
        let mut seen = HashSet::new();
        for r in &regions {
            if !seen.insert(r.as_str()) {
                return Err(CiError::DuplicateRegion(r.clone()));
            }
        }
        let hours = values.first().map_or(0, Vec::len);
        for (region, row) in regions.iter().zip(&values) {
            if row.len() != hours {
                return Err(CiError::InvalidTrace(format!(
                    "region {region} has {} hours, expected {hours}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(CiError::InvalidTrace(format!(
                    "region {region} has invalid intensity {v}"
                )));
            }
        }
        Ok(Self {
            regions,
            start,
            values,
            hours,
        })
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn region_index(&self, region: &str) -> Option<usize> {
        self.regions.iter().position(|r| r == region)
    }

    pub fn series(&self, region: &str) -> Option<&[f64]> {
        self.region_index(region).map(|i| self.values[i].as_slice())
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Writes the traces in the ingestion CSV schema, hour-major, values at 6 fractional digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_csv_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(csv_io)?;
        for h in 0..self.hours {
            let ts = format_timestamp(self.start + Duration::hours(h as i64));
            for (region, row) in self.regions.iter().zip(&self.values) {
                w.write_record([ts.as_str(), region.as_str(), &format!("{:.6}", row[h])])
                    .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of [`load_ci_traces`]: the traces plus how many cells were forward-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTraces {
    pub traces: CiTraceSet,
    pub filled_count: usize,
}

/// UTC hour stamps used throughout the traces.
pub type Timestamp = DateTime<Utc>;

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let naive = NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT).ok()?;
    if naive.minute() != 0 || naive.second() != 0 {
        return None;
    }
    Some(naive.and_utc())
}

fn check_hour_aligned(ts: DateTime<Utc>) -> Result<()> {
    if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
        return Err(CiError::NotHourAligned(ts.to_rfc3339()));
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> CiError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CiError::Io(io),
        other => CiError::Schema {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads every row of a CI CSV, keyed by region then timestamp. Duplicate keys are rejected.
fn read_rows(path: &Path) -> Result<HashMap<String, BTreeMap<DateTime<Utc>, f64>>> {
    if !path.exists() {
        return Err(CiError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_io)?;
    let headers = reader.headers().map_err(csv_io)?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(CiError::Schema {
            line: 1,
            message: format!("expected header `{}`, found `{}`", CSV_HEADER.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut rows: HashMap<String, BTreeMap<DateTime<Utc>, f64>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_io)?;
        let line = record.position().map_or(0, |p| p.line());
        let schema = |message: String| CiError::Schema { line, message };
        if record.len() != 3 {
            return Err(schema(format!("expected 3 columns, found {}", record.len())));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| schema(format!("bad timestamp `{}`", &record[0])))?;
        let region = record[1].to_string();
        if region.is_empty() {
            return Err(schema("empty region".into()));
        }
        let value: f64 = record[2]
            .parse()
            .map_err(|_| schema(format!("bad intensity `{}`", &record[2])))?;
        if !value.is_finite() || value < 0.0 {
            return Err(schema(format!("intensity must be finite and non-negative, got {value}")));
        }
        if rows.entry(region.clone()).or_default().insert(ts, value).is_some() {
            return Err(schema(format!("duplicate row for ({}, {region})", &record[0])));
        }
    }
    Ok(rows)
}

/// Loads `hours` hourly values starting at `start` for each requested region.
///
/// Under [`GapPolicy::ForwardFill`] a missing hour takes the latest earlier value in the file
/// for that region (which may precede `start`); a gap with no earlier value is still an error.
pub fn load_ci_traces(
    path: impl AsRef<Path>,
    regions: &[String],
    start: DateTime<Utc>,
    hours: usize,
    gap_policy: GapPolicy,
) -> Result<LoadedTraces> {
    check_hour_aligned(start)?;
    let rows = read_rows(path.as_ref())?;

    let mut values = Vec::with_capacity(regions.len());
    let mut filled_count = 0;
    for region in regions {
        let series = rows
            .get(region)
            .ok_or_else(|| CiError::UnknownRegion(region.clone()))?;
        let mut row = Vec::with_capacity(hours);
        for h in 0..hours {
            let ts = start + Duration::hours(h as i64);
            if let Some(v) = series.get(&ts) {
                row.push(*v);
                continue;
            }
            let gap = || CiError::Gap {
                region: region.clone(),
                hour: h,
                timestamp: format_timestamp(ts),
            };
            match gap_policy {
                GapPolicy::Reject => return Err(gap()),
                GapPolicy::ForwardFill => {
                    // Earlier hours of the window are already resolved in `row`.
                    let prior = match row.last() {
                        Some(v) => Some(*v),
                        None => series.range(..ts).next_back().map(|(_, v)| *v),
                    };
                    row.push(prior.ok_or_else(gap)?);
                    filled_count += 1;
                }
            }
        }
        values.push(row);
    }

    Ok(LoadedTraces {
        traces: CiTraceSet::new(regions.to_vec(), start, values)?,
        filled_count,
    })
}

/// Regions and time span of a CI file.
#[derive(Debug, Clone, PartialEq)]
pub struct CiFileSummary {
    /// Sorted region names.
    pub regions: Vec<String>,
    pub first: Option<DateTime<Utc>>,
    pub last: Option<DateTime<Utc>>,
}

impl CiFileSummary {
    /// Hours from the first to the last timestamp, inclusive.
    pub fn span_hours(&self) -> usize {
        match (self.first, self.last) {
            (Some(a), Some(b)) => (b - a).num_hours() as usize + 1,
            _ => 0,
        }
    }
}

pub fn inspect_ci_file(path: impl AsRef<Path>) -> Result<CiFileSummary> {
    let rows = read_rows(path.as_ref())?;
    let mut regions: Vec<String> = rows.keys().cloned().collect();
    regions.sort();
    let first = rows.values().filter_map(|s| s.keys().next().copied()).min();
    let last = rows.values().filter_map(|s| s.keys().next_back().copied()).max();
    Ok(CiFileSummary { regions, first, last })
}

/// A client bound to one region with a constant power draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: usize,
    pub region: String,
    pub power_kw: f64,
}

impl ClientProfile {
    pub fn new(client_id: usize, region: impl Into<String>, power_kw: f64) -> Self {
        Self {
            client_id,
            region: region.into(),
            power_kw,
        }
    }

    /// Energy over one one-hour slot.
    pub fn energy_per_slot_kwh(&self) -> f64 {
        self.power_kw * 1.0
    }
}

/// `costs[c][t]` is the kgCO2e charged for running client `c` in slot `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CarbonCostMatrix<S> {
    rows: Vec<Vec<S>>,
    g_max: S,
}

impl<S: Scalar> CarbonCostMatrix<S> {
    pub fn new(rows: Vec<Vec<S>>) -> Result<Self> {
        let horizon = rows.first().map_or(0, Vec::len);
        if rows.is_empty() {
            return Err(CiError::InvalidMatrix("no clients".into()));
        }
        if rows.iter().any(|r| r.len() != horizon) {
            return Err(CiError::InvalidMatrix("rows have different lengths".into()));
        }
        let mut g_max = S::zero();
        for &v in rows.iter().flatten() {
            if !v.is_finite() || v < S::zero() {
                return Err(CiError::InvalidMatrix(format!("entry {v} is not a finite non-negative cost")));
            }
            if v > g_max {
                g_max = v;
            }
        }
        Ok(Self { rows, g_max })
    }

    pub fn clients(&self) -> usize {
        self.rows.len()
    }

    pub fn horizon(&self) -> usize {
        self.rows[0].len()
    }

    #[inline]
    pub fn cost(&self, client: usize, slot: usize) -> S {
        self.rows[client][slot]
    }

    pub fn row(&self, client: usize) -> &[S] {
        &self.rows[client]
    }

    pub fn rows(&self) -> &[Vec<S>] {
        &self.rows
    }

    /// Largest entry; the constant that turns cost minimisation into utility maximisation.
    pub fn g_max(&self) -> S {
        self.g_max
    }

    pub fn total(&self) -> S {
        self.rows.iter().flatten().copied().sum()
    }

    /// Cost of running every client in `slot`.
    pub fn slot_total(&self, slot: usize) -> S {
        self.rows.iter().map(|r| r[slot]).sum()
    }

    /// Sub-matrix of slots `[offset, offset + len)`; `g_max` is recomputed for the window.
    pub fn window(&self, offset: usize, len: usize) -> Result<Self> {
        if offset + len > self.horizon() {
            return Err(CiError::HorizonTooLong {
                requested: offset + len,
                available: self.horizon(),
            });
        }
        Self::new(self.rows.iter().map(|r| r[offset..offset + len].to_vec()).collect())
    }
}

/// Builds `g_c(t) = E_c * CI_region(c)(t)` for the first `horizon` hours of `traces`.
pub fn carbon_cost_matrix<S: Scalar>(
    traces: &CiTraceSet,
    profiles: &[ClientProfile],
    horizon: usize,
) -> Result<CarbonCostMatrix<S>> {
    if horizon > traces.hours() {
        return Err(CiError::HorizonTooLong {
            requested: horizon,
            available: traces.hours(),
        });
    }
    let mut rows = Vec::with_capacity(profiles.len());
    for p in profiles {
        if !(p.power_kw.is_finite() && p.power_kw > 0.0) {
            return Err(CiError::InvalidProfile {
                client: p.client_id,
                message: format!("power_kw must be positive, got {}", p.power_kw),
            });
        }
        let series = traces
            .series(&p.region)
            .ok_or_else(|| CiError::UnknownRegion(p.region.clone()))?;
        let energy = S::of(p.energy_per_slot_kwh());
        rows.push(series[..horizon].iter().map(|&ci| energy * S::of(ci)).collect());
    }
    CarbonCostMatrix::new(rows)
}

/// Shape of one synthetic region: a daily sinusoid plus AR(1) noise, clamped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProfile {
    pub name: String,
    pub mean: f64,
    pub daily_amplitude: f64,
    /// Hour of the daily minimum.
    pub trough_hour: f64,
    pub noise_std: f64,
    /// AR(1) coefficient of the noise; close to 1 gives multi-day weather swings.
    pub noise_persistence: f64,
}

impl RegionProfile {
    fn new(name: &str, mean: f64, amp: f64, trough: f64, noise: f64, persistence: f64) -> Self {
        Self {
            name: name.to_string(),
            mean,
            daily_amplitude: amp,
            trough_hour: trough,
            noise_std: noise,
            noise_persistence: persistence,
        }
    }
}

/// Seven European-like regions, from coal-heavy and volatile to nuclear/hydro and flat.
pub fn fixture_region_profiles() -> Vec<RegionProfile> {
    vec![
        RegionProfile::new("BE", 0.160, 0.040, 3.0, 0.020, 0.95),
        RegionProfile::new("GB", 0.220, 0.060, 4.0, 0.040, 0.97),
        RegionProfile::new("IE", 0.330, 0.080, 4.0, 0.060, 0.98),
        RegionProfile::new("FI", 0.100, 0.025, 2.0, 0.020, 0.95),
        RegionProfile::new("SE", 0.030, 0.008, 3.0, 0.005, 0.90),
        RegionProfile::new("DE", 0.400, 0.100, 13.0, 0.060, 0.97),
        RegionProfile::new("FR", 0.060, 0.020, 4.0, 0.008, 0.93),
    ]
}

pub const FIXTURE_SEED: u64 = 2022;
pub const FIXTURE_HOURS: usize = 336;

/// First hour of the bundled fixture, 2022-01-01T00:00Z.
pub fn fixture_start() -> DateTime<Utc> {
    parse_timestamp("2022-01-01T00:00:00Z").expect("valid timestamp")
}

/// The bundled fixture traces: two weeks of [`fixture_region_profiles`].
pub fn fixture_traces() -> CiTraceSet {
    synthetic_traces(&fixture_region_profiles(), fixture_start(), FIXTURE_HOURS, FIXTURE_SEED)
        .expect("fixture profiles are valid")
}

/// One 300 W client per fixture region, ids starting at 1.
pub fn fixture_client_profiles() -> Vec<ClientProfile> {
    fixture_region_profiles()
        .iter()
        .enumerate()
        .map(|(i, r)| ClientProfile::new(i + 1, r.name.clone(), 0.3))
        .collect()
}

/// Generates deterministic synthetic traces, rounded to 6 decimals so they survive a CSV round trip.
pub fn synthetic_traces(
    profiles: &[RegionProfile],
    start: DateTime<Utc>,
    hours: usize,
    seed: u64,
) -> Result<CiTraceSet> {
    let mut values = Vec::with_capacity(profiles.len());
    for (i, p) in profiles.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let innovation = p.noise_std * (1.0 - p.noise_persistence * p.noise_persistence).sqrt();
        let mut noise = p.noise_std * rng.sample::<f64, _>(StandardNormal);
        let first_hour = f64::from(start.hour());
        let row = (0..hours)
            .map(|h| {
                let hour_of_day = first_hour + h as f64;
                let phase = 2.0 * std::f64::consts::PI * (hour_of_day - p.trough_hour) / 24.0;
                let v = p.mean - p.daily_amplitude * phase.cos() + noise;
                noise = p.noise_persistence * noise + innovation * rng.sample::<f64, _>(StandardNormal);
                (v.max(0.0) * 1e6).round() / 1e6
            })
            .collect();
        values.push(row);
    }
    CiTraceSet::new(profiles.iter().map(|p| p.name.clone()).collect(), start, values)
}
