//! On-disk formats: GSF grid stacks, single-pixel CSV series, the JSON-lines
//! model store and metric reports.
//!
//! A GSF file is one UTF-8 JSON header line followed by a little-endian
//! `f32` payload laid out time-major, then latitude, then longitude.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::dist::{DistModel, ModelKind};
use crate::error::{Error, Result};
use crate::season_stats::Season;

pub const GSF_VERSION: u32 = 1;
pub const STORE_VERSION: u32 = 1;
pub const UNITS: &str = "mm/day";
/// Coordinate tolerance when checking that two stacks share a grid.
pub const GRID_TOLERANCE_DEG: f64 = 1e-9;

/// Dense daily stack of precipitation on a regular grid. Missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    lats: Vec<f64>,
    lons: Vec<f64>,
    start_date: NaiveDate,
    n_time: usize,
    values: Vec<f32>,
}

fn strictly_monotone(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
        && (v.windows(2).all(|w| w[0] < w[1]) || v.windows(2).all(|w| w[0] > w[1]))
}

impl GridStack {
    pub fn new(lats: Vec<f64>, lons: Vec<f64>, start_date: NaiveDate, n_time: usize, values: Vec<f32>) -> Result<Self> {
        if lats.is_empty() || lons.is_empty() {
            return Err(Error::DimensionMismatch("grid needs at least one latitude and longitude".into()));
        }
        if !strictly_monotone(&lats) || !strictly_monotone(&lons) {
            return Err(Error::DimensionMismatch("coordinates must be finite and strictly monotone".into()));
        }
        let expected = n_time * lats.len() * lons.len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {n_time}x{}x{} stack",
                values.len(),
                lats.len(),
                lons.len()
            )));
        }
        if n_time > 0 && start_date.checked_add_days(Days::new(n_time as u64 - 1)).is_none() {
            return Err(Error::DimensionMismatch("date range overflows the calendar".into()));
        }
        Ok(Self {
            lats,
            lons,
            start_date,
            n_time,
            values,
        })
    }

    /// Stack filled from `f(t, lat, lon)`.
    pub fn from_fn(
        lats: Vec<f64>,
        lons: Vec<f64>,
        start_date: NaiveDate,
        n_time: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let (nl, nn) = (lats.len(), lons.len());
        let mut values = Vec::with_capacity(n_time * nl * nn);
        for t in 0..n_time {
            for i in 0..nl {
                for j in 0..nn {
                    values.push(f(t, i, j));
                }
            }
        }
        Self::new(lats, lons, start_date, n_time, values)
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn n_lat(&self) -> usize {
        self.lats.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lons.len()
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        self.start_date + Days::new(t as u64)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start_date.iter_days().take(self.n_time)
    }

    pub fn check_pixel(&self, lat: usize, lon: usize) -> Result<()> {
        if lat >= self.n_lat() || lon >= self.n_lon() {
            return Err(Error::PixelOutOfRange {
                lat,
                lon,
                n_lat: self.n_lat(),
                n_lon: self.n_lon(),
            });
        }
        Ok(())
    }

    fn offset(&self, t: usize, lat: usize, lon: usize) -> usize {
        (t * self.n_lat() + lat) * self.n_lon() + lon
    }

    pub fn value(&self, t: usize, lat: usize, lon: usize) -> f32 {
        self.values[self.offset(t, lat, lon)]
    }

    pub fn set(&mut self, t: usize, lat: usize, lon: usize, v: f32) {
        let k = self.offset(t, lat, lon);
        self.values[k] = v;
    }

    pub fn pixel_series(&self, lat: usize, lon: usize) -> Result<Vec<f64>> {
        self.check_pixel(lat, lon)?;
        Ok((0..self.n_time).map(|t| self.value(t, lat, lon) as f64).collect())
    }

    /// Errors unless both stacks share coordinates within [`GRID_TOLERANCE_DEG`].
    pub fn check_same_grid(&self, other: &GridStack) -> Result<()> {
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= GRID_TOLERANCE_DEG)
        };
        if !close(&self.lats, &other.lats) || !close(&self.lons, &other.lons) {
            return Err(Error::DimensionMismatch("stacks are not on the same grid".into()));
        }
        Ok(())
    }

    /// Bitwise equality of coordinates, dates and payload (NaN-aware).
    pub fn bit_identical(&self, other: &GridStack) -> bool {
        let bits64 = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits64(&self.lats) == bits64(&other.lats)
            && bits64(&self.lons) == bits64(&other.lons)
            && self.start_date == other.start_date
            && self.n_time == other.n_time
            && self.values.iter().map(|x| x.to_bits()).eq(other.values.iter().map(|x| x.to_bits()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GsfHeader {
    version: u32,
    n_time: usize,
    n_lat: usize,
    n_lon: usize,
    lats: Vec<f64>,
    lons: Vec<f64>,
    start_date: NaiveDate,
    units: String,
}

pub fn encode_gsf(stack: &GridStack) -> Result<Vec<u8>> {
    let header = GsfHeader {
        version: GSF_VERSION,
        n_time: stack.n_time,
        n_lat: stack.n_lat(),
        n_lon: stack.n_lon(),
        lats: stack.lats.clone(),
        lons: stack.lons.clone(),
        start_date: stack.start_date,
        units: UNITS.to_string(),
    };
    let mut out = serde_json::to_vec(&header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    out.push(b'\n');
    out.reserve(stack.values.len() * 4);
    for v in &stack.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_gsf(bytes: &[u8]) -> Result<GridStack> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("no header line".into()))?;
    let text = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let h: GsfHeader = serde_json::from_str(text).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if h.version != GSF_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {}", h.version)));
    }
    if h.units != UNITS {
        return Err(Error::MalformedHeader(format!("units `{}`, expected `{UNITS}`", h.units)));
    }
    if h.lats.len() != h.n_lat || h.lons.len() != h.n_lon {
        return Err(Error::DimensionMismatch(format!(
            "header declares {}x{} grid but lists {} latitudes and {} longitudes",
            h.n_lat,
            h.n_lon,
            h.lats.len(),
            h.lons.len()
        )));
    }
    let payload = &bytes[nl + 1..];
    let expected = h
        .n_time
        .checked_mul(h.n_lat)
        .and_then(|v| v.checked_mul(h.n_lon))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    GridStack::new(h.lats, h.lons, h.start_date, h.n_time, values)
}

pub fn write_gsf(stack: &GridStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_gsf(stack)?).map_err(|e| Error::io(path, e))
}

pub fn read_gsf(path: impl AsRef<Path>) -> Result<GridStack> {
    let path = path.as_ref();
    decode_gsf(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Contiguous daily series for a single pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSeries {
    pub start_date: NaiveDate,
    pub values: Vec<f64>,
}

impl PixelSeries {
    /// Single-pixel stack at the given coordinates.
    pub fn to_stack(&self, lat: f64, lon: f64) -> Result<GridStack> {
        GridStack::new(
            vec![lat],
            vec![lon],
            self.start_date,
            self.values.len(),
            self.values.iter().map(|&v| v as f32).collect(),
        )
    }
}

/// Parses `date,value` rows. An optional first line starting with `date` is a
/// header; a blank value is a missing day. Dates must be consecutive.
pub fn parse_pixel_csv(text: &str) -> Result<PixelSeries> {
    let mut start: Option<NaiveDate> = None;
    let mut prev: Option<NaiveDate> = None;
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() {
            continue;
        }
        let (d, v) = row.split_once(',').ok_or_else(|| Error::Parse {
            line,
            msg: "expected two comma-separated columns".into(),
        })?;
        if line == 1 && d.trim().eq_ignore_ascii_case("date") {
            continue;
        }
        if v.contains(',') {
            return Err(Error::Parse {
                line,
                msg: "too many columns".into(),
            });
        }
        let date = NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            msg: format!("bad date `{}`: {e}", d.trim()),
        })?;
        let value = match v.trim() {
            "" => f64::NAN,
            s => s.parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad value `{s}`: {e}"),
            })?,
        };
        if let Some(p) = prev {
            if date <= p {
                return Err(Error::Ordering {
                    line,
                    msg: format!("{date} does not follow {p}"),
                });
            }
            if date != p + Days::new(1) {
                return Err(Error::Ordering {
                    line,
                    msg: format!("gap between {p} and {date}"),
                });
            }
        } else {
            start = Some(date);
        }
        prev = Some(date);
        values.push(value);
    }
    let start_date = start.ok_or(Error::EmptySample)?;
    Ok(PixelSeries { start_date, values })
}

pub fn read_pixel_csv(path: impl AsRef<Path>) -> Result<PixelSeries> {
    let path = path.as_ref();
    parse_pixel_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Fit bookkeeping stored next to each model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDiagnostics {
    /// Negative log-likelihood; absent for empirical models.
    pub neg_log_lik: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// The requested family was replaced by the empirical CDF.
    pub fallback: bool,
    /// No wet days were available.
    pub empty_sample: bool,
    pub i_l: Option<usize>,
    pub i_u: Option<usize>,
    /// Parametric candidates considered by a stitch decision, EGP then ExpW.
    pub candidates: Vec<DistModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub version: u32,
    pub lat: usize,
    pub lon: usize,
    pub season: Season,
    pub model: ModelKind,
    /// Family name, or the stitch label for stitched models.
    pub label: String,
    /// `None` when the pixel-season has no wet days.
    pub dist: Option<DistModel>,
    pub alpha: f64,
    pub n_days: usize,
    pub n_wet: usize,
    pub diagnostics: FitDiagnostics,
}

pub type RecordKey = (usize, usize, Season, ModelKind);

/// Fitted models keyed by pixel, season and requested model kind.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelStore {
    records: BTreeMap<RecordKey, ModelRecord>,
}

impl ModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: ModelRecord) -> Option<ModelRecord> {
        self.records
            .insert((record.lat, record.lon, record.season, record.model), record)
    }

    pub fn get(&self, lat: usize, lon: usize, season: Season, model: ModelKind) -> Option<&ModelRecord> {
        self.records.get(&(lat, lon, season, model))
    }

    pub fn require(&self, lat: usize, lon: usize, season: Season, model: ModelKind) -> Result<&ModelRecord> {
        self.get(lat, lon, season, model).ok_or_else(|| Error::MissingModel {
            lat,
            lon,
            season: season.to_string(),
            model: model.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in key order.
    pub fn records(&self) -> impl Iterator<Item = &ModelRecord> {
        self.records.values()
    }

    pub fn extend(&mut self, other: ModelStore) {
        self.records.extend(other.records);
    }

    /// JSON lines in key order.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in self.records.values() {
            let line = serde_json::to_string(r).map_err(|e| Error::Schema {
                line: 0,
                msg: e.to_string(),
            })?;
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut store = ModelStore::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::Schema {
                line,
                msg: e.to_string(),
            })?;
            match value.get("version").and_then(|v| v.as_u64()) {
                Some(v) if v == STORE_VERSION as u64 => {}
                Some(v) => {
                    return Err(Error::VersionMismatch {
                        found: v as u32,
                        expected: STORE_VERSION,
                    })
                }
                None => {
                    return Err(Error::Schema {
                        line,
                        msg: "missing `version`".into(),
                    })
                }
            }
            let record: ModelRecord = serde_json::from_value(value).map_err(|e| Error::Schema {
                line,
                msg: e.to_string(),
            })?;
            if let Some(d) = &record.dist {
                d.validate().map_err(|e| Error::Schema {
                    line,
                    msg: e.to_string(),
                })?;
            }
            if !(0.0..=1.0).contains(&record.alpha) {
                return Err(Error::Schema {
                    line,
                    msg: format!("alpha {} outside [0, 1]", record.alpha),
                });
            }
            if store.insert(record).is_some() {
                return Err(Error::Schema {
                    line,
                    msg: "duplicate pixel-season-model record".into(),
                });
            }
        }
        Ok(store)
    }
}

pub fn save_models(store: &ModelStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, store.to_jsonl()?).map_err(|e| Error::io(path, e))
}

pub fn load_models(path: impl AsRef<Path>) -> Result<ModelStore> {
    let path = path.as_ref();
    ModelStore::from_jsonl(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub lat: f64,
    pub lon: f64,
    pub season: Season,
    pub model: String,
    pub mae: f64,
    pub mae95sup: f64,
    pub rmse: f64,
    pub dry_prob_diff: f64,
}

pub const METRICS_CSV_HEADER: &str = "lat,lon,season,model,mae,mae95sup,rmse,dry_prob_diff";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.lat, r.lon, r.season, r.model, r.mae, r.mae95sup, r.rmse, r.dry_prob_diff
        ));
    }
    out
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}
