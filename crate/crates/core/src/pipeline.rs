//! End-to-end commands driven by a flat `key = value` run configuration.
//!
//! Output layout inside `output_dir`:
//! - `models_{obs|mod}_{SEASON}.jsonl` from [`cmd_fit`]
//! - `corrected_{model}.gsf` from [`cmd_correct`]
//! - `metrics.csv`, `metrics.json`, `metrics_uncorrected.csv`, `diffs.csv`,
//!   `summary.csv`, `summary.json` from [`cmd_evaluate`]
//! - `stationarity_seasons.csv`, `stationarity_months_{SEASON}.csv` from [`cmd_stationarity`]
//! - `diagnose_{lat}_{lon}.json` from [`cmd_diagnose`]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::Datelike;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{DistModel, ModelKind};
use crate::error::{Error, Result};
use crate::fitting::{fit_egp, fit_empirical, fit_expw, fit_gamma, FitConfig, FitResult, MIN_WET_SAMPLE};
use crate::grid_io::{
    load_models, metrics_csv, read_gsf, save_models, write_gsf, write_text, FitDiagnostics, GridStack,
    MetricsRow, ModelRecord, ModelStore, STORE_VERSION,
};
use crate::metrics::{aggregate_report, metric_diff, MetricsReport, PixelMetrics, QuantileGrid};
use crate::season_stats::{paired_table_csv, rejection_proportions, split_seasons, wet_sample, ProportionMatrix, Season};
use crate::ssr_qm::{correct_series, SsrConfig, ThresholdMode, TransferFunction};
use crate::stitch_bj::{bj_pvalues, build_stitch, rejection_indices};

/// Every recognised configuration key, in documentation order.
pub const CONFIG_KEYS: [&str; 15] = [
    "obs_path",
    "mod_ref_path",
    "mod_fut_path",
    "target_path",
    "output_dir",
    "seasons",
    "models",
    "wet_threshold_mm",
    "egp_censor_mm",
    "bj_level",
    "n_quantiles",
    "seed",
    "threads",
    "baseline_model",
    "ttest_welch",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// Observation reference stack.
    pub obs_path: Option<PathBuf>,
    /// Model reference stack.
    pub mod_ref_path: Option<PathBuf>,
    /// Model stack to correct.
    pub mod_fut_path: Option<PathBuf>,
    /// Observation stack the corrections are evaluated against.
    pub target_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seasons: Vec<Season>,
    pub models: Vec<ModelKind>,
    pub wet_threshold_mm: f64,
    pub egp_censor_mm: f64,
    pub bj_level: f64,
    pub n_quantiles: usize,
    pub seed: u64,
    /// Worker threads; `0` uses every available processor.
    pub threads: usize,
    /// Reference model for the difference metrics; defaults to `emp` when
    /// requested, otherwise the first model.
    pub baseline_model: Option<ModelKind>,
    pub ttest_welch: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            obs_path: None,
            mod_ref_path: None,
            mod_fut_path: None,
            target_path: None,
            output_dir: PathBuf::from("out"),
            seasons: Season::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            wet_threshold_mm: 1.0,
            egp_censor_mm: 3.0,
            bj_level: 0.05,
            n_quantiles: 50,
            seed: 0,
            threads: 0,
            baseline_model: None,
            ttest_welch: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list<T: std::str::FromStr<Err = Error> + PartialEq>(key: &str, value: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v = item.parse::<T>()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{key} must not be empty")));
    }
    Ok(out)
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", idx + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "obs_path" => self.obs_path = path(),
            "mod_ref_path" => self.mod_ref_path = path(),
            "mod_fut_path" => self.mod_fut_path = path(),
            "target_path" => self.target_path = path(),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "seasons" => self.seasons = parse_list(key, value)?,
            "models" => self.models = parse_list(key, value)?,
            "wet_threshold_mm" => self.wet_threshold_mm = parse_num(key, value)?,
            "egp_censor_mm" => self.egp_censor_mm = parse_num(key, value)?,
            "bj_level" => self.bj_level = parse_num(key, value)?,
            "n_quantiles" => self.n_quantiles = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            "baseline_model" => self.baseline_model = Some(value.parse()?),
            "ttest_welch" => self.ttest_welch = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults, then the optional config file, then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in parse_key_values(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str_config(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("wet_threshold_mm", self.wet_threshold_mm)?;
        positive("egp_censor_mm", self.egp_censor_mm)?;
        if !(self.bj_level > 0.0 && self.bj_level < 1.0) {
            return Err(Error::Config(format!("bj_level must lie in (0, 1), got {}", self.bj_level)));
        }
        if self.n_quantiles < 20 {
            return Err(Error::Config(format!("n_quantiles must be at least 20, got {}", self.n_quantiles)));
        }
        if self.models.is_empty() || self.seasons.is_empty() {
            return Err(Error::Config("models and seasons must not be empty".into()));
        }
        if let Some(b) = self.baseline_model {
            if !self.models.contains(&b) {
                return Err(Error::Config(format!("baseline_model `{b}` is not among the requested models")));
            }
        }
        Ok(())
    }

    pub fn baseline(&self) -> ModelKind {
        self.baseline_model.unwrap_or(if self.models.contains(&ModelKind::Empirical) {
            ModelKind::Empirical
        } else {
            self.models[0]
        })
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            censor_mm: self.egp_censor_mm,
            ..FitConfig::default()
        }
    }

    fn ssr_config(&self) -> SsrConfig {
        SsrConfig {
            threshold_mm: self.wet_threshold_mm,
            seed: self.seed,
            mode: ThresholdMode::CommonThreshold,
        }
    }

    fn require_path<'a>(&self, p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
    }

    fn sorted_seasons(&self) -> Vec<Season> {
        self.seasons.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    fn sorted_models(&self) -> Vec<ModelKind> {
        self.models.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn model_store_path(&self, dataset: Dataset, season: Season) -> PathBuf {
        self.output_dir.join(format!("models_{}_{}.jsonl", dataset.name(), season))
    }

    pub fn corrected_path(&self, model: ModelKind) -> PathBuf {
        self.output_dir.join(format!("corrected_{model}.gsf"))
    }
}

fn with_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    pool.install(f)
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Obs,
    Mod,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::Obs => "obs",
            Dataset::Mod => "mod",
        }
    }
}

fn pixels(stack: &GridStack) -> Vec<(usize, usize)> {
    (0..stack.n_lat())
        .flat_map(|i| (0..stack.n_lon()).map(move |j| (i, j)))
        .collect()
}

fn fit_family(kind: ModelKind, wet: &[f64], fc: &FitConfig) -> Result<FitResult> {
    match kind {
        ModelKind::Gamma => fit_gamma(wet, fc),
        ModelKind::ExpW => fit_expw(wet, fc),
        ModelKind::Egp => fit_egp(wet, fc),
        ModelKind::Empirical => fit_empirical(wet),
        ModelKind::StitchBj => Err(Error::InvalidParameter("stitch is not a single family".into())),
    }
}

fn diagnostics_of(fit: &FitResult) -> FitDiagnostics {
    FitDiagnostics {
        neg_log_lik: Some(fit.neg_log_lik).filter(|v| v.is_finite()),
        converged: fit.converged,
        iterations: fit.iterations,
        ..FitDiagnostics::default()
    }
}

/// Model records for one pixel-season wet sample, one per requested kind.
/// Samples below the minimum size, and fits that fail, fall back to the
/// empirical CDF; a sample without wet days yields records without a model.
#[allow(clippy::too_many_arguments)]
pub fn fit_pixel_season(
    wet: &[f64],
    alpha: f64,
    n_days: usize,
    pixel: (usize, usize),
    season: Season,
    models: &[ModelKind],
    fc: &FitConfig,
    bj_level: f64,
) -> Vec<ModelRecord> {
    let base = |kind: ModelKind| ModelRecord {
        version: STORE_VERSION,
        lat: pixel.0,
        lon: pixel.1,
        season,
        model: kind,
        label: String::new(),
        dist: None,
        alpha,
        n_days,
        n_wet: wet.len(),
        diagnostics: FitDiagnostics::default(),
    };
    if wet.is_empty() {
        return models
            .iter()
            .map(|&k| ModelRecord {
                label: "EMP".into(),
                diagnostics: FitDiagnostics {
                    fallback: true,
                    empty_sample: true,
                    ..FitDiagnostics::default()
                },
                ..base(k)
            })
            .collect();
    }
    let empirical = fit_empirical(wet).expect("non-empty finite wet sample");
    let fallback = |kind: ModelKind, why: &str| {
        warn!(
            "pixel ({}, {}) {season} {kind}: {why}; using the empirical CDF",
            pixel.0, pixel.1
        );
        ModelRecord {
            label: "EMP".into(),
            dist: Some(empirical.model.clone()),
            diagnostics: FitDiagnostics {
                fallback: true,
                ..FitDiagnostics::default()
            },
            ..base(kind)
        }
    };
    let small = wet.len() < MIN_WET_SAMPLE;
    let mut needed: BTreeSet<ModelKind> = models.iter().copied().filter(|k| *k != ModelKind::StitchBj).collect();
    if models.contains(&ModelKind::StitchBj) && !small {
        needed.extend([ModelKind::Egp, ModelKind::ExpW, ModelKind::Empirical]);
    }
    let mut fits: BTreeMap<ModelKind, Result<FitResult>> = BTreeMap::new();
    for kind in needed {
        if kind == ModelKind::Empirical {
            fits.insert(kind, Ok(empirical.clone()));
        } else if !small {
            fits.insert(kind, fit_family(kind, wet, fc));
        }
    }
    let mut out = Vec::with_capacity(models.len());
    for &kind in models {
        if kind == ModelKind::StitchBj {
            out.push(stitch_record(wet, &fits, bj_level, base(kind), &fallback, small));
            continue;
        }
        if small && kind != ModelKind::Empirical {
            out.push(fallback(kind, &format!("only {} wet days", wet.len())));
            continue;
        }
        match &fits[&kind] {
            Ok(fit) => out.push(ModelRecord {
                label: fit.model.family().to_string(),
                dist: Some(fit.model.clone()),
                diagnostics: diagnostics_of(fit),
                ..base(kind)
            }),
            Err(e) => out.push(fallback(kind, &e.to_string())),
        }
    }
    out
}

fn stitch_record(
    wet: &[f64],
    fits: &BTreeMap<ModelKind, Result<FitResult>>,
    bj_level: f64,
    base: ModelRecord,
    fallback: &dyn Fn(ModelKind, &str) -> ModelRecord,
    small: bool,
) -> ModelRecord {
    if small {
        return fallback(ModelKind::StitchBj, &format!("only {} wet days", wet.len()));
    }
    let mut ok: BTreeMap<ModelKind, FitResult> = BTreeMap::new();
    for (k, r) in fits {
        match r {
            Ok(f) => {
                ok.insert(*k, f.clone());
            }
            Err(e) => return fallback(ModelKind::StitchBj, &format!("{k} candidate failed: {e}")),
        }
    }
    let decision = match build_stitch(wet, &ok, bj_level) {
        Ok(d) => d,
        Err(e) => return fallback(ModelKind::StitchBj, &e.to_string()),
    };
    let chosen = decision.chosen;
    let n = wet.len() as f64;
    let index = |p: f64| (p * n).round() as usize;
    ModelRecord {
        label: decision.label,
        diagnostics: FitDiagnostics {
            i_l: chosen.lower.as_ref().map(|_| index(chosen.p_lower)),
            i_u: chosen.upper.as_ref().map(|_| index(chosen.p_upper)),
            candidates: vec![ok[&ModelKind::Egp].model.clone(), ok[&ModelKind::ExpW].model.clone()],
            converged: ok[&ModelKind::Egp].converged && ok[&ModelKind::ExpW].converged,
            ..FitDiagnostics::default()
        },
        dist: Some(DistModel::Stitch(chosen)),
        ..base
    }
}

/// Fits every requested model on every pixel of one season of a stack.
pub fn fit_stack_season(stack: &GridStack, season: Season, cfg: &RunConfig) -> Result<ModelStore> {
    let slices = split_seasons(stack);
    let mut store = ModelStore::new();
    let Some(slice) = slices.get(&season) else {
        warn!("no {season} days in the input stack");
        return Ok(store);
    };
    let fc = cfg.fit_config();
    let models = cfg.sorted_models();
    let records: Vec<Vec<ModelRecord>> = pixels(stack)
        .into_par_iter()
        .map(|px| -> Result<Vec<ModelRecord>> {
            let series = slice.pixel_series(px.0, px.1)?;
            let (wet, alpha, n_days) = wet_sample(&series, cfg.wet_threshold_mm);
            Ok(fit_pixel_season(&wet, alpha, n_days, px, season, &models, &fc, cfg.bj_level))
        })
        .collect::<Result<_>>()?;
    for r in records.into_iter().flatten() {
        store.insert(r);
    }
    Ok(store)
}

/// Fits the observation and model reference stacks season by season and
/// writes one model store per dataset and season.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let obs = read_gsf(cfg.require_path(&cfg.obs_path, "obs_path")?)?;
    let modl = read_gsf(cfg.require_path(&cfg.mod_ref_path, "mod_ref_path")?)?;
    obs.check_same_grid(&modl)?;
    ensure_output_dir(cfg)?;
    with_pool(cfg, || {
        let mut written = Vec::new();
        for (dataset, stack) in [(Dataset::Obs, &obs), (Dataset::Mod, &modl)] {
            for season in cfg.sorted_seasons() {
                info!("fitting {} {season}", dataset.name());
                let store = fit_stack_season(stack, season, cfg)?;
                let path = cfg.model_store_path(dataset, season);
                save_models(&store, &path)?;
                written.push(path);
            }
        }
        Ok(written)
    })
}

fn load_stores(cfg: &RunConfig, dataset: Dataset) -> Result<ModelStore> {
    let mut store = ModelStore::new();
    for season in cfg.sorted_seasons() {
        store.extend(load_models(cfg.model_store_path(dataset, season))?);
    }
    Ok(store)
}

/// Random stream of one pixel-season, shared by all models.
pub fn jitter_stream(pixel: (usize, usize), n_lon: usize, season: Season) -> u64 {
    ((pixel.0 * n_lon + pixel.1) as u64) << 2 | season.index() as u64
}

/// Transfer function between the stored model and observation references.
pub fn transfer_for(obs: &ModelRecord, modl: &ModelRecord, threshold_mm: f64) -> Result<TransferFunction> {
    TransferFunction::new(
        modl.dist.clone(),
        obs.dist.clone(),
        modl.alpha,
        obs.alpha,
        threshold_mm,
        modl.n_wet,
    )
}

/// Corrects one stack with stored models. Days outside the requested seasons are NaN.
pub fn correct_stack(
    fut: &GridStack,
    obs_store: &ModelStore,
    mod_store: &ModelStore,
    model: ModelKind,
    cfg: &RunConfig,
) -> Result<GridStack> {
    let ssr = cfg.ssr_config();
    let slices = split_seasons(fut);
    let mut out = GridStack::from_fn(
        fut.lats().to_vec(),
        fut.lons().to_vec(),
        fut.start_date(),
        fut.n_time(),
        |_, _, _| f32::NAN,
    )?;
    for season in cfg.sorted_seasons() {
        let Some(slice) = slices.get(&season) else { continue };
        let corrected: Vec<((usize, usize), Vec<f64>)> = pixels(fut)
            .into_par_iter()
            .map(|px| -> Result<_> {
                let obs = obs_store.require(px.0, px.1, season, model)?;
                let modl = mod_store.require(px.0, px.1, season, model)?;
                let tf = transfer_for(obs, modl, ssr.threshold_mm)?;
                let raw = slice.pixel_series(px.0, px.1)?;
                let stream = jitter_stream(px, fut.n_lon(), season);
                Ok((px, correct_series(&tf, &raw, &ssr, stream)))
            })
            .collect::<Result<_>>()?;
        for (px, series) in corrected {
            for (&t, v) in slice.days.iter().zip(series) {
                out.set(t, px.0, px.1, v as f32);
            }
        }
    }
    Ok(out)
}

/// Corrects the future model stack with every requested model.
pub fn cmd_correct(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let fut = read_gsf(cfg.require_path(&cfg.mod_fut_path, "mod_fut_path")?)?;
    let obs_store = load_stores(cfg, Dataset::Obs)?;
    let mod_store = load_stores(cfg, Dataset::Mod)?;
    ensure_output_dir(cfg)?;
    with_pool(cfg, || {
        let mut written = Vec::new();
        for model in cfg.sorted_models() {
            info!("correcting with {model}");
            let out = correct_stack(&fut, &obs_store, &mod_store, model, cfg)?;
            let path = cfg.corrected_path(model);
            write_gsf(&out, &path)?;
            written.push(path);
        }
        Ok(written)
    })
}

/// Metrics of one pixel-season of `candidate` against `target`.
pub fn pixel_metrics(candidate: &[f64], target: &[f64], threshold_mm: f64, grid: &QuantileGrid) -> Result<PixelMetrics> {
    let (cw, ca, _) = wet_sample(candidate, threshold_mm);
    let (tw, ta, _) = wet_sample(target, threshold_mm);
    if cw.is_empty() || tw.is_empty() {
        return Ok(PixelMetrics::missing(crate::metrics::dry_prob_diff(ta, ca)));
    }
    PixelMetrics::compute(&cw, &tw, ta, ca, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PixelEntry {
    pub lat_index: usize,
    pub lon_index: usize,
    pub season: Season,
    pub model: String,
    pub metrics: PixelMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub rows: Vec<PixelEntry>,
    pub uncorrected: Vec<PixelEntry>,
    pub diffs: Vec<(PixelEntry, String)>,
    pub report: MetricsReport,
}

impl Evaluation {
    /// Values of one metric for a model and season, in pixel order.
    pub fn metric_values(&self, model: &str, season: Season, metric: usize) -> Vec<f64> {
        self.rows
            .iter()
            .chain(&self.uncorrected)
            .filter(|r| r.model == model && r.season == season)
            .map(|r| r.metrics.values()[metric])
            .collect()
    }
}

fn evaluate_stack(
    candidate: &GridStack,
    target: &GridStack,
    model: &str,
    cfg: &RunConfig,
    grid: &QuantileGrid,
) -> Result<Vec<PixelEntry>> {
    let cs = split_seasons(candidate);
    let ts = split_seasons(target);
    let mut out = Vec::new();
    for season in cfg.sorted_seasons() {
        let (Some(c), Some(t)) = (cs.get(&season), ts.get(&season)) else { continue };
        let entries: Vec<PixelEntry> = pixels(target)
            .into_par_iter()
            .map(|px| -> Result<PixelEntry> {
                let m = pixel_metrics(&c.pixel_series(px.0, px.1)?, &t.pixel_series(px.0, px.1)?, cfg.wet_threshold_mm, grid)?;
                Ok(PixelEntry {
                    lat_index: px.0,
                    lon_index: px.1,
                    season,
                    model: model.to_string(),
                    metrics: m,
                })
            })
            .collect::<Result<_>>()?;
        out.extend(entries);
    }
    Ok(out)
}

fn to_rows(entries: &[PixelEntry], stack: &GridStack) -> Vec<MetricsRow> {
    entries
        .iter()
        .map(|e| MetricsRow {
            lat: stack.lats()[e.lat_index],
            lon: stack.lons()[e.lon_index],
            season: e.season,
            model: e.model.clone(),
            mae: e.metrics.mae,
            mae95sup: e.metrics.mae95sup,
            rmse: e.metrics.rmse,
            dry_prob_diff: e.metrics.dry_prob_diff,
        })
        .collect()
}

pub const UNCORRECTED: &str = "uncorrected";

/// Scores every corrected stack against the target and writes the reports.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    let target = read_gsf(cfg.require_path(&cfg.target_path, "target_path")?)?;
    let grid = QuantileGrid::new(cfg.n_quantiles)?;
    ensure_output_dir(cfg)?;
    let models = cfg.sorted_models();
    let baseline = cfg.baseline().to_string();
    with_pool(cfg, || {
        let mut rows = Vec::new();
        for model in &models {
            let corrected = read_gsf(cfg.corrected_path(*model))?;
            corrected.check_same_grid(&target)?;
            rows.extend(evaluate_stack(&corrected, &target, model.name(), cfg, &grid)?);
        }
        let mut uncorrected = Vec::new();
        if let Some(p) = &cfg.mod_fut_path {
            let fut = read_gsf(p)?;
            fut.check_same_grid(&target)?;
            uncorrected = evaluate_stack(&fut, &target, UNCORRECTED, cfg, &grid)?;
        }
        let index: BTreeMap<(usize, usize, Season, &str), &PixelMetrics> = rows
            .iter()
            .map(|r| ((r.lat_index, r.lon_index, r.season, r.model.as_str()), &r.metrics))
            .collect();
        let diffs: Vec<(PixelEntry, String)> = rows
            .iter()
            .filter(|r| r.model != baseline)
            .filter_map(|r| {
                index
                    .get(&(r.lat_index, r.lon_index, r.season, baseline.as_str()))
                    .map(|b| {
                        (
                            PixelEntry {
                                metrics: metric_diff(&r.metrics, b),
                                ..r.clone()
                            },
                            baseline.clone(),
                        )
                    })
            })
            .collect();
        let summary_input: Vec<(Season, String, PixelMetrics)> = rows
            .iter()
            .chain(&uncorrected)
            .map(|r| (r.season, r.model.clone(), r.metrics))
            .collect();
        let report = if summary_input.is_empty() {
            MetricsReport::default()
        } else {
            aggregate_report(&summary_input)?
        };

        let out = &cfg.output_dir;
        let metric_rows = to_rows(&rows, &target);
        write_text(out.join("metrics.csv"), &metrics_csv(&metric_rows))?;
        write_text(out.join("metrics.json"), &to_json(&metric_rows)?)?;
        write_text(out.join("metrics_uncorrected.csv"), &metrics_csv(&to_rows(&uncorrected, &target)))?;
        let mut diff_csv = String::from("lat,lon,season,model,baseline,mae_diff,mae95sup_diff,rmse_diff,dry_prob_diff_diff\n");
        for (e, b) in &diffs {
            let m = &e.metrics;
            diff_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                target.lats()[e.lat_index],
                target.lons()[e.lon_index],
                e.season,
                e.model,
                b,
                m.mae,
                m.mae95sup,
                m.rmse,
                m.dry_prob_diff
            ));
        }
        write_text(out.join("diffs.csv"), &diff_csv)?;
        write_text(out.join("summary.csv"), &report.to_csv())?;
        write_text(out.join("summary.json"), &to_json(&report)?)?;
        Ok(Evaluation {
            rows,
            uncorrected,
            diffs,
            report,
        })
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Numerical(format!("cannot serialize report: {e}")))
}

const MONTH_NAMES: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stationarity {
    /// Between-season proportions for the observation and model datasets.
    pub seasonal: (ProportionMatrix, ProportionMatrix),
    /// Between-month proportions inside each requested season.
    pub monthly: BTreeMap<Season, (ProportionMatrix, ProportionMatrix)>,
}

fn grouped_values(stack: &GridStack, groups: &[Vec<usize>]) -> Vec<Vec<Vec<f64>>> {
    pixels(stack)
        .into_par_iter()
        .map(|(i, j)| {
            groups
                .iter()
                .map(|days| {
                    days.iter()
                        .map(|&t| stack.value(t, i, j) as f64)
                        .filter(|v| !v.is_nan())
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn season_groups(stack: &GridStack) -> (Vec<String>, Vec<Vec<usize>>) {
    let slices = split_seasons(stack);
    Season::ALL
        .iter()
        .map(|s| (s.to_string(), slices.get(s).map(|x| x.days.clone()).unwrap_or_default()))
        .unzip()
}

fn month_groups(stack: &GridStack, season: Season) -> (Vec<String>, Vec<Vec<usize>>) {
    season
        .months()
        .iter()
        .map(|&m| {
            let days = stack
                .dates()
                .enumerate()
                .filter(|(_, d)| d.month() == m)
                .map(|(t, _)| t)
                .collect();
            (MONTH_NAMES[m as usize - 1].to_string(), days)
        })
        .unzip()
}

/// Between-season and between-month two-sample t-test rejection proportions.
pub fn cmd_stationarity(cfg: &RunConfig) -> Result<Stationarity> {
    let obs = read_gsf(cfg.require_path(&cfg.obs_path, "obs_path")?)?;
    let modl = read_gsf(cfg.require_path(&cfg.mod_ref_path, "mod_ref_path")?)?;
    obs.check_same_grid(&modl)?;
    ensure_output_dir(cfg)?;
    with_pool(cfg, || {
        let matrix = |stack: &GridStack, (labels, groups): (Vec<String>, Vec<Vec<usize>>)| {
            rejection_proportions(&labels, &grouped_values(stack, &groups), cfg.ttest_welch)
        };
        let seasonal = (matrix(&obs, season_groups(&obs)), matrix(&modl, season_groups(&modl)));
        write_text(
            cfg.output_dir.join("stationarity_seasons.csv"),
            &paired_table_csv("season", &seasonal.0, &seasonal.1)?,
        )?;
        let mut monthly = BTreeMap::new();
        for season in cfg.sorted_seasons() {
            let pair = (matrix(&obs, month_groups(&obs, season)), matrix(&modl, month_groups(&modl, season)));
            write_text(
                cfg.output_dir.join(format!("stationarity_months_{season}.csv")),
                &paired_table_csv(season.name(), &pair.0, &pair.1)?,
            )?;
            monthly.insert(season, pair);
        }
        Ok(Stationarity { seasonal, monthly })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDiagnostics {
    pub model: String,
    pub k_values: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub rejected: Vec<bool>,
    pub i_l: Option<usize>,
    pub i_u: Option<usize>,
    /// `(empirical order statistic, model quantile at i / (n + 1))` pairs.
    pub qq: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonDiagnostics {
    pub dataset: Dataset,
    pub season: Season,
    pub n_wet: usize,
    pub alpha: f64,
    /// Stitch label, present when a stitched model was fitted.
    pub label: Option<String>,
    pub i_l: Option<usize>,
    pub i_u: Option<usize>,
    pub candidates: Vec<CandidateDiagnostics>,
    pub chosen_qq: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelDiagnostics {
    pub lat_index: usize,
    pub lon_index: usize,
    pub lat: f64,
    pub lon: f64,
    pub bj_level: f64,
    pub entries: Vec<SeasonDiagnostics>,
}

fn qq_pairs(sorted: &[f64], model: &DistModel) -> Result<Vec<[f64; 2]>> {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| Ok([x, model.quantile((i + 1) as f64 / (n + 1.0))?]))
        .collect()
}

fn candidate_diagnostics(name: &str, wet: &[f64], sorted: &[f64], model: &DistModel, level: f64) -> Result<CandidateDiagnostics> {
    let profile = bj_pvalues(wet, model, level)?;
    let idx = rejection_indices(&profile);
    Ok(CandidateDiagnostics {
        model: name.to_string(),
        k_values: profile.k_values.clone(),
        thresholds: profile.threshold.clone(),
        rejected: profile.rejected.clone(),
        i_l: idx.i_l,
        i_u: idx.i_u,
        qq: qq_pairs(sorted, model)?,
    })
}

fn season_diagnostics(
    dataset: Dataset,
    season: Season,
    wet: &[f64],
    alpha: f64,
    store: &ModelStore,
    pixel: (usize, usize),
    level: f64,
) -> Result<SeasonDiagnostics> {
    let mut sorted = wet.to_vec();
    sorted.sort_by(f64::total_cmp);
    let stitch = store.get(pixel.0, pixel.1, season, ModelKind::StitchBj);
    let mut candidates = Vec::new();
    if !wet.is_empty() {
        let mut seen = BTreeSet::new();
        if let Some(s) = stitch {
            for m in &s.diagnostics.candidates {
                if seen.insert(m.family()) {
                    candidates.push(candidate_diagnostics(m.family(), wet, &sorted, m, level)?);
                }
            }
        }
        for kind in [ModelKind::Egp, ModelKind::ExpW] {
            let Some(m) = store.get(pixel.0, pixel.1, season, kind).and_then(|r| r.dist.as_ref()) else {
                continue;
            };
            if matches!(m, DistModel::Egp(_) | DistModel::ExpW(_)) && seen.insert(m.family()) {
                candidates.push(candidate_diagnostics(m.family(), wet, &sorted, m, level)?);
            }
        }
    }
    let chosen_qq = match stitch.and_then(|s| s.dist.as_ref()) {
        Some(m) if !sorted.is_empty() => Some(qq_pairs(&sorted, m)?),
        _ => None,
    };
    Ok(SeasonDiagnostics {
        dataset,
        season,
        n_wet: wet.len(),
        alpha,
        label: stitch.map(|s| s.label.clone()),
        i_l: stitch.and_then(|s| s.diagnostics.i_l),
        i_u: stitch.and_then(|s| s.diagnostics.i_u),
        candidates,
        chosen_qq,
    })
}

/// Goodness-of-fit profiles and QQ data of one pixel for every dataset and season.
pub fn cmd_diagnose(cfg: &RunConfig, lat: usize, lon: usize) -> Result<(PixelDiagnostics, PathBuf)> {
    let mut entries = Vec::new();
    let mut coords = None;
    for (dataset, path) in [(Dataset::Obs, &cfg.obs_path), (Dataset::Mod, &cfg.mod_ref_path)] {
        let Some(path) = path else { continue };
        let stack = read_gsf(path)?;
        stack.check_pixel(lat, lon)?;
        coords.get_or_insert((stack.lats()[lat], stack.lons()[lon]));
        let store = load_stores(cfg, dataset)?;
        let slices = split_seasons(&stack);
        for season in cfg.sorted_seasons() {
            let Some(slice) = slices.get(&season) else { continue };
            let (wet, alpha, _) = wet_sample(&slice.pixel_series(lat, lon)?, cfg.wet_threshold_mm);
            entries.push(season_diagnostics(dataset, season, &wet, alpha, &store, (lat, lon), cfg.bj_level)?);
        }
    }
    let (lat_deg, lon_deg) = coords.ok_or_else(|| Error::Config("diagnose needs `obs_path` or `mod_ref_path`".into()))?;
    let report = PixelDiagnostics {
        lat_index: lat,
        lon_index: lon,
        lat: lat_deg,
        lon: lon_deg,
        bj_level: cfg.bj_level,
        entries,
    };
    ensure_output_dir(cfg)?;
    let path = cfg.output_dir.join(format!("diagnose_{lat}_{lon}.json"));
    write_text(&path, &to_json(&report)?)?;
    Ok((report, path))
}

/// Per-season share of stitched records by label, with breakpoint fractions.
pub fn stitch_summary(store: &ModelStore) -> BTreeMap<Season, crate::stitch_bj::ReplacementSummary> {
    crate::stitch_bj::replacement_stats(store.records().filter_map(|r| match &r.dist {
        Some(DistModel::Stitch(s)) => Some((r.season, s)),
        _ => None,
    }))
}
