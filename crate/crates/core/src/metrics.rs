//! Quantile-based skill metrics and their grid summaries.

use serde::{Deserialize, Serialize};

use crate::dist::{DistModel, EmpiricalModel};
use crate::error::{Error, Result};
use crate::season_stats::Season;

pub const DEFAULT_N_QUANTILES: usize = 50;

/// Probabilities `i / n` for `i = 1..=n`; the last one selects the sample maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantileGrid {
    pub n_quantiles: usize,
}

impl Default for QuantileGrid {
    fn default() -> Self {
        Self {
            n_quantiles: DEFAULT_N_QUANTILES,
        }
    }
}

impl QuantileGrid {
    pub fn new(n_quantiles: usize) -> Result<Self> {
        if n_quantiles == 0 {
            return Err(Error::InvalidParameter("n_quantiles must be positive".into()));
        }
        Ok(Self { n_quantiles })
    }

    pub fn probs(&self) -> Vec<f64> {
        let n = self.n_quantiles as f64;
        (1..=self.n_quantiles).map(|i| i as f64 / n).collect()
    }

    /// First one-based index of the upper 5% window, `ceil(0.95 n)`.
    pub fn upper_window_start(&self) -> usize {
        (95 * self.n_quantiles).div_ceil(100)
    }
}

/// Empirical step-inverse quantiles of `sample` on the grid.
pub fn empirical_quantiles(sample: &[f64], grid: &QuantileGrid) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let model = DistModel::Empirical(EmpiricalModel::new(sample.to_vec())?);
    grid.probs().into_iter().map(|p| model.quantile(p)).collect()
}

fn quantile_errors(corrected: &[f64], target: &[f64], grid: &QuantileGrid) -> Result<Vec<f64>> {
    let qc = empirical_quantiles(corrected, grid)?;
    let qt = empirical_quantiles(target, grid)?;
    Ok(qc.iter().zip(&qt).map(|(a, b)| a - b).collect())
}

fn mean_abs(e: &[f64]) -> f64 {
    e.iter().map(|v| v.abs()).sum::<f64>() / e.len() as f64
}

fn mae95_window(e: &[f64], grid: &QuantileGrid) -> f64 {
    mean_abs(&e[grid.upper_window_start() - 1..])
}

fn root_mean_square(e: &[f64]) -> f64 {
    (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt()
}

pub fn mae(corrected_wet: &[f64], target_wet: &[f64], grid: &QuantileGrid) -> Result<f64> {
    Ok(mean_abs(&quantile_errors(corrected_wet, target_wet, grid)?))
}

/// Mean absolute quantile error over indices `ceil(0.95 n)..=n`, averaged
/// over the number of included terms.
pub fn mae95sup(corrected_wet: &[f64], target_wet: &[f64], grid: &QuantileGrid) -> Result<f64> {
    if grid.n_quantiles < 20 {
        return Err(Error::InvalidParameter(format!(
            "mae95sup needs at least 20 quantiles, got {}",
            grid.n_quantiles
        )));
    }
    Ok(mae95_window(&quantile_errors(corrected_wet, target_wet, grid)?, grid))
}

pub fn rmse(corrected_wet: &[f64], target_wet: &[f64], grid: &QuantileGrid) -> Result<f64> {
    Ok(root_mean_square(&quantile_errors(corrected_wet, target_wet, grid)?))
}

/// Target dry probability minus model dry probability; positive is a dry bias.
pub fn dry_prob_diff(target_alpha: f64, model_alpha: f64) -> f64 {
    target_alpha - model_alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub mae: f64,
    pub mae95sup: f64,
    pub rmse: f64,
    pub dry_prob_diff: f64,
}

impl PixelMetrics {
    pub const NAMES: [&'static str; 4] = ["mae", "mae95sup", "rmse", "dry_prob_diff"];

    pub fn compute(
        corrected_wet: &[f64],
        target_wet: &[f64],
        target_alpha: f64,
        model_alpha: f64,
        grid: &QuantileGrid,
    ) -> Result<Self> {
        if grid.n_quantiles < 20 {
            return Err(Error::InvalidParameter(format!(
                "mae95sup needs at least 20 quantiles, got {}",
                grid.n_quantiles
            )));
        }
        let e = quantile_errors(corrected_wet, target_wet, grid)?;
        Ok(Self {
            mae: mean_abs(&e),
            mae95sup: mae95_window(&e, grid),
            rmse: root_mean_square(&e),
            dry_prob_diff: dry_prob_diff(target_alpha, model_alpha),
        })
    }

    /// Every field set to NaN, for pixel-seasons without wet days.
    pub fn missing(dry_prob_diff: f64) -> Self {
        Self {
            mae: f64::NAN,
            mae95sup: f64::NAN,
            rmse: f64::NAN,
            dry_prob_diff,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.mae, self.mae95sup, self.rmse, self.dry_prob_diff]
    }
}

/// Componentwise `f - g`; negative error differences favour `f`.
pub fn metric_diff(f: &PixelMetrics, g: &PixelMetrics) -> PixelMetrics {
    PixelMetrics {
        mae: f.mae - g.mae,
        mae95sup: f.mae95sup - g.mae95sup,
        rmse: f.rmse - g.rmse,
        dry_prob_diff: f.dry_prob_diff - g.dry_prob_diff,
    }
}

/// Boxplot statistics with Tukey whiskers at 1.5 IQR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub nan_count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) p`).
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    let nan_count = values.len() - v.len();
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (sorted_quantile(&v, 0.25), sorted_quantile(&v, 0.5), sorted_quantile(&v, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || v.iter().copied().filter(|&x| x >= lo_fence && x <= hi_fence);
    BoxStats {
        count: v.len(),
        nan_count,
        q1,
        median,
        q3,
        whisker_low: inside().next().unwrap_or(f64::NAN),
        whisker_high: inside().last().unwrap_or(f64::NAN),
        outliers: v.iter().copied().filter(|&x| x < lo_fence || x > hi_fence).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub season: Season,
    pub model: String,
    pub metric: String,
    pub stats: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<SummaryRow>,
}

/// Per season, model and metric boxplot summaries. Rows follow season, then
/// first appearance of the model, then metric order.
pub fn aggregate_report(per_pixel: &[(Season, String, PixelMetrics)]) -> Result<MetricsReport> {
    if per_pixel.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut models: Vec<&str> = Vec::new();
    for (_, m, _) in per_pixel {
        if !models.contains(&m.as_str()) {
            models.push(m);
        }
    }
    let mut rows = Vec::new();
    for season in Season::ALL {
        for model in &models {
            let sel: Vec<&PixelMetrics> = per_pixel
                .iter()
                .filter(|(s, m, _)| *s == season && m == model)
                .map(|(_, _, p)| p)
                .collect();
            if sel.is_empty() {
                continue;
            }
            for (k, name) in PixelMetrics::NAMES.iter().enumerate() {
                let vals: Vec<f64> = sel.iter().map(|p| p.values()[k]).collect();
                rows.push(SummaryRow {
                    season,
                    model: model.to_string(),
                    metric: name.to_string(),
                    stats: box_stats(&vals),
                });
            }
        }
    }
    Ok(MetricsReport { rows })
}

impl MetricsReport {
    pub fn get(&self, season: Season, model: &str, metric: &str) -> Option<&BoxStats> {
        self.rows
            .iter()
            .find(|r| r.season == season && r.model == model && r.metric == metric)
            .map(|r| &r.stats)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("season,model,metric,count,nan_count,q1,median,q3,whisker_low,whisker_high,n_outliers\n");
        for r in &self.rows {
            let s = &r.stats;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.season,
                r.model,
                r.metric,
                s.count,
                s.nan_count,
                s.q1,
                s.median,
                s.q3,
                s.whisker_low,
                s.whisker_high,
                s.outliers.len()
            ));
        }
        out
    }
}
