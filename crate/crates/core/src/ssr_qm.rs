//! Singularity Stochastic Removal and the dry-day-aware quantile-mapping transfer.
//!
//! Dry days of the series to correct are first replaced by uniform noise on
//! `(0, th)`. The model-reference CDF is then extended below the threshold by a
//! linear ramp reaching the reference dry probability at `th`, the observation
//! inverse is extended the same way, and mapped values below `th` are reset to
//! zero. This corrects wet-day intensities and the dry-day frequency together.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::DistModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    CommonThreshold,
    DatasetMinimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsrConfig {
    pub threshold_mm: f64,
    pub seed: u64,
    pub mode: ThresholdMode,
}

impl Default for SsrConfig {
    fn default() -> Self {
        Self {
            threshold_mm: 1.0,
            seed: 0,
            mode: ThresholdMode::CommonThreshold,
        }
    }
}

impl SsrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_mm > 0.0 && self.threshold_mm.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "SSR threshold must be positive, got {}",
                self.threshold_mm
            )))
        }
    }

    /// Effective threshold: the configured value, or in `DatasetMinimum` mode
    /// the smallest positive value found across `datasets`.
    pub fn resolve_threshold<'a>(&self, datasets: impl IntoIterator<Item = &'a [f64]>) -> f64 {
        match self.mode {
            ThresholdMode::CommonThreshold => self.threshold_mm,
            ThresholdMode::DatasetMinimum => datasets
                .into_iter()
                .flat_map(|d| d.iter().copied())
                .filter(|v| *v > 0.0 && v.is_finite())
                .fold(f64::INFINITY, f64::min)
                .min(self.threshold_mm),
        }
    }
}

/// Random stream for one series; day `t` always consumes the `t`-th draw.
fn series_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Replaces values below the threshold by uniforms on `(0, th)`. The draw for
/// day `t` depends only on `(seed, stream, t)`; missing values stay missing.
pub fn ssr_jitter(series: &[f64], cfg: &SsrConfig, stream: u64) -> Vec<f64> {
    let th = cfg.threshold_mm;
    let mut rng = series_rng(cfg.seed, stream);
    series
        .iter()
        .map(|&x| {
            let u: f64 = rng.sample(Open01);
            if x < th {
                u * th
            } else {
                x
            }
        })
        .collect()
}

/// Extended model-reference CDF and observation-reference inverse, bundled.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    /// Wet-day model of the model reference; `None` when it has no wet days.
    pub model_ref: Option<DistModel>,
    /// Wet-day model of the observation reference; `None` when it has no wet days.
    pub obs_ref: Option<DistModel>,
    pub alpha_mod: f64,
    pub alpha_obs: f64,
    pub threshold_mm: f64,
    /// Largest wet probability reached on an unbounded observation model:
    /// `n / (n + 1)` when the model reference has finite support, otherwise
    /// the largest double below one.
    pub saturation_prob: f64,
}

impl TransferFunction {
    /// `mod_wet_count` is the wet-day sample size behind `model_ref`; values
    /// above its support map to the observation quantile at `n / (n + 1)`.
    pub fn new(
        model_ref: Option<DistModel>,
        obs_ref: Option<DistModel>,
        alpha_mod: f64,
        alpha_obs: f64,
        threshold_mm: f64,
        mod_wet_count: usize,
    ) -> Result<Self> {
        for a in [alpha_mod, alpha_obs] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Domain(a));
            }
        }
        if !(threshold_mm > 0.0 && threshold_mm.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be positive, got {threshold_mm}"
            )));
        }
        for m in model_ref.iter().chain(obs_ref.iter()) {
            m.validate()?;
        }
        let n = mod_wet_count.max(1) as f64;
        let saturation_prob = match &model_ref {
            Some(m) if m.upper_support().is_infinite() => 1.0 - f64::EPSILON / 2.0,
            _ => n / (n + 1.0),
        };
        Ok(Self {
            model_ref,
            obs_ref,
            alpha_mod,
            alpha_obs,
            threshold_mm,
            saturation_prob,
        })
    }

    /// The observation reference has no dry days, so the linear branch of the
    /// inverse is empty and probabilities go straight to the wet-day inverse.
    pub fn obs_has_no_dry_days(&self) -> bool {
        self.alpha_obs == 0.0
    }

    pub fn extended_cdf(&self, x: f64) -> f64 {
        let th = self.threshold_mm;
        if x < th {
            return (self.alpha_mod / th * x.max(0.0)).min(self.alpha_mod);
        }
        let f = self.model_ref.as_ref().map_or(1.0, |m| m.cdf(x));
        f * (1.0 - self.alpha_mod) + self.alpha_mod
    }

    pub fn extended_inverse(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(p));
        }
        Ok(self.inverse_unchecked(p))
    }

    fn inverse_unchecked(&self, p: f64) -> f64 {
        let th = self.threshold_mm;
        let a = self.alpha_obs;
        let Some(obs) = &self.obs_ref else {
            return th * p;
        };
        if a >= 1.0 {
            return th * p;
        }
        if p > a {
            let u = ((p - a) / (1.0 - a)).clamp(0.0, 1.0);
            obs.quantile_unchecked(u)
        } else if a > 0.0 {
            th * (p / a)
        } else {
            th
        }
    }

    /// Maps one (already jittered) value; the result is not yet thresholded.
    /// Against an unbounded observation model the wet probability is capped
    /// at `saturation_prob`, which keeps the map nondecreasing.
    pub fn map_value(&self, x: f64) -> f64 {
        if x.is_nan() {
            return x;
        }
        let p = self.extended_cdf(x);
        let a = self.alpha_obs;
        let Some(obs) = self.obs_ref.as_ref().filter(|_| a < 1.0 && p > a) else {
            return self.inverse_unchecked(p);
        };
        let u = ((p - a) / (1.0 - a)).clamp(0.0, 1.0);
        if obs.upper_support().is_finite() {
            obs.quantile_unchecked(if p >= 1.0 { 1.0 } else { u })
        } else {
            obs.quantile_unchecked(u.min(self.saturation_prob))
        }
    }
}

/// Applies the transfer to a jittered series and zeroes values below the threshold.
pub fn quantile_map(tf: &TransferFunction, future: &[f64], cfg: &SsrConfig) -> Vec<f64> {
    let th = cfg.threshold_mm;
    future
        .iter()
        .map(|&x| {
            let y = tf.map_value(x);
            if y < th {
                0.0
            } else {
                y
            }
        })
        .collect()
}

/// Jitter then map: the full correction of one raw series.
pub fn correct_series(tf: &TransferFunction, raw: &[f64], cfg: &SsrConfig, stream: u64) -> Vec<f64> {
    quantile_map(tf, &ssr_jitter(raw, cfg, stream), cfg)
}
