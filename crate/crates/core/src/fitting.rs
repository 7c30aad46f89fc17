//! Maximum-likelihood fits of the wet-day families.
//!
//! All parametric fits work on `y = x - 1 mm`. Positive parameters are
//! optimized on the log scale; the EGP tail index is optimized through its
//! absolute value so that `xi >= 0` holds without a hard wall.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::dist::{
    DistModel, EgpParams, EmpiricalModel, ExpWParams, GammaParams, DEFAULT_CENSOR_MM,
    WET_SHIFT_MM,
};
use crate::error::{Error, Result};
use crate::optim::{minimize, NelderMeadConfig};

/// Smallest wet-day sample accepted by the parametric fits.
pub const MIN_WET_SAMPLE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub restarts: usize,
    pub censor_mm: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            tolerance: 1e-9,
            restarts: 3,
            censor_mm: DEFAULT_CENSOR_MM,
        }
    }
}

impl FitConfig {
    fn optimizer(&self) -> NelderMeadConfig {
        NelderMeadConfig {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            restarts: self.restarts,
            ..NelderMeadConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: DistModel,
    pub neg_log_lik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub sample_size: usize,
}

fn shifted_sample(wet: &[f64]) -> Result<Vec<f64>> {
    if wet.len() < MIN_WET_SAMPLE {
        return Err(Error::InsufficientSample {
            needed: MIN_WET_SAMPLE,
            got: wet.len(),
        });
    }
    wet.iter()
        .map(|&x| {
            if x.is_finite() && x > WET_SHIFT_MM {
                Ok(x - WET_SHIFT_MM)
            } else {
                Err(Error::InvalidParameter(format!(
                    "wet-day value {x} is not above the {WET_SHIFT_MM} mm threshold"
                )))
            }
        })
        .collect()
}

fn mean_var(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.max(1e-12))
}

/// Negative log-likelihood of a Gamma model on raw wet-day values.
pub fn gamma_neg_log_lik(params: &GammaParams, wet: &[f64]) -> f64 {
    -wet.iter()
        .map(|&x| params.ln_pdf_shifted(x - params.shift))
        .sum::<f64>()
}

/// Negative log-likelihood of an ExpW model on raw wet-day values.
pub fn expw_neg_log_lik(params: &ExpWParams, wet: &[f64]) -> f64 {
    -wet.iter()
        .map(|&x| params.ln_pdf_shifted(x - params.shift))
        .sum::<f64>()
}

/// Left-censored EGP negative log-likelihood: values at or below
/// `params.censor` contribute `log F(censor)`, the rest contribute the density.
pub fn egp_neg_log_lik(params: &EgpParams, wet: &[f64]) -> f64 {
    let censor_y = params.censor - params.shift;
    let mut n_censored = 0usize;
    let mut ll = 0.0;
    for &x in wet {
        if x <= params.censor {
            n_censored += 1;
        } else {
            ll += params.ln_pdf_shifted(x - params.shift);
        }
    }
    if n_censored > 0 {
        ll += n_censored as f64 * params.cdf_shifted(censor_y).ln();
    }
    -ll
}

pub fn fit_gamma(wet: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    let y = shifted_sample(wet)?;
    let (mean, var) = mean_var(&y);
    let start = [(mean * mean / var).ln(), (var / mean).ln()];
    let objective = |t: &[f64]| {
        let p = GammaParams {
            shape: t[0].exp(),
            scale: t[1].exp(),
            shift: WET_SHIFT_MM,
        };
        -y.iter().map(|&v| p.ln_pdf_shifted(v)).sum::<f64>()
    };
    let m = minimize(objective, &start, &cfg.optimizer());
    let params = GammaParams::new(m.x[0].exp(), m.x[1].exp(), WET_SHIFT_MM)?;
    Ok(FitResult {
        model: DistModel::Gamma(params),
        neg_log_lik: m.value,
        converged: m.converged,
        iterations: m.iterations,
        sample_size: wet.len(),
    })
}

/// Weibull moment estimates `(shape, scale)` on the shifted sample.
fn weibull_moments(y: &[f64]) -> (f64, f64) {
    let (mean, var) = mean_var(y);
    let cv = var.sqrt() / mean;
    let k = cv.powf(-1.086).clamp(0.1, 20.0);
    let lambda = mean / gamma(1.0 + 1.0 / k);
    (k, lambda)
}

pub fn fit_expw(wet: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    let y = shifted_sample(wet)?;
    let (k0, l0) = weibull_moments(&y);
    let start = [k0.ln(), l0.ln(), 0.0];
    let objective = |t: &[f64]| {
        let p = ExpWParams {
            shape: t[0].exp(),
            scale: t[1].exp(),
            exponent: t[2].exp(),
            shift: WET_SHIFT_MM,
        };
        -y.iter().map(|&v| p.ln_pdf_shifted(v)).sum::<f64>()
    };
    let m = minimize(objective, &start, &cfg.optimizer());
    let params = ExpWParams::new(m.x[0].exp(), m.x[1].exp(), m.x[2].exp(), WET_SHIFT_MM)?;
    Ok(FitResult {
        model: DistModel::ExpW(params),
        neg_log_lik: m.value,
        converged: m.converged,
        iterations: m.iterations,
        sample_size: wet.len(),
    })
}

/// ExpW fit with the exponent held at 1, i.e. a plain Weibull.
pub fn fit_weibull(wet: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    let y = shifted_sample(wet)?;
    let (k0, l0) = weibull_moments(&y);
    let objective = |t: &[f64]| {
        let p = ExpWParams {
            shape: t[0].exp(),
            scale: t[1].exp(),
            exponent: 1.0,
            shift: WET_SHIFT_MM,
        };
        -y.iter().map(|&v| p.ln_pdf_shifted(v)).sum::<f64>()
    };
    let m = minimize(objective, &[k0.ln(), l0.ln()], &cfg.optimizer());
    let params = ExpWParams::new(m.x[0].exp(), m.x[1].exp(), 1.0, WET_SHIFT_MM)?;
    Ok(FitResult {
        model: DistModel::ExpW(params),
        neg_log_lik: m.value,
        converged: m.converged,
        iterations: m.iterations,
        sample_size: wet.len(),
    })
}

/// Left-censored EGP fit. With fewer than three uncensored values the
/// likelihood carries no shape information; the starting model is returned
/// with `converged = false`.
pub fn fit_egp(wet: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    if !(cfg.censor_mm >= 0.0 && cfg.censor_mm.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "censor must be nonnegative, got {}",
            cfg.censor_mm
        )));
    }
    let y = shifted_sample(wet)?;
    let censor = cfg.censor_mm;
    let (mean, _) = mean_var(&y);
    let start = [mean.ln(), 0.1, 0.0];
    let build = |t: &[f64]| EgpParams {
        sigma: t[0].exp(),
        xi: t[1].abs(),
        kappa: t[2].exp(),
        shift: WET_SHIFT_MM,
        censor,
    };

    let uncensored = wet.iter().filter(|&&x| x > censor).count();
    if uncensored < 3 {
        let params = build(&start);
        return Ok(FitResult {
            model: DistModel::Egp(params),
            neg_log_lik: egp_neg_log_lik(&params, wet),
            converged: false,
            iterations: 0,
            sample_size: wet.len(),
        });
    }

    let objective = |t: &[f64]| egp_neg_log_lik(&build(t), wet);
    let m = minimize(objective, &start, &cfg.optimizer());
    let params = build(&m.x);
    params.validate()?;
    Ok(FitResult {
        model: DistModel::Egp(params),
        neg_log_lik: m.value,
        converged: m.converged,
        iterations: m.iterations,
        sample_size: wet.len(),
    })
}

pub fn fit_empirical(wet: &[f64]) -> Result<FitResult> {
    let model = EmpiricalModel::new(wet.to_vec())?;
    Ok(FitResult {
        model: DistModel::Empirical(model),
        neg_log_lik: f64::NAN,
        converged: true,
        iterations: 0,
        sample_size: wet.len(),
    })
}
