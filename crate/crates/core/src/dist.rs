//! Wet-day intensity distributions.
//!
//! Every parametric family is defined on the shifted variable `y = x - shift`,
//! where `shift` is the wet-day threshold (1 mm). The empirical model works on
//! raw intensities, and the stitched model splices up to three of the others
//! in probability space.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Location shift applied to every parametric family.
pub const WET_SHIFT_MM: f64 = 1.0;

/// Default EGP left-censoring level in mm of rain.
pub const DEFAULT_CENSOR_MM: f64 = 3.0;

/// Below this the EGP tail index is treated as exactly zero.
const XI_ZERO: f64 = 1e-12;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(p))
    }
}

/// Gamma distribution on `x - shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
    pub shift: f64,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64, shift: f64) -> Result<Self> {
        let p = Self { shape, scale, shift };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.shape > 0.0 && self.shape.is_finite(), || {
            format!("gamma shape must be positive, got {}", self.shape)
        })?;
        check(self.scale > 0.0 && self.scale.is_finite(), || {
            format!("gamma scale must be positive, got {}", self.scale)
        })?;
        check(self.shift >= 0.0 && self.shift.is_finite(), || {
            format!("shift must be nonnegative, got {}", self.shift)
        })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let y = x - self.shift;
        if y <= 0.0 {
            return 0.0;
        }
        if y.is_infinite() {
            return 1.0;
        }
        gamma_lr(self.shape, y / self.scale)
    }

    /// Log density of the shifted variable `y = x - shift`.
    pub fn ln_pdf_shifted(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.shape - 1.0) * y.ln() - y / self.scale - ln_gamma(self.shape)
            - self.shape * self.scale.ln()
    }

    fn quantile_unchecked(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.shift;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        self.shift + self.scale * inverse_gamma_lr(self.shape, p)
    }
}

/// Solves `P(a, z) = p` for `z` with safeguarded Newton steps.
fn inverse_gamma_lr(a: f64, p: f64) -> f64 {
    let lg = ln_gamma(a);
    let mut lo = 0.0_f64;
    let mut hi = a.max(1.0);
    while gamma_lr(a, hi) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = gamma_lr(a, z) - p;
        if f == 0.0 {
            return z;
        }
        if f < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let dens = ((a - 1.0) * z.ln() - z - lg).exp();
        let mut next = z - f / dens;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 1e-15 * z.abs().max(1e-300) || hi - lo <= 1e-15 * hi {
            return next;
        }
        z = next;
    }
    z
}

/// Exponentiated Weibull distribution on `x - shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpWParams {
    pub shape: f64,
    pub scale: f64,
    pub exponent: f64,
    pub shift: f64,
}

impl ExpWParams {
    pub fn new(shape: f64, scale: f64, exponent: f64, shift: f64) -> Result<Self> {
        let p = Self {
            shape,
            scale,
            exponent,
            shift,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("shape", self.shape),
            ("scale", self.scale),
            ("exponent", self.exponent),
        ] {
            check(v > 0.0 && v.is_finite(), || {
                format!("ExpW {name} must be positive, got {v}")
            })?;
        }
        check(self.shift >= 0.0 && self.shift.is_finite(), || {
            format!("shift must be nonnegative, got {}", self.shift)
        })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let y = x - self.shift;
        if y <= 0.0 {
            return 0.0;
        }
        let z = (y / self.scale).powf(self.shape);
        (-(-z).exp_m1()).powf(self.exponent)
    }

    pub fn ln_pdf_shifted(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let r = y / self.scale;
        let z = r.powf(self.shape);
        let h = -(-z).exp_m1();
        self.exponent.ln() + self.shape.ln() - self.scale.ln() + (self.shape - 1.0) * r.ln() - z
            + (self.exponent - 1.0) * h.ln()
    }

    fn quantile_unchecked(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.shift;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let z = -(-(p.ln() / self.exponent).exp_m1()).ln();
        self.shift + self.scale * z.powf(1.0 / self.shape)
    }
}

/// Type-1 extended generalized Pareto distribution on `x - shift`.
///
/// `censor` is the left-censoring level (raw mm) used by the likelihood; it
/// does not change the distribution itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgpParams {
    pub sigma: f64,
    pub xi: f64,
    pub kappa: f64,
    pub shift: f64,
    pub censor: f64,
}

impl EgpParams {
    pub fn new(sigma: f64, xi: f64, kappa: f64, shift: f64, censor: f64) -> Result<Self> {
        let p = Self {
            sigma,
            xi,
            kappa,
            shift,
            censor,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.sigma > 0.0 && self.sigma.is_finite(), || {
            format!("EGP sigma must be positive, got {}", self.sigma)
        })?;
        check(self.xi >= 0.0 && self.xi.is_finite(), || {
            format!("EGP xi must be nonnegative, got {}", self.xi)
        })?;
        check(self.kappa > 0.0 && self.kappa.is_finite(), || {
            format!("EGP kappa must be positive, got {}", self.kappa)
        })?;
        check(self.shift >= 0.0 && self.censor >= 0.0, || {
            format!(
                "shift and censor must be nonnegative, got {} and {}",
                self.shift, self.censor
            )
        })
    }

    /// Generalized Pareto CDF `H(y)` that the EGP raises to the power kappa.
    fn gpd_cdf(&self, y: f64) -> f64 {
        if self.xi < XI_ZERO {
            -(-y / self.sigma).exp_m1()
        } else {
            -(-(self.xi * y / self.sigma).ln_1p() / self.xi).exp_m1()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_shifted(x - self.shift)
    }

    pub fn cdf_shifted(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        self.gpd_cdf(y).powf(self.kappa)
    }

    pub fn ln_pdf_shifted(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let ln_h = if self.xi < XI_ZERO {
            -self.sigma.ln() - y / self.sigma
        } else {
            -self.sigma.ln() - (1.0 / self.xi + 1.0) * (self.xi * y / self.sigma).ln_1p()
        };
        self.kappa.ln() + (self.kappa - 1.0) * self.gpd_cdf(y).ln() + ln_h
    }

    fn quantile_unchecked(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.shift;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let ln_tail = (-(p.ln() / self.kappa).exp_m1()).ln();
        let y = if self.xi < XI_ZERO {
            -self.sigma * ln_tail
        } else {
            self.sigma / self.xi * (-self.xi * ln_tail).exp_m1()
        };
        self.shift + y
    }
}

/// Empirical distribution of a wet-day sample (raw mm, not shifted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalModel {
    sorted_sample: Vec<f64>,
}

impl EmpiricalModel {
    /// Builds the model from an unsorted sample. Non-finite values are rejected.
    pub fn new(mut sample: Vec<f64>) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(bad) = sample.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "empirical sample contains non-finite value {bad}"
            )));
        }
        sample.sort_by(f64::total_cmp);
        Ok(Self {
            sorted_sample: sample,
        })
    }

    pub fn sorted_sample(&self) -> &[f64] {
        &self.sorted_sample
    }

    pub fn n(&self) -> usize {
        self.sorted_sample.len()
    }

    pub fn min(&self) -> f64 {
        self.sorted_sample[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted_sample[self.n() - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.sorted_sample.is_empty() {
            return Err(Error::EmptySample);
        }
        check(
            self.sorted_sample.windows(2).all(|w| w[0] <= w[1]),
            || "empirical sample is not sorted".into(),
        )
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let below = self.sorted_sample.partition_point(|&v| v <= x);
        below as f64 / self.n() as f64
    }

    /// Step inverse `x_(ceil(n p))`, clamped to the sample range.
    fn quantile_unchecked(&self, p: f64) -> f64 {
        let n = self.n();
        let t = n as f64 * p;
        // absorb rounding in n * (i / n)
        let k = (t - t * 4.0 * f64::EPSILON).ceil();
        let idx = (k as usize).clamp(1, n);
        self.sorted_sample[idx - 1]
    }
}

/// Semi-parametric splice of a parametric core with optional replacement tails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchModel {
    pub lower: Option<Box<DistModel>>,
    pub core: Box<DistModel>,
    pub upper: Option<Box<DistModel>>,
    pub p_lower: f64,
    pub p_upper: f64,
    pub label: String,
}

impl StitchModel {
    /// A stitch with no replacement tails, identical to `core`.
    pub fn degenerate(core: DistModel, label: impl Into<String>) -> Self {
        Self {
            lower: None,
            core: Box::new(core),
            upper: None,
            p_lower: 0.0,
            p_upper: 1.0,
            label: label.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(
            (0.0..=1.0).contains(&self.p_lower)
                && (0.0..=1.0).contains(&self.p_upper)
                && self.p_lower <= self.p_upper,
            || {
                format!(
                    "stitch breakpoints must satisfy 0 <= p_lower <= p_upper <= 1, got {} and {}",
                    self.p_lower, self.p_upper
                )
            },
        )?;
        self.core.validate()?;
        if let Some(l) = &self.lower {
            l.validate()?;
        }
        if let Some(u) = &self.upper {
            u.validate()?;
        }
        Ok(())
    }

    /// Quantile with running-maximum monotonization across segments.
    fn quantile_unchecked(&self, p: f64) -> f64 {
        if let Some(lower) = &self.lower {
            if p < self.p_lower {
                return lower.quantile_unchecked(p);
            }
        }
        let lower_cap = self
            .lower
            .as_ref()
            .map(|l| l.quantile_unchecked(self.p_lower));
        if let Some(upper) = &self.upper {
            if p >= self.p_upper {
                let mut v = upper.quantile_unchecked(p);
                v = v.max(self.core.quantile_unchecked(self.p_upper));
                if let Some(cap) = lower_cap {
                    v = v.max(cap);
                }
                return v;
            }
        }
        let v = self.core.quantile_unchecked(p);
        match lower_cap {
            Some(cap) => v.max(cap),
            None => v,
        }
    }

    /// Generalized inverse of the monotonized quantile: `sup { p : Q(p) <= x }`.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.lower.is_none() && self.upper.is_none() {
            return self.core.cdf(x);
        }
        if self.quantile_unchecked(0.0) > x {
            return 0.0;
        }
        if self.quantile_unchecked(1.0) <= x {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..128 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.quantile_unchecked(mid) <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Model families known to the pipeline; `StitchBj` is the semi-parametric splice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gamma,
    #[serde(rename = "expw")]
    ExpW,
    Egp,
    #[serde(rename = "emp")]
    Empirical,
    #[serde(rename = "stitchbj")]
    StitchBj,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Gamma,
        ModelKind::ExpW,
        ModelKind::Egp,
        ModelKind::Empirical,
        ModelKind::StitchBj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gamma => "gamma",
            ModelKind::ExpW => "expw",
            ModelKind::Egp => "egp",
            ModelKind::Empirical => "emp",
            ModelKind::StitchBj => "stitchbj",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// Any wet-day model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DistModel {
    Gamma(GammaParams),
    #[serde(rename = "expw")]
    ExpW(ExpWParams),
    Egp(EgpParams),
    Empirical(EmpiricalModel),
    Stitch(StitchModel),
}

impl DistModel {
    pub fn family(&self) -> &'static str {
        match self {
            DistModel::Gamma(_) => "gamma",
            DistModel::ExpW(_) => "expw",
            DistModel::Egp(_) => "egp",
            DistModel::Empirical(_) => "empirical",
            DistModel::Stitch(_) => "stitch",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistModel::Gamma(p) => p.validate(),
            DistModel::ExpW(p) => p.validate(),
            DistModel::Egp(p) => p.validate(),
            DistModel::Empirical(m) => m.validate(),
            DistModel::Stitch(s) => s.validate(),
        }
    }

    /// Cumulative probability at `x` (mm).
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            DistModel::Gamma(p) => p.cdf(x),
            DistModel::ExpW(p) => p.cdf(x),
            DistModel::Egp(p) => p.cdf(x),
            DistModel::Empirical(m) => m.cdf(x),
            DistModel::Stitch(s) => s.cdf(x),
        }
    }

    /// Inverse CDF. Parametric families return `+inf` at `p = 1`; the empirical
    /// model is clamped to its sample range.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_prob(p)?;
        Ok(self.quantile_unchecked(p))
    }

    pub(crate) fn quantile_unchecked(&self, p: f64) -> f64 {
        match self {
            DistModel::Gamma(m) => m.quantile_unchecked(p),
            DistModel::ExpW(m) => m.quantile_unchecked(p),
            DistModel::Egp(m) => m.quantile_unchecked(p),
            DistModel::Empirical(m) => m.quantile_unchecked(p),
            DistModel::Stitch(m) => m.quantile_unchecked(p),
        }
    }

    /// True when the CDF has jumps (empirical parts).
    pub fn has_atoms(&self) -> bool {
        match self {
            DistModel::Empirical(_) => true,
            DistModel::Stitch(s) => {
                s.core.has_atoms()
                    || s.lower.as_ref().is_some_and(|m| m.has_atoms())
                    || s.upper.as_ref().is_some_and(|m| m.has_atoms())
            }
            _ => false,
        }
    }

    /// Largest value the model can produce, `+inf` for unbounded families.
    pub fn upper_support(&self) -> f64 {
        self.quantile_unchecked(1.0)
    }

    /// Inverse-CDF draws from a ChaCha stream seeded with `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let u: f64 = rng.sample(Open01);
                self.quantile_unchecked(u)
            })
            .collect()
    }
}

/// Stitched quantile, exposed separately for callers that hold a bare [`StitchModel`].
pub fn stitch_quantile(model: &StitchModel, p: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(model.quantile_unchecked(p))
}
