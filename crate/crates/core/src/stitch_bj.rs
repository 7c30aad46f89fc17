//! Order-statistic goodness-of-fit profiles and the Stitch-BJ splice.
//!
//! For a sorted sample `x_(1) <= ... <= x_(n)` and a candidate model `F`, the
//! probability-integral values `u_(i) = F(x_(i))` are, under the null, uniform
//! order statistics with `u_(i) ~ Beta(i, n - i + 1)`. Each index gets a
//! two-sided p-value `k_i`; index `i` is rejected when `k_i` falls below a
//! tail-weighted threshold whose overall scale is calibrated by Monte Carlo so
//! that the family-wise false-rejection rate equals the requested level.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::dist::{DistModel, ModelKind, StitchModel};
use crate::error::{Error, Result};
use crate::fitting::FitResult;

/// Null replicates drawn per calibration anchor.
pub const CALIBRATION_REPLICATES: usize = 4000;

/// Sample sizes at which the threshold scale is calibrated directly; other
/// sizes interpolate `ln c` linearly in `ln n` between neighbours.
const CALIBRATION_ANCHORS: &[usize] = &[
    1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30, 40, 50, 60, 80, 100, 120, 150, 200, 250, 300,
    400, 500, 600, 800, 1000, 1200, 1500, 2000, 2500, 3000, 4000, 5000,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofProfile {
    pub k_values: Vec<f64>,
    pub threshold: Vec<f64>,
    pub rejected: Vec<bool>,
}

impl GofProfile {
    pub fn n(&self) -> usize {
        self.k_values.len()
    }

    pub fn rejection_count(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }

    /// True if any 1-based index in `range` is rejected.
    fn any_rejected_in(&self, range: std::ops::RangeInclusive<usize>) -> bool {
        range
            .filter(|&i| i >= 1 && i <= self.n())
            .any(|i| self.rejected[i - 1])
    }
}

/// 1-based lower/upper rejection indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectionIndices {
    pub i_l: Option<usize>,
    pub i_u: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub model: ModelKind,
    pub rejection_count: usize,
    pub tail_error_mm: f64,
    pub indices: RejectionIndices,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchDecision {
    pub chosen: StitchModel,
    pub label: String,
    pub candidates_considered: Vec<CandidateSummary>,
    pub egp_profile: GofProfile,
    pub expw_profile: GofProfile,
}

/// Every label a decision can carry.
pub const STITCH_LABELS: [&str; 10] = [
    "EGP",
    "ExpW",
    "EMP",
    "ExpW-EGP",
    "EGP-EMP",
    "EMP-EGP",
    "EMP-EGP-ExpW",
    "ExpW-EGP-EMP",
    "EMP-ExpW",
    "ExpW-EMP",
];

/// Two-sided p-value of `u` as the `i`-th of `n` uniform order statistics.
pub fn order_stat_pvalue(u: f64, i: usize, n: usize) -> f64 {
    if u.is_nan() || u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    let a = i as f64;
    let b = (n - i + 1) as f64;
    let lower = beta_reg(a, b, u);
    let k = if lower <= 0.5 {
        2.0 * lower
    } else {
        2.0 * beta_reg(b, a, 1.0 - u)
    };
    k.clamp(0.0, 1.0)
}

fn pvalues_from_sorted_u(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    u.iter()
        .enumerate()
        .map(|(idx, &v)| order_stat_pvalue(v, idx + 1, n))
        .collect()
}

fn sorted_copy(wet: &[f64]) -> Result<Vec<f64>> {
    if wet.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut xs = wet.to_vec();
    xs.sort_by(f64::total_cmp);
    Ok(xs)
}

/// Probability integral transform; models with atoms use the mid-distribution
/// value `(F(x-) + F(x)) / 2` so that a step CDF evaluated at its own jumps
/// lands at the centre of each step.
fn pit(model: &DistModel, x: f64) -> f64 {
    let upper = model.cdf(x);
    if model.has_atoms() {
        0.5 * (model.cdf(x.next_down()) + upper)
    } else {
        upper
    }
}

/// Per-order-statistic p-values of `wet` under `model`, with thresholds at `level`.
pub fn bj_pvalues(wet: &[f64], model: &DistModel, level: f64) -> Result<GofProfile> {
    model.validate()?;
    let xs = sorted_copy(wet)?;
    let u: Vec<f64> = xs.iter().map(|&x| pit(model, x)).collect();
    let k_values = pvalues_from_sorted_u(&u);
    let threshold = pbj_threshold(xs.len(), level)?;
    Ok(profile_from(k_values, threshold))
}

fn profile_from(k_values: Vec<f64>, threshold: Vec<f64>) -> GofProfile {
    let rejected = k_values
        .iter()
        .zip(&threshold)
        .map(|(k, t)| k < t)
        .collect();
    GofProfile {
        k_values,
        threshold,
        rejected,
    }
}

/// Uncalibrated thresholds `level / (n w_i)` with `w_i = 1 / (1 + ln(n / min(i, n-i+1)))`.
fn base_thresholds(n: usize, level: f64) -> Vec<f64> {
    (1..=n)
        .map(|i| {
            let m = i.min(n - i + 1) as f64;
            let w = 1.0 / (1.0 + (n as f64 / m).ln());
            level / (n as f64 * w)
        })
        .collect()
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(level))
    }
}

/// Per-index rejection thresholds for a sample of size `n` at family-wise `level`.
pub fn pbj_threshold(n: usize, level: f64) -> Result<Vec<f64>> {
    check_level(level)?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let c = calibration_constant(n, level);
    Ok(base_thresholds(n, level).into_iter().map(|t| c * t).collect())
}

/// Threshold scale `c` for size `n`, interpolated between calibrated anchors.
pub fn calibration_constant(n: usize, level: f64) -> f64 {
    let last = *CALIBRATION_ANCHORS.last().unwrap();
    if n >= last {
        return anchor_constant(last, level);
    }
    match CALIBRATION_ANCHORS.binary_search(&n) {
        Ok(_) => anchor_constant(n, level),
        Err(pos) => {
            let (lo, hi) = (CALIBRATION_ANCHORS[pos - 1], CALIBRATION_ANCHORS[pos]);
            let (clo, chi) = (anchor_constant(lo, level), anchor_constant(hi, level));
            let t = ((n as f64).ln() - (lo as f64).ln()) / ((hi as f64).ln() - (lo as f64).ln());
            (clo.ln() + t * (chi.ln() - clo.ln())).exp()
        }
    }
}

type CacheKey = (usize, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<OnceLock<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<OnceLock<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn anchor_constant(n: usize, level: f64) -> f64 {
    let cell = {
        let mut map = cache().lock().unwrap_or_else(|e| e.into_inner());
        map.entry((n, level.to_bits())).or_default().clone()
    };
    *cell.get_or_init(|| calibrate(n, level, CALIBRATION_REPLICATES))
}

/// Sorted uniform order statistics from normalized exponential spacings.
pub fn uniform_order_stats<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut acc = 0.0;
    let mut sums = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        let e: f64 = -(1.0 - rng.random::<f64>()).ln();
        acc += e;
        sums.push(acc);
    }
    let total = acc;
    sums.truncate(n);
    sums.iter_mut().for_each(|s| *s /= total);
    sums
}

fn calibration_rng(n: usize, level: f64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB1_0C5 ^ level.to_bits());
    rng.set_stream(((n as u64) << 24) ^ replicate as u64);
    rng
}

/// Monte-Carlo calibration: `c` is chosen so that `level * replicates` null
/// replicates have `min_i k_i / base_i < c`.
fn calibrate(n: usize, level: f64, replicates: usize) -> f64 {
    let base = base_thresholds(n, level);
    let mut minima: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = calibration_rng(n, level, r);
            let u = uniform_order_stats(n, &mut rng);
            u.iter()
                .enumerate()
                .map(|(idx, &v)| order_stat_pvalue(v, idx + 1, n) / base[idx])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    minima.sort_by(f64::total_cmp);
    let m = (level * replicates as f64).round() as usize;
    minima[m.min(replicates - 1)]
}

/// Lower index: largest rejected index with `2i <= n`; upper index: smallest
/// rejected index with `2i > n`.
pub fn rejection_indices(profile: &GofProfile) -> RejectionIndices {
    let n = profile.n();
    let mut out = RejectionIndices::default();
    for (idx, &r) in profile.rejected.iter().enumerate() {
        if !r {
            continue;
        }
        let i = idx + 1;
        if 2 * i <= n {
            out.i_l = Some(i);
        } else if out.i_u.is_none() {
            out.i_u = Some(i);
        }
    }
    out
}

/// Largest absolute quantile error over the top 5% of plotting positions `i / (n + 1)`.
pub fn upper_tail_error(sorted: &[f64], model: &DistModel) -> f64 {
    let n = sorted.len();
    let start = ((0.95 * n as f64).ceil() as usize).max(1);
    (start..=n)
        .map(|i| {
            let q = model.quantile_unchecked(i as f64 / (n as f64 + 1.0));
            (q - sorted[i - 1]).abs()
        })
        .fold(0.0, f64::max)
}

/// Rejections inside the central half `(n/4, 3n/4)`.
fn bulk_rejected(profile: &GofProfile) -> bool {
    let n = profile.n() as f64;
    profile
        .rejected
        .iter()
        .enumerate()
        .any(|(idx, &r)| r && (idx + 1) as f64 > n / 4.0 && ((idx + 1) as f64) < 3.0 * n / 4.0)
}

#[derive(Clone, Copy, PartialEq)]
enum Segment {
    Egp,
    ExpW,
    Emp,
}

impl Segment {
    fn name(self) -> &'static str {
        match self {
            Segment::Egp => "EGP",
            Segment::ExpW => "ExpW",
            Segment::Emp => "EMP",
        }
    }
}

struct Plan {
    lower: Option<(Segment, usize)>,
    core: Segment,
    upper: Option<(Segment, usize)>,
}

impl Plan {
    fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some((s, _)) = self.lower {
            parts.push(s.name());
        }
        parts.push(self.core.name());
        if let Some((s, _)) = self.upper {
            parts.push(s.name());
        }
        parts.join("-")
    }

    fn allowed(&self) -> bool {
        STITCH_LABELS.contains(&self.label().as_str())
    }
}

fn fetch<'a>(
    fits: &'a BTreeMap<ModelKind, FitResult>,
    kind: ModelKind,
    tag: &'static str,
) -> Result<&'a DistModel> {
    fits.get(&kind)
        .map(|f| &f.model)
        .ok_or(Error::MissingCandidate(tag))
}

/// Chooses and assembles the stitched model for one wet-day sample.
///
/// Order of preference: pure EGP if accepted everywhere; pure ExpW if it is
/// accepted everywhere and beats EGP on the upper-tail error; an EGP core with
/// rejected tails patched by ExpW (when ExpW passes on that tail) or EMP; an
/// ExpW core with EMP patches; pure EMP. Cores rejected in the central half
/// are never used, and splices outside [`STITCH_LABELS`] fall through to the
/// next option.
pub fn build_stitch(
    wet: &[f64],
    fits: &BTreeMap<ModelKind, FitResult>,
    level: f64,
) -> Result<StitchDecision> {
    let egp = fetch(fits, ModelKind::Egp, "egp")?;
    let expw = fetch(fits, ModelKind::ExpW, "expw")?;
    let emp = fetch(fits, ModelKind::Empirical, "emp")?;
    let xs = sorted_copy(wet)?;
    let n = xs.len();

    let egp_profile = bj_pvalues(&xs, egp, level)?;
    let expw_profile = bj_pvalues(&xs, expw, level)?;
    let egp_idx = rejection_indices(&egp_profile);
    let expw_idx = rejection_indices(&expw_profile);
    let egp_err = upper_tail_error(&xs, egp);
    let expw_err = upper_tail_error(&xs, expw);

    let candidates_considered = vec![
        CandidateSummary {
            model: ModelKind::Egp,
            rejection_count: egp_profile.rejection_count(),
            tail_error_mm: egp_err,
            indices: egp_idx,
        },
        CandidateSummary {
            model: ModelKind::ExpW,
            rejection_count: expw_profile.rejection_count(),
            tail_error_mm: expw_err,
            indices: expw_idx,
        },
    ];

    let egp_clean = egp_profile.rejection_count() == 0;
    let expw_clean = expw_profile.rejection_count() == 0;

    let plan = if egp_clean {
        Some(Plan {
            lower: None,
            core: Segment::Egp,
            upper: None,
        })
    } else if expw_clean && egp_err > expw_err {
        Some(Plan {
            lower: None,
            core: Segment::ExpW,
            upper: None,
        })
    } else {
        None
    };

    let plan = plan
        .or_else(|| {
            if bulk_rejected(&egp_profile) {
                return None;
            }
            let lower = egp_idx.i_l.map(|il| {
                let seg = if expw_profile.any_rejected_in(1..=il) {
                    Segment::Emp
                } else {
                    Segment::ExpW
                };
                (seg, il)
            });
            let upper = egp_idx.i_u.map(|iu| {
                let seg = if expw_profile.any_rejected_in(iu..=n) {
                    Segment::Emp
                } else {
                    Segment::ExpW
                };
                (seg, iu)
            });
            let p = Plan {
                lower,
                core: Segment::Egp,
                upper,
            };
            p.allowed().then_some(p)
        })
        .or_else(|| {
            if bulk_rejected(&expw_profile) {
                return None;
            }
            let p = Plan {
                lower: expw_idx.i_l.map(|il| (Segment::Emp, il)),
                core: Segment::ExpW,
                upper: expw_idx.i_u.map(|iu| (Segment::Emp, iu)),
            };
            p.allowed().then_some(p)
        })
        .unwrap_or(Plan {
            lower: None,
            core: Segment::Emp,
            upper: None,
        });

    let pick = |s: Segment| -> DistModel {
        match s {
            Segment::Egp => egp.clone(),
            Segment::ExpW => expw.clone(),
            Segment::Emp => emp.clone(),
        }
    };
    let label = plan.label();
    let chosen = StitchModel {
        lower: plan.lower.map(|(s, _)| Box::new(pick(s))),
        core: Box::new(pick(plan.core)),
        upper: plan.upper.map(|(s, _)| Box::new(pick(s))),
        p_lower: plan.lower.map_or(0.0, |(_, i)| i as f64 / n as f64),
        p_upper: plan.upper.map_or(1.0, |(_, i)| i as f64 / n as f64),
        label: label.clone(),
    };
    Ok(StitchDecision {
        chosen,
        label,
        candidates_considered,
        egp_profile,
        expw_profile,
    })
}

/// Label counts and replacement fractions for one group of decisions.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplacementSummary {
    pub total: usize,
    pub label_counts: BTreeMap<String, usize>,
    /// `p_lower` of every model with a replaced lower tail, ascending.
    pub lower_fractions: Vec<f64>,
    /// `1 - p_upper` of every model with a replaced upper tail, ascending.
    pub upper_fractions: Vec<f64>,
}

impl ReplacementSummary {
    pub fn label_share(&self, label: &str) -> f64 {
        *self.label_counts.get(label).unwrap_or(&0) as f64 / self.total.max(1) as f64
    }

    pub fn lower_median(&self) -> Option<f64> {
        median(&self.lower_fractions)
    }

    pub fn upper_median(&self) -> Option<f64> {
        median(&self.upper_fractions)
    }
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Groups stitched models by key (typically the season) and tallies them.
pub fn replacement_stats<'a, K: Ord>(
    decisions: impl IntoIterator<Item = (K, &'a StitchModel)>,
) -> BTreeMap<K, ReplacementSummary> {
    let mut out: BTreeMap<K, ReplacementSummary> = BTreeMap::new();
    for (key, model) in decisions {
        let entry = out.entry(key).or_default();
        entry.total += 1;
        *entry.label_counts.entry(model.label.clone()).or_default() += 1;
        if model.lower.is_some() {
            entry.lower_fractions.push(model.p_lower);
        }
        if model.upper.is_some() {
            entry.upper_fractions.push(1.0 - model.p_upper);
        }
    }
    for summary in out.values_mut() {
        summary.lower_fractions.sort_by(f64::total_cmp);
        summary.upper_fractions.sort_by(f64::total_cmp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{EgpParams, ExpWParams};
    use crate::fitting::{fit_egp, fit_empirical, fit_expw, FitConfig};
    use statrs::function::beta::inv_beta_reg;

    fn profile(rejected_idx: &[usize], n: usize) -> GofProfile {
        let mut rejected = vec![false; n];
        for &i in rejected_idx {
            rejected[i - 1] = true;
        }
        GofProfile {
            k_values: rejected.iter().map(|&r| if r { 0.0 } else { 1.0 }).collect(),
            threshold: vec![0.5; n],
            rejected,
        }
    }

    #[test]
    fn pvalue_at_beta_median_is_one() {
        let n = 37;
        for i in [1, 5, 19, 37] {
            let med = inv_beta_reg(i as f64, (n - i + 1) as f64, 0.5);
            assert!((order_stat_pvalue(med, i, n) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pvalues_bounded() {
        for &u in &[0.0, 1e-300, 0.3, 0.999999, 1.0, f64::NAN] {
            let k = order_stat_pvalue(u, 3, 10);
            assert!((0.0..=1.0).contains(&k));
        }
    }

    #[test]
    fn self_fit_has_no_rejections() {
        let xs: Vec<f64> = DistModel::Egp(EgpParams::new(3.0, 0.1, 1.0, 1.0, 3.0).unwrap()).sample(300, 8);
        let emp = fit_empirical(&xs).unwrap().model;
        let prof = bj_pvalues(&xs, &emp, 0.05).unwrap();
        assert_eq!(prof.rejection_count(), 0);
    }

    #[test]
    fn thresholds_symmetric_and_single() {
        let t = pbj_threshold(51, 0.05).unwrap();
        for i in 0..51 {
            assert_eq!(t[i], t[50 - i]);
        }
        let one = pbj_threshold(1, 0.05).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0] - calibration_constant(1, 0.05) * 0.05).abs() < 1e-15);
        // k_1 is uniform under the null, so c is close to 1 at n = 1
        assert!((calibration_constant(1, 0.05) - 1.0).abs() < 0.2);
        assert!(pbj_threshold(10, 0.0).is_err());
        assert!(pbj_threshold(10, 1.0).is_err());
    }

    #[test]
    fn threshold_calibration_n200() {
        let n = 200;
        let t = pbj_threshold(n, 0.05).unwrap();
        let reps = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut hits = 0;
        for _ in 0..reps {
            let u = uniform_order_stats(n, &mut rng);
            let k = pvalues_from_sorted_u(&u);
            if k.iter().zip(&t).any(|(k, t)| k < t) {
                hits += 1;
            }
        }
        let rate = hits as f64 / reps as f64;
        assert!((0.03..=0.07).contains(&rate), "rate {rate}");
    }

    #[test]
    fn rejection_index_examples() {
        assert_eq!(rejection_indices(&profile(&[], 100)), RejectionIndices::default());
        let r = rejection_indices(&profile(&[3, 5], 100));
        assert_eq!((r.i_l, r.i_u), (Some(5), None));
        let r = rejection_indices(&profile(&[2, 97, 99], 100));
        assert_eq!((r.i_l, r.i_u), (Some(2), Some(97)));
        // exactly n/2 belongs to the lower half
        let r = rejection_indices(&profile(&[50], 100));
        assert_eq!((r.i_l, r.i_u), (Some(50), None));
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let m = DistModel::Egp(EgpParams::new(3.0, 0.1, 1.0, 1.0, 3.0).unwrap());
        let xs = m.sample(200, 4);
        let p1 = bj_pvalues(&xs, &m, 0.05).unwrap();
        // y = x^2 applied to the data, model G(y) = F(sqrt(y))
        let mut ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        ys.sort_by(f64::total_cmp);
        let k2 = pvalues_from_sorted_u(&ys.iter().map(|y| m.cdf(y.sqrt())).collect::<Vec<_>>());
        assert_eq!(p1.k_values, k2);
    }

    fn fits_for(xs: &[f64]) -> BTreeMap<ModelKind, FitResult> {
        let cfg = FitConfig::default();
        let mut fits = BTreeMap::new();
        fits.insert(ModelKind::Egp, fit_egp(xs, &cfg).unwrap());
        fits.insert(ModelKind::ExpW, fit_expw(xs, &cfg).unwrap());
        fits.insert(ModelKind::Empirical, fit_empirical(xs).unwrap());
        fits
    }

    #[test]
    fn pure_egp_data_is_pure_egp() {
        let truth = DistModel::Egp(EgpParams::new(4.0, 0.1, 1.0, 1.0, 3.0).unwrap());
        let xs = truth.sample(500, 12);
        let mut fits = fits_for(&xs);
        // hand the true model in as the EGP candidate
        fits.get_mut(&ModelKind::Egp).unwrap().model = truth.clone();
        let d = build_stitch(&xs, &fits, 0.05).unwrap();
        assert_eq!(d.label, "EGP");
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            assert_eq!(
                crate::dist::stitch_quantile(&d.chosen, p).unwrap(),
                truth.quantile(p).unwrap()
            );
        }
    }

    #[test]
    fn missing_candidate() {
        let xs: Vec<f64> = (0..30).map(|i| 1.5 + i as f64).collect();
        let mut fits = fits_for(&xs);
        fits.remove(&ModelKind::ExpW);
        assert!(matches!(
            build_stitch(&xs, &fits, 0.05),
            Err(Error::MissingCandidate("expw"))
        ));
    }

    #[test]
    fn heavy_upper_tail_replaced_by_empirical() {
        let truth = DistModel::Egp(EgpParams::new(4.0, 0.1, 1.0, 1.0, 3.0).unwrap());
        let mut xs = truth.sample(2000, 77);
        xs.sort_by(f64::total_cmp);
        for x in xs.iter_mut().skip(1960) {
            *x *= 3.0;
        }
        let mut fits = fits_for(&xs);
        fits.get_mut(&ModelKind::Egp).unwrap().model = truth;
        // an ExpW that is far off in the upper tail
        fits.get_mut(&ModelKind::ExpW).unwrap().model =
            DistModel::ExpW(ExpWParams::new(1.0, 4.0, 1.0, 1.0).unwrap());
        let d = build_stitch(&xs, &fits, 0.05).unwrap();
        assert_eq!(d.label, "EGP-EMP", "{:?}", d.candidates_considered);
        assert!(d.chosen.p_upper < 1.0);
    }

    #[test]
    fn lower_tail_replaced_by_expw() {
        // data: ExpW body, EGP candidate that misfits only the low end
        let expw = DistModel::ExpW(ExpWParams::new(0.7, 3.0, 2.5, 1.0).unwrap());
        let xs = expw.sample(2000, 5);
        let mut fits = fits_for(&xs);
        fits.get_mut(&ModelKind::ExpW).unwrap().model = expw.clone();
        let d = build_stitch(&xs, &fits, 0.05).unwrap();
        assert!(STITCH_LABELS.contains(&d.label.as_str()));
        // EGP with censoring fits the upper part; any lower patch must be ExpW
        if d.chosen.lower.is_some() && d.chosen.core.family() == "egp" {
            assert_eq!(d.chosen.lower.as_deref().unwrap().family(), "expw");
        }
    }

    #[test]
    fn stitched_quantile_is_monotone() {
        let truth = DistModel::Egp(EgpParams::new(4.0, 0.1, 1.0, 1.0, 3.0).unwrap());
        for seed in 0..5 {
            let mut xs = truth.sample(1000, seed);
            xs.sort_by(f64::total_cmp);
            for x in xs.iter_mut().skip(980) {
                *x *= 3.0;
            }
            for x in xs.iter_mut().take(30) {
                *x = 1.0 + (*x - 1.0) * 0.05;
            }
            let d = build_stitch(&xs, &fits_for(&xs), 0.05).unwrap();
            let a = build_stitch(&xs, &fits_for(&xs), 0.05).unwrap();
            assert_eq!(d.label, a.label);
            assert_eq!(d.chosen, a.chosen);
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=1000 {
                let q = crate::dist::stitch_quantile(&d.chosen, i as f64 / 1000.0).unwrap();
                assert!(q >= prev, "seed {seed} label {}", d.label);
                prev = q;
            }
        }
    }

    #[test]
    fn replacement_stats_examples() {
        let egp = DistModel::Egp(EgpParams::new(4.0, 0.1, 1.0, 1.0, 3.0).unwrap());
        let pure = StitchModel::degenerate(egp.clone(), "EGP");
        let stats = replacement_stats([(0u8, &pure), (0u8, &pure)]);
        assert_eq!(stats[&0].label_share("EGP"), 1.0);
        assert!(stats[&0].lower_fractions.is_empty());
        assert!(stats[&0].upper_median().is_none());

        let expw = DistModel::ExpW(ExpWParams::new(1.0, 3.0, 1.0, 1.0).unwrap());
        let low = StitchModel {
            lower: Some(Box::new(expw)),
            core: Box::new(egp.clone()),
            upper: None,
            p_lower: 0.05,
            p_upper: 1.0,
            label: "ExpW-EGP".into(),
        };
        let stats = replacement_stats([(1u8, &low)]);
        assert_eq!(stats[&1].lower_median(), Some(0.05));
    }

    #[test]
    fn replacement_stats_recount() {
        let egp = DistModel::Egp(EgpParams::new(4.0, 0.1, 1.0, 1.0, 3.0).unwrap());
        let emp = DistModel::Empirical(crate::dist::EmpiricalModel::new(vec![2.0, 3.0, 5.0]).unwrap());
        let mut models = Vec::new();
        for i in 0..40 {
            let m = match i % 3 {
                0 => StitchModel::degenerate(egp.clone(), "EGP"),
                1 => StitchModel {
                    lower: None,
                    core: Box::new(egp.clone()),
                    upper: Some(Box::new(emp.clone())),
                    p_lower: 0.0,
                    p_upper: 1.0 - 0.001 * i as f64,
                    label: "EGP-EMP".into(),
                },
                _ => StitchModel {
                    lower: Some(Box::new(emp.clone())),
                    core: Box::new(egp.clone()),
                    upper: None,
                    p_lower: 0.002 * i as f64,
                    p_upper: 1.0,
                    label: "EMP-EGP".into(),
                },
            };
            models.push((i % 2, m));
        }
        let stats = replacement_stats(models.iter().map(|(k, m)| (*k, m)));
        for key in 0..2 {
            let mine: Vec<_> = models.iter().filter(|(k, _)| *k == key).collect();
            let s = &stats[&key];
            assert_eq!(s.total, mine.len());
            for label in ["EGP", "EGP-EMP", "EMP-EGP"] {
                let cnt = mine.iter().filter(|(_, m)| m.label == label).count();
                assert_eq!(s.label_counts.get(label).copied().unwrap_or(0), cnt);
            }
            let mut lows: Vec<f64> = mine.iter().filter(|(_, m)| m.lower.is_some()).map(|(_, m)| m.p_lower).collect();
            lows.sort_by(f64::total_cmp);
            assert_eq!(s.lower_fractions, lows);
        }
    }
}
