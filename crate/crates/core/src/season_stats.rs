//! Seasonal partitioning, wet-day samples and stationarity t-tests.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::grid_io::GridStack;

/// Meteorological season. December belongs to the DJF of the following winter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Season {
    DJF,
    MAM,
    JJA,
    SON,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::DJF, Season::MAM, Season::JJA, Season::SON];

    pub fn from_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::DJF,
            3..=5 => Season::MAM,
            6..=8 => Season::JJA,
            _ => Season::SON,
        }
    }

    /// Calendar months in within-season order (December first for DJF).
    pub fn months(self) -> [u32; 3] {
        match self {
            Season::DJF => [12, 1, 2],
            Season::MAM => [3, 4, 5],
            Season::JJA => [6, 7, 8],
            Season::SON => [9, 10, 11],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::DJF => "DJF",
            Season::MAM => "MAM",
            Season::JJA => "JJA",
            Season::SON => "SON",
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Season {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Season::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown season `{s}`")))
    }
}

/// The days of one season inside a stack.
#[derive(Debug, Clone)]
pub struct SeasonSlice<'a> {
    pub season: Season,
    pub stack: &'a GridStack,
    /// Time indices into `stack`, ascending.
    pub days: Vec<usize>,
}

impl SeasonSlice<'_> {
    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn pixel_series(&self, lat: usize, lon: usize) -> Result<Vec<f64>> {
        self.stack.check_pixel(lat, lon)?;
        Ok(self
            .days
            .iter()
            .map(|&t| self.stack.value(t, lat, lon) as f64)
            .collect())
    }
}

/// Partitions the stack's days by season. Seasons without days are omitted.
pub fn split_seasons(stack: &GridStack) -> BTreeMap<Season, SeasonSlice<'_>> {
    let mut out: BTreeMap<Season, SeasonSlice<'_>> = BTreeMap::new();
    for (t, date) in stack.dates().enumerate() {
        let season = Season::from_month(date.month());
        out.entry(season)
            .or_insert_with(|| SeasonSlice {
                season,
                stack,
                days: Vec::new(),
            })
            .days
            .push(t);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalSample {
    pub pixel: (usize, usize),
    pub season: Season,
    pub wet: Vec<f64>,
    pub alpha: f64,
    pub n_days: usize,
}

/// Wet values (strictly above `threshold_mm`), dry-day probability and the
/// count of non-missing days. A series without valid days reports `alpha = 1`.
pub fn wet_sample(series: &[f64], threshold_mm: f64) -> (Vec<f64>, f64, usize) {
    let valid: Vec<f64> = series.iter().copied().filter(|v| !v.is_nan()).collect();
    let wet: Vec<f64> = valid.iter().copied().filter(|&v| v > threshold_mm).collect();
    let n = valid.len();
    let alpha = if n == 0 {
        1.0
    } else {
        1.0 - wet.len() as f64 / n as f64
    };
    (wet, alpha, n)
}

pub fn extract_sample(
    stack: &GridStack,
    pixel: (usize, usize),
    season: Season,
    threshold_mm: f64,
) -> Result<SeasonalSample> {
    stack.check_pixel(pixel.0, pixel.1)?;
    let series: Vec<f64> = stack
        .dates()
        .enumerate()
        .filter(|(_, d)| Season::from_month(d.month()) == season)
        .map(|(t, _)| stack.value(t, pixel.0, pixel.1) as f64)
        .collect();
    let (wet, alpha, n_days) = wet_sample(&series, threshold_mm);
    Ok(SeasonalSample {
        pixel,
        season,
        wet,
        alpha,
        n_days,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestReport {
    pub pairing: (String, String),
    pub statistic: f64,
    pub p_value: f64,
    pub rejected_at_5pct: bool,
}

fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (n, mean, var)
}

/// Two-sided Student t p-value, `I_{df/(df+t^2)}(df/2, 1/2)`.
fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

fn report(statistic: f64, p_value: f64) -> TTestReport {
    TTestReport {
        pairing: ("a".into(), "b".into()),
        statistic,
        p_value,
        rejected_at_5pct: p_value < 0.05,
    }
}

fn check_sizes(a: &[f64], b: &[f64]) -> Result<()> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(Error::InsufficientSample { needed: 2, got });
    }
    Ok(())
}

/// Pooled-variance two-sample Student t-test of equal means.
pub fn ttest_means(a: &[f64], b: &[f64]) -> Result<TTestReport> {
    check_sizes(a, b)?;
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
    if pooled == 0.0 {
        if ma == mb {
            return Err(Error::DegenerateVariance);
        }
        let t = (ma - mb).signum() * f64::INFINITY;
        return Ok(report(t, 0.0));
    }
    let t = (ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(report(t, t_two_sided(t, df)))
}

/// Welch's unequal-variance t-test.
pub fn ttest_means_welch(a: &[f64], b: &[f64]) -> Result<TTestReport> {
    check_sizes(a, b)?;
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (sa, sb) = (va / na, vb / nb);
    if sa + sb == 0.0 {
        if ma == mb {
            return Err(Error::DegenerateVariance);
        }
        return Ok(report((ma - mb).signum() * f64::INFINITY, 0.0));
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(report(t, t_two_sided(t, df)))
}

/// Symmetric matrix of rejection proportions between labelled groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionMatrix {
    pub labels: Vec<String>,
    /// `values[a][b]`, `None` on the diagonal or when no pixel was testable.
    pub values: Vec<Vec<Option<f64>>>,
}

/// For each pixel, `groups[pixel][g]` holds the daily values of group `g`.
/// Pixels where a pair cannot be tested (fewer than two values) are left out
/// of that pair's denominator; constant-and-equal pairs count as not rejected.
pub fn rejection_proportions(labels: &[String], groups: &[Vec<Vec<f64>>], welch: bool) -> ProportionMatrix {
    let k = labels.len();
    let mut values = vec![vec![None; k]; k];
    for a in 0..k {
        for b in (a + 1)..k {
            let (mut tested, mut rejected) = (0usize, 0usize);
            for pixel in groups {
                let test = if welch {
                    ttest_means_welch(&pixel[a], &pixel[b])
                } else {
                    ttest_means(&pixel[a], &pixel[b])
                };
                match test {
                    Ok(r) => {
                        tested += 1;
                        rejected += r.rejected_at_5pct as usize;
                    }
                    Err(Error::DegenerateVariance) => tested += 1,
                    Err(_) => {}
                }
            }
            if tested > 0 {
                let p = rejected as f64 / tested as f64;
                values[a][b] = Some(p);
                values[b][a] = Some(p);
            }
        }
    }
    ProportionMatrix {
        labels: labels.to_vec(),
        values,
    }
}

/// Table with `upper` above the diagonal and `lower` below it, as CSV text.
/// The first column holds row labels; the diagonal is `x`.
pub fn paired_table_csv(title: &str, upper: &ProportionMatrix, lower: &ProportionMatrix) -> Result<String> {
    if upper.labels != lower.labels {
        return Err(Error::DimensionMismatch(
            "proportion matrices have different labels".into(),
        ));
    }
    let k = upper.labels.len();
    let mut out = String::new();
    out.push_str(title);
    for l in &upper.labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    let fmt_cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |p| format!("{p:.4}"));
    for a in 0..k {
        out.push_str(&upper.labels[a]);
        for b in 0..k {
            out.push(',');
            let cell = match a.cmp(&b) {
                std::cmp::Ordering::Equal => "x".to_string(),
                std::cmp::Ordering::Less => fmt_cell(upper.values[a][b]),
                std::cmp::Ordering::Greater => fmt_cell(lower.values[a][b]),
            };
            out.push_str(&cell);
        }
        out.push('\n');
    }
    Ok(out)
}
