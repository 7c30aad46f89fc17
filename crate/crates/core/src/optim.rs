//! Derivative-free Nelder–Mead minimizer used by the likelihood fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the simplex diameter.
    pub tolerance: f64,
    /// Extra runs started from jittered copies of the incumbent.
    pub restarts: usize,
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            tolerance: 1e-9,
            restarts: 3,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn eval(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let best = &simplex[0];
    simplex[1..]
        .iter()
        .map(|v| {
            v.iter()
                .zip(best)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Single Nelder–Mead run with standard coefficients.
fn run(
    f: &mut impl FnMut(&[f64]) -> f64,
    start: &[f64],
    step: f64,
    cfg: &NelderMeadConfig,
) -> Minimum {
    let dim = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(start.to_vec());
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += if v[i].abs() > 1e-8 { step * v[i].abs().max(1.0) } else { step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(f, v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        let mut order: Vec<usize> = (0..=dim).collect();
        // stable sort keeps the earlier vertex on ties
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if diameter(&simplex) < cfg.tolerance {
            converged = values[0].is_finite();
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|v| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = eval(f, &xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(f, &xe);
            if fe < fr {
                simplex[dim] = xe;
                values[dim] = fe;
            } else {
                simplex[dim] = xr;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = xr;
            values[dim] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[dim] {
            let xc = along(-0.5);
            let fc = eval(f, &xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(f, &xc);
            (xc, fc)
        };
        if fc < fr.min(values[dim]) {
            simplex[dim] = xc;
            values[dim] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=dim {
            for j in 0..dim {
                simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
            }
            values[i] = eval(f, &simplex[i]);
        }
    }
    let (mut bi, mut bv) = (0, values[0]);
    for (i, &v) in values.iter().enumerate() {
        if v < bv {
            bi = i;
            bv = v;
        }
    }
    Minimum {
        x: simplex[bi].clone(),
        value: bv,
        converged,
        iterations,
    }
}

/// Minimizes `f` from `start`, then restarts from jittered copies of the
/// incumbent. The lowest value wins; ties keep the earliest run.
pub fn minimize(mut f: impl FnMut(&[f64]) -> f64, start: &[f64], cfg: &NelderMeadConfig) -> Minimum {
    let mut best = run(&mut f, start, cfg.initial_step, cfg);
    let mut total = best.iterations;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f17);
    for _ in 0..cfg.restarts {
        let jittered: Vec<f64> = best
            .x
            .iter()
            .map(|v| v + cfg.initial_step * (rng.random::<f64>() - 0.5))
            .collect();
        let cand = run(&mut f, &jittered, cfg.initial_step, cfg);
        total += cand.iterations;
        if cand.value < best.value {
            best = Minimum {
                converged: cand.converged,
                ..cand
            };
        } else if cand.converged && (cand.value - best.value).abs() <= 1e-12 * best.value.abs().max(1.0) {
            best.converged = true;
        }
    }
    best.iterations = total;
    best
}
