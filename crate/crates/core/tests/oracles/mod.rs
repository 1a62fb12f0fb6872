//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use oscmode::latent::GridDistribution;
use oscmode::linalg::Matrix;
use oscmode::nn::Parameters;
use oscmode::vae::{Autoencoder, LATENT_DIM};
use oscmode::Real;
use rand::Rng;

/// Exhaustive search over integer transport plans for grids whose masses are
/// multiples of `1/units`. Only centre differences matter, so cells are
/// placed at `(j, i)·cell`.
pub fn brute_force_emd(p: &GridDistribution, q: &GridDistribution, units: u32) -> f64 {
    let to_units = |g: &GridDistribution| -> Vec<(usize, u32)> {
        g.masses
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(i, &m)| {
                let u = (m * units as f64).round();
                assert!((u / units as f64 - m).abs() < 1e-15, "mass {m} not a multiple of 1/{units}");
                (i, u as u32)
            })
            .collect()
    };
    let a = to_units(p);
    let b = to_units(q);
    let cols = p.shape().1;
    let w = p.cell_size();
    let centre = |k: usize| [(k % cols) as f64 * w[0], (k / cols) as f64 * w[1]];
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|&(i, _)| {
            b.iter()
                .map(|&(j, _)| {
                    let (x, y) = (centre(i), centre(j));
                    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt()
                })
                .collect()
        })
        .collect();
    let supply: Vec<u32> = a.iter().map(|x| x.1).collect();
    let mut demand: Vec<u32> = b.iter().map(|x| x.1).collect();
    let mut best = f64::INFINITY;
    search(0, &supply, &mut demand, &cost, 0.0, &mut best);
    best / units as f64
}

/// Distributes supply row `r` over the remaining demands in every possible way.
fn search(r: usize, supply: &[u32], demand: &mut [u32], cost: &[Vec<f64>], acc: f64, best: &mut f64) {
    if acc >= *best {
        return;
    }
    if r == supply.len() {
        if demand.iter().all(|&d| d == 0) && acc < *best {
            *best = acc;
        }
        return;
    }
    fill(r, 0, supply[r], supply, demand, cost, acc, best);
}

#[allow(clippy::too_many_arguments)]
fn fill(r: usize, c: usize, left: u32, supply: &[u32], demand: &mut [u32], cost: &[Vec<f64>], acc: f64, best: &mut f64) {
    if left == 0 {
        search(r + 1, supply, demand, cost, acc, best);
        return;
    }
    if c == demand.len() {
        return;
    }
    let max = left.min(demand[c]);
    for x in (0..=max).rev() {
        demand[c] -= x;
        fill(r, c + 1, left - x, supply, demand, cost, acc + x as f64 * cost[r][c], best);
        demand[c] += x;
    }
}

/// Random grid whose masses are multiples of `1/units`.
pub fn random_unit_grid<R: Rng>(rows: usize, cols: usize, units: u32, rng: &mut R) -> GridDistribution {
    let mut m = Matrix::zeros(rows, cols);
    for _ in 0..units {
        let k = rng.random_range(0..rows * cols);
        m.as_mut_slice()[k] += 1.0 / units as f64;
    }
    let total: f64 = m.as_slice().iter().sum();
    m.as_mut_slice().iter_mut().for_each(|v| *v /= total);
    GridDistribution::unit(m).unwrap()
}

/// Dense random grid on the unit square.
pub fn random_dense_grid<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> GridDistribution {
    let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..1.0f64).powi(2));
    GridDistribution::normalized(m, [[0.0, 1.0], [0.0, 1.0]]).unwrap()
}

/// Gradient comparison summary.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
}

/// Relative error with an absolute floor for entries that are zero at round-off level.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences of `f64`-valued `loss(model)` over every parameter.
pub fn finite_difference<P: Parameters<f64> + Clone>(model: &P, step: f64, loss: impl Fn(&P) -> f64) -> Vec<f64> {
    let n = model.param_count();
    let mut out = Vec::with_capacity(n);
    let mut probe = model.clone();
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.data.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let orig = probe.tensors_mut()[t][k];
            probe.tensors_mut()[t][k] = orig + step;
            let up = loss(&probe);
            probe.tensors_mut()[t][k] = orig - step;
            let down = loss(&probe);
            probe.tensors_mut()[t][k] = orig;
            out.push((up - down) / (2.0 * step));
        }
    }
    out
}

/// Compares the analytic gradient of the total loss of one window against central differences.
pub fn check_model_gradient<M: Autoencoder<f64>>(model: &M, window: &Matrix<f64>, zeta: [f64; LATENT_DIM], step: f64) -> GradCheck {
    let (out, _latent, cache) = model.forward(window, zeta).unwrap();
    let d = {
        let scale = 2.0 / window.as_slice().len() as f64;
        let data = out.as_slice().iter().zip(window.as_slice()).map(|(&r, &t)| scale * (r - t)).collect();
        Matrix::from_vec(out.rows(), out.cols(), data).unwrap()
    };
    let analytic = model.backward(&cache, &d, model.beta()).flatten();
    let numeric = finite_difference(model, step, |m| m.loss(window, zeta).unwrap().total);
    compare(&analytic, &numeric)
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len());
    let max_rel = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n, 1e-6))
        .fold(0.0, f64::max);
    GradCheck {
        max_rel,
        checked: analytic.len(),
    }
}

pub fn random_window<T: Real, R: Rng>(k: usize, f: usize, rng: &mut R) -> Matrix<T> {
    Matrix::from_fn(k, f, |_, _| oscmode::scalar::lit(rng.random_range(-1.0..1.0)))
}
