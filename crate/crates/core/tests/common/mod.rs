//! Shared fixtures and independent reference solvers for the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use subviews::composition::MultiViewDesign;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random design with the given block sizes and a response with signal in block 0.
pub fn instance(
    seed: u64,
    n: usize,
    sizes: &[usize],
    q: usize,
    intercept: bool,
) -> (DMatrix<f64>, MultiViewDesign<f64>) {
    let mut r = rng(seed);
    let blocks: Vec<DMatrix<f64>> = sizes.iter().map(|&s| gaussian(&mut r, n, s)).collect();
    let b0 = gaussian(&mut r, sizes[0], q) * 0.7;
    let mut y = &blocks[0] * b0 + gaussian(&mut r, n, q);
    if intercept {
        y.add_scalar_mut(1.5);
    }
    let design = MultiViewDesign::from_blocks(blocks, intercept).unwrap();
    (y, design)
}

pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

fn svt(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let s = svd.singular_values.map(|v| (v - tau).max(0.0));
    u * DMatrix::from_diagonal(&s) * v_t
}

fn nuclear(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.sum()
}

fn prox_blocks(b: &DMatrix<f64>, sizes: &[usize], taus: &[f64]) -> DMatrix<f64> {
    let mut out = b.clone();
    let mut start = 0;
    for (k, &s) in sizes.iter().enumerate() {
        let blk = svt(&b.rows(start, s).into_owned(), taus[k]);
        out.rows_mut(start, s).copy_from(&blk);
        start += s;
    }
    out
}

pub fn penalty(b: &DMatrix<f64>, sizes: &[usize], pens: &[f64]) -> f64 {
    let mut start = 0;
    let mut total = 0.0;
    for (k, &s) in sizes.iter().enumerate() {
        total += pens[k] * nuclear(&b.rows(start, s).into_owned());
        start += s;
    }
    total
}

/// `||Y - X B|| / sqrt(nq) + sum_k pens_k ||B_k||_*`, the scaled objective with
/// the noise level minimized out.
pub fn profiled_objective(x: &DMatrix<f64>, y: &DMatrix<f64>, b: &DMatrix<f64>, sizes: &[usize], pens: &[f64]) -> f64 {
    let nq = (y.nrows() * y.ncols()) as f64;
    (y - x * b).norm() / nq.sqrt() + penalty(b, sizes, pens)
}

/// Proximal gradient with backtracking on the profiled scaled objective.
/// `x` and `y` must already have intercept/controls removed.
pub fn prox_grad_scaled(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    sizes: &[usize],
    pens: &[f64],
    iters: usize,
) -> (DMatrix<f64>, f64) {
    let nq = (y.nrows() * y.ncols()) as f64;
    let smooth = |b: &DMatrix<f64>| (y - x * b).norm() / nq.sqrt();
    let grad = |b: &DMatrix<f64>| {
        let r = y - x * b;
        -(x.transpose() * &r) / (nq.sqrt() * r.norm())
    };
    let mut b = DMatrix::zeros(x.ncols(), y.ncols());
    let mut step = 1.0;
    for _ in 0..iters {
        let g = grad(&b);
        let f = smooth(&b);
        step *= 1.5;
        loop {
            let taus: Vec<f64> = pens.iter().map(|p| p * step).collect();
            let cand = prox_blocks(&(&b - &g * step), sizes, &taus);
            let d = &cand - &b;
            if smooth(&cand) <= f + g.dot(&d) + d.norm_squared() / (2.0 * step) + 1e-15 {
                b = cand;
                break;
            }
            step *= 0.5;
        }
    }
    let obj = profiled_objective(x, y, &b, sizes, pens);
    (b, obj)
}

/// FISTA on `||Y - X B||^2 / (2nq) + sum_k taus_k ||B_k||_*`.
pub fn fista_irrr(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    sizes: &[usize],
    taus: &[f64],
    iters: usize,
) -> (DMatrix<f64>, f64) {
    let nq = (y.nrows() * y.ncols()) as f64;
    let lip = x.clone().svd(false, false).singular_values.max().powi(2) / nq;
    let step = 1.0 / lip;
    let scaled: Vec<f64> = taus.iter().map(|t| t * step).collect();
    let mut b = DMatrix::zeros(x.ncols(), y.ncols());
    let mut z = b.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = -(x.transpose() * (y - x * &z)) / nq;
        let next = prox_blocks(&(&z - g * step), sizes, &scaled);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &b) * ((t - 1.0) / t_next);
        b = next;
        t = t_next;
    }
    let obj = (y - x * &b).norm_squared() / (2.0 * nq) + penalty(&b, sizes, taus);
    (b, obj)
}
