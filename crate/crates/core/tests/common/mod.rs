//! Independent oracles and random instance generators shared by the
//! integration tests. Nothing here calls into the solver under test.
#![allow(dead_code)]

use intervene::policy::{FeatureSnapshot, ModelConfig, PosteriorState};
use nalgebra::{DMatrix, DVector};
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;

pub struct Instance {
    pub config: ModelConfig,
    pub state: PosteriorState,
    pub snapshots: Vec<FeatureSnapshot>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
}

pub fn rng(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

pub fn normal(r: &mut SplitMix64) -> f64 {
    StandardNormal.sample(r)
}

pub fn uniform(r: &mut SplitMix64) -> f64 {
    (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn below(r: &mut SplitMix64, n: u64) -> u64 {
    r.next_u64() % n
}

/// A random well-conditioned prior (dense precision) and batch with
/// `d = d_b + d_h ≤ 8` and `1 ≤ |batch| ≤ 50`.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let db = 1 + below(&mut r, 4) as usize;
    let dh = 1 + below(&mut r, (8 - db) as u64) as usize;
    let d = db + dh;
    let mut config = ModelConfig::standard(db, dh);
    config.noise_variance = 0.25 + 2.0 * uniform(&mut r);
    config.prior_precision_scale = 0.5 + 2.0 * uniform(&mut r);

    let a = DMatrix::from_fn(d, d, |_, _| normal(&mut r));
    let precision = &a * a.transpose() + DMatrix::identity(d, d) * config.prior_precision_scale;
    let mean: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
    let mut flat = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            flat.push(precision[(i, j)]);
        }
    }
    let state = PosteriorState::from_parts(mean, flat, 0, None).unwrap();

    let n = 1 + below(&mut r, 50) as usize;
    let mut snapshots = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let g: Vec<f64> = (0..db).map(|_| normal(&mut r)).collect();
        let h: Vec<f64> = (0..dh).map(|_| normal(&mut r)).collect();
        snapshots.push(FeatureSnapshot::from_vectors(g, h));
        actions.push((r.next_u64() & 1) as u8);
        rewards.push(2.0 * normal(&mut r));
    }
    Instance { config, state, snapshots, actions, rewards }
}

pub fn precision_matrix(state: &PosteriorState) -> DMatrix<f64> {
    let d = state.dim();
    DMatrix::from_row_slice(d, d, state.precision())
}

/// Dense-solve oracle for the conjugate update: builds the design matrix
/// explicitly and solves with LU.
pub fn oracle_update(
    config: &ModelConfig,
    state: &PosteriorState,
    snapshots: &[FeatureSnapshot],
    actions: &[u8],
    rewards: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let d = config.dim();
    let db = config.baseline_dim;
    let n = snapshots.len();
    let x = DMatrix::from_fn(n, d, |row, col| {
        let s = &snapshots[row];
        if col < db {
            s.baseline()[col]
        } else {
            f64::from(actions[row]) * s.treatment()[col - db]
        }
    });
    let r = DVector::from_column_slice(rewards);
    let prior = precision_matrix(state);
    let mu0 = DVector::from_column_slice(state.mean());
    let s2 = config.noise_variance;
    let post = &prior + x.transpose() * &x / s2;
    let rhs = &prior * mu0 + x.transpose() * r / s2;
    let mean = post.clone().lu().solve(&rhs).expect("oracle solve");
    (mean, post)
}

/// `Φ` by composite Simpson integration of the standard normal density
/// from 0, independent of any erf implementation.
pub fn oracle_phi(x: f64) -> f64 {
    if x.abs() > 9.0 {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let n = 20_000;
    let h = x / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp();
    let mut sum = f(0.0) + f(x);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    0.5 + sum * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P(hᵀθ_h > 0)` under `θ ~ N(μ, Λ⁻¹)`, from the explicit covariance.
pub fn oracle_pi_raw(config: &ModelConfig, state: &PosteriorState, h: &[f64]) -> f64 {
    let d = config.dim();
    let db = config.baseline_dim;
    let cov = precision_matrix(state).try_inverse().expect("invertible");
    let mut z = DVector::zeros(d);
    for (i, v) in h.iter().enumerate() {
        z[db + i] = *v;
    }
    let mu = DVector::from_column_slice(state.mean());
    let delta = z.dot(&mu);
    let var = (z.transpose() * cov * &z)[(0, 0)];
    oracle_phi(delta / var.sqrt())
}

/// `max |a - b| ≤ tol · max(max |a|, max |b|)`.
pub fn close_normwise(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let err = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    a.len() == b.len() && err <= tol * scale
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}
