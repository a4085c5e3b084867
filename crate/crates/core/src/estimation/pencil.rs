//! Single-snapshot line-spectral estimation with the matrix-pencil method.
//!
//! A snapshot `x[m] = sum_l c_l exp(j 2pi f_l m)` fills a Hankel matrix
//! `Y[i, j] = x[i + j]` with pencil parameter `P = floor(N/2)`. The row space
//! of `Y` is spanned by the Vandermonde rows `[1, z_l, ..., z_l^P]`; with
//! `A` the dominant right singular vectors (as rows), the shifted blocks
//! satisfy `A[:, 1..] = Phi A[:, ..P]` and the eigenvalues of `Phi` are the
//! poles `z_l = exp(j 2pi f_l)`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::linalg::{orth, pinv, svd, CMat, CVec, C64};

/// Frequencies closer than this are treated as the same line.
const MIN_FREQ_GAP: f64 = 1e-9;
/// Above this block size a randomized subspace iteration replaces the full SVD.
const DENSE_SVD_LIMIT: usize = 64;
const OVERSAMPLE: usize = 10;
const POWER_ITERATIONS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LineSpectrum {
    /// Normalized frequencies in `[-0.5, 0.5)`.
    pub frequencies: Vec<f64>,
    /// Amplitude of `exp(j 2pi f m)` (unnormalized basis, `m = 0..N`).
    pub coefficients: Vec<C64>,
    /// `||x - model||_2`.
    pub residual: f64,
}

impl LineSpectrum {
    pub fn order(&self) -> usize {
        self.frequencies.len()
    }

    /// Resynthesizes the model on `n` samples.
    pub fn synthesize(&self, n: usize) -> CVec {
        let mut out = CVec::zeros(n);
        for (&f, &c) in self.frequencies.iter().zip(&self.coefficients) {
            for m in 0..n {
                out[m] += c * C64::from_polar(1.0, 2.0 * PI * f * m as f64);
            }
        }
        out
    }
}

/// Wraps a frequency into `[-0.5, 0.5)`.
pub fn wrap_frequency(f: f64) -> f64 {
    let w = (f + 0.5).rem_euclid(1.0) - 0.5;
    if w >= 0.5 {
        -0.5
    } else {
        w
    }
}

/// Circular distance between two normalized frequencies.
pub fn frequency_distance(a: f64, b: f64) -> f64 {
    wrap_frequency(a - b).abs()
}

/// Estimates the lines in `snapshot`.
///
/// Candidate orders are those whose Hankel singular value is at least
/// `rank_threshold * sigma_max` (at most `max_order`); the order chosen is the
/// candidate with the largest drop `sigma_k / sigma_{k+1}`.
pub fn line_spectrum_estimate(snapshot: &CVec, max_order: usize, rank_threshold: f64) -> Result<LineSpectrum> {
    let n = snapshot.len();
    if n < 4 {
        return Err(invalid(format!("snapshot of length {n} is too short (need >= 4)")));
    }
    let pencil = n / 2;
    if max_order == 0 || max_order > pencil {
        return Err(invalid(format!(
            "model order {max_order} outside [1, {pencil}] for a length-{n} snapshot"
        )));
    }
    if !(rank_threshold > 0.0 && rank_threshold < 1.0) {
        return Err(invalid(format!("rank threshold must lie in (0, 1), got {rank_threshold}")));
    }
    let norm = snapshot.norm();
    if norm == 0.0 {
        return Ok(LineSpectrum { frequencies: vec![], coefficients: vec![], residual: 0.0 });
    }

    let rows = n - pencil;
    let cols = pencil + 1;
    let hankel = CMat::from_fn(rows, cols, |i, j| snapshot[i + j]);
    let (sigmas, right) = dominant_right_subspace(&hankel, max_order);
    let order = select_order(&sigmas, max_order, rank_threshold);

    // A: order x (P + 1), rows spanning the signal row space.
    let a = right.columns(0, order).adjoint();
    let a1 = a.columns(0, pencil).into_owned();
    let a2 = a.columns(1, pencil).into_owned();
    let gram = &a1 * a1.adjoint();
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| invalid("pencil projection is singular"))?;
    let phi = a2 * a1.adjoint() * gram_inv;
    let poles = phi
        .eigenvalues()
        .ok_or_else(|| invalid("pencil eigenvalue iteration did not converge"))?;

    let mut frequencies: Vec<f64> = poles.iter().map(|z| wrap_frequency(z.arg() / (2.0 * PI))).collect();
    frequencies.sort_by(|a, b| a.total_cmp(b));
    frequencies.dedup_by(|b, a| frequency_distance(*a, *b) <= MIN_FREQ_GAP);

    let (coefficients, residual) = fit_amplitudes(snapshot, &frequencies);
    Ok(LineSpectrum { frequencies, coefficients, residual })
}

fn select_order(sigmas: &[f64], max_order: usize, rank_threshold: f64) -> usize {
    let floor = rank_threshold * sigmas[0];
    let candidates = sigmas.iter().take(max_order).filter(|&&s| s >= floor).count().max(1);
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=candidates {
        let next = sigmas.get(k).copied().unwrap_or(0.0);
        let drop = if next > 0.0 { sigmas[k - 1] / next } else { f64::INFINITY };
        if drop > best.1 {
            best = (k, drop);
        }
    }
    best.0
}

/// Least-squares amplitudes of the given lines and the fit residual.
pub fn fit_amplitudes(snapshot: &CVec, frequencies: &[f64]) -> (Vec<C64>, f64) {
    let n = snapshot.len();
    if frequencies.is_empty() {
        return (vec![], snapshot.norm());
    }
    let basis = CMat::from_fn(n, frequencies.len(), |m, l| {
        C64::from_polar(1.0, 2.0 * PI * frequencies[l] * m as f64)
    });
    let coef = pinv(&basis, 1e-12) * snapshot;
    let residual = (snapshot - &basis * &coef).norm();
    (coef.iter().copied().collect(), residual)
}

/// Leading singular values (descending) and right singular vectors (columns)
/// of `m`, at least `k` of them when available.
fn dominant_right_subspace(m: &CMat, k: usize) -> (Vec<f64>, CMat) {
    let small = m.nrows().min(m.ncols());
    let block = k + OVERSAMPLE;
    if small <= DENSE_SVD_LIMIT || block >= small {
        return sorted_right_svd(m.clone());
    }
    // Randomized range finder with a fixed seed keeps the estimator pure.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_f1);
    let omega = CMat::from_fn(m.ncols(), block, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        C64::new(re, im)
    });
    let mut q = orth(m * omega);
    for _ in 0..POWER_ITERATIONS {
        let z = orth(m.ad_mul(&q));
        q = orth(m * z);
    }
    let projected = q.ad_mul(m);
    sorted_right_svd(projected)
}

fn sorted_right_svd(m: CMat) -> (Vec<f64>, CMat) {
    let f = svd(&m);
    (f.s, f.v)
}
