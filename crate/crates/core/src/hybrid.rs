//! Digital-times-analog factorization under a constant-modulus (phase-shifter)
//! constraint on the analog stage.
//!
//! Given a target `P` (`R x N`), find `P_d` (`R x R`) and `P_a` (`R x N`,
//! every entry of modulus `c`) minimizing `||P - P_d P_a||_F` by alternating:
//!
//! 1. `P_a` copies the phase of every entry of the current proxy `P~`;
//! 2. `P_d = P P_a^+` (least squares for fixed `P_a`);
//! 3. `P~ = P_d^+ P`.
//!
//! The alternation is not monotone, so the best iterate seen is returned.

use crate::error::{invalid, Result};
use crate::linalg::{fro, pinv, CMat, C64};

const PINV_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizeOptions {
    pub max_iterations: usize,
    /// Stop once the relative change of the objective drops below this.
    pub stall_tolerance: f64,
    /// Analog entry modulus; `None` means `1/sqrt(N)`.
    pub modulus: Option<f64>,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        Self { max_iterations: 100, stall_tolerance: 1e-6, modulus: None }
    }
}

impl FactorizeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        if !(self.stall_tolerance > 0.0) {
            return Err(invalid("stall_tolerance must be positive"));
        }
        if let Some(c) = self.modulus {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid(format!("analog modulus must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HybridPrecoder {
    /// `R x R`.
    pub digital: CMat,
    /// `R x N`, constant modulus.
    pub analog: CMat,
    pub modulus: f64,
    /// `||P - digital * analog||_F / ||P||_F` at the returned iterate.
    pub residual: f64,
    pub iterations_used: usize,
    /// Absolute objective recorded after every step 2.
    pub objective_trace: Vec<f64>,
    /// 0-based index into `objective_trace` of the returned iterate.
    pub best_iteration: usize,
}

impl HybridPrecoder {
    pub fn product(&self) -> CMat {
        &self.digital * &self.analog
    }
}

/// Entry-wise `modulus * exp(j arg(M_ij))`; exact zeros take phase 0.
pub fn phase_project(m: &CMat, modulus: f64) -> CMat {
    m.map(|z| {
        if z.re == 0.0 && z.im == 0.0 {
            C64::new(modulus, 0.0)
        } else {
            C64::from_polar(modulus, z.arg())
        }
    })
}

pub fn factorize(target: &CMat, opts: &FactorizeOptions) -> Result<HybridPrecoder> {
    opts.validate()?;
    let (r, n) = target.shape();
    if r == 0 || n == 0 {
        return Err(invalid("factorization target is empty"));
    }
    if r > n {
        return Err(invalid(format!("target has {r} rows but only {n} columns")));
    }
    let target_norm = fro(target);
    if target_norm == 0.0 {
        return Err(invalid("factorization target is all zeros"));
    }
    let modulus = opts.modulus.unwrap_or(1.0 / (n as f64).sqrt());

    let mut proxy = target.clone();
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, CMat, CMat)> = None;

    for it in 0..opts.max_iterations {
        let analog = phase_project(&proxy, modulus);
        let digital = target * pinv(&analog, PINV_RCOND);
        let objective = fro(&(target - &digital * &analog));
        trace.push(objective);
        if best.as_ref().map_or(true, |b| objective < b.0) {
            best = Some((objective, it, digital.clone(), analog));
        }
        if it > 0 {
            let prev = trace[it - 1];
            let change = (prev - objective).abs() / prev.max(f64::MIN_POSITIVE);
            if change < opts.stall_tolerance {
                break;
            }
        }
        if objective <= f64::EPSILON * target_norm {
            break;
        }
        proxy = pinv(&digital, PINV_RCOND) * target;
    }

    let (objective, best_iteration, digital, analog) = best.expect("at least one iteration runs");
    Ok(HybridPrecoder {
        digital,
        analog,
        modulus,
        residual: objective / target_norm,
        iterations_used: trace.len(),
        objective_trace: trace,
        best_iteration,
    })
}

/// Combiner `C ~ C_a C_d` with constant-modulus `C_a` (`N x R`).
#[derive(Debug, Clone)]
pub struct HybridCombiner {
    pub analog: CMat,
    pub digital: CMat,
    pub residual: f64,
    pub iterations_used: usize,
}

impl HybridCombiner {
    pub fn product(&self) -> CMat {
        &self.analog * &self.digital
    }
}

/// Factorizes `C^H` as a precoder and conjugate-transposes the result.
pub fn factorize_combiner(combiner: &CMat, opts: &FactorizeOptions) -> Result<HybridCombiner> {
    let f = factorize(&combiner.adjoint(), opts)?;
    Ok(HybridCombiner {
        analog: f.analog.adjoint(),
        digital: f.digital.adjoint(),
        residual: f.residual,
        iterations_used: f.iterations_used,
    })
}
