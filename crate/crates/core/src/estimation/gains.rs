//! Least-squares fit of the path coupling matrix once the angles are known.

use crate::channel::{steering_from_frequency, ArrayGeometry};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};

/// A batch of bilinear observations `values[j] ~ left[:, j]^T H right[:, j]`
/// of the `N_T x N_R` channel `H`.
#[derive(Debug, Clone)]
pub struct Measurement {
    /// `N_T x m`.
    pub left: CMat,
    /// `N_R x m`.
    pub right: CMat,
    pub values: CVec,
}

impl Measurement {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct GainFit {
    /// `L_aod x L_aoa` coupling `D~` in `H ~ c A_T(aods) D~ B_R(aoas)^H`.
    pub coupling: CMat,
    /// `||values - model|| / ||values||` (0 for all-zero data).
    pub relative_residual: f64,
}

/// Fits `D~` from arbitrary bilinear measurements given AoD and AoA spatial
/// frequencies. `scale` is `sqrt(N_T N_R / rho)`.
pub fn estimate_gains(
    measurements: &[Measurement],
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    aod_freqs: &[f64],
    aoa_freqs: &[f64],
    scale: f64,
) -> Result<GainFit> {
    let (la, lb) = (aod_freqs.len(), aoa_freqs.len());
    let unknowns = la * lb;
    let observations: usize = measurements.iter().map(|m| m.len()).sum();
    if unknowns == 0 || observations < unknowns {
        return Err(Error::InsufficientMeasurements { observations, unknowns });
    }
    let a_t = steering_matrix(tx.n_elements(), aod_freqs);
    let b_r = steering_matrix(rx.n_elements(), aoa_freqs);

    let mut normal = CMat::zeros(unknowns, unknowns);
    let mut rhs = CVec::zeros(unknowns);
    let mut data_energy = 0.0;
    let mut rows = Vec::with_capacity(observations);
    let mut row = CVec::zeros(unknowns);
    for meas in measurements {
        if meas.left.ncols() != meas.len() || meas.right.ncols() != meas.len() {
            return Err(crate::error::invalid("measurement batch has mismatched column counts"));
        }
        // A_T^T left (la x m) and B_R^H right (lb x m)
        let tx_side = a_t.tr_mul(&meas.left);
        let rx_side = b_r.ad_mul(&meas.right);
        for (j, &v) in meas.values.iter().enumerate() {
            for p in 0..la {
                for q in 0..lb {
                    row[p * lb + q] = tx_side[(p, j)] * rx_side[(q, j)] * scale;
                }
            }
            normal.gerc(C64::new(1.0, 0.0), &row.conjugate(), &row.conjugate(), C64::new(1.0, 0.0));
            rhs.axpy(v, &row.conjugate(), C64::new(1.0, 0.0));
            data_energy += v.norm_sqr();
            rows.push((row.clone(), v));
        }
    }
    let solution = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => normal
            .lu()
            .solve(&rhs)
            .ok_or(Error::InsufficientMeasurements { observations, unknowns })?,
    };
    let residual: f64 = rows
        .iter()
        .map(|(r, v)| (v - r.dot(&solution)).norm_sqr())
        .sum();
    let relative_residual = if data_energy > 0.0 { (residual / data_energy).sqrt() } else { 0.0 };
    let coupling = CMat::from_fn(la, lb, |p, q| solution[p * lb + q]);
    Ok(GainFit { coupling, relative_residual })
}

/// Columns are unit-norm exponentials at the given spatial frequencies.
pub fn steering_matrix(n: usize, freqs: &[f64]) -> CMat {
    let mut m = CMat::zeros(n, freqs.len());
    for (j, &f) in freqs.iter().enumerate() {
        m.set_column(j, &steering_from_frequency(n, f));
    }
    m
}
