//! Sparse geometric channel model for uniform linear arrays.
//!
//! A point-to-point channel between an `N_T`-element transmit array and an
//! `N_R`-element receive array is the sum of `L` rank-one path terms
//!
//! ```text
//! H = sqrt(N_T N_R / rho) * sum_l alpha_l a_T(theta_l) b_R(phi_l)^H
//! ```
//!
//! so its rank never exceeds the path count.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{self, CMat, CVec, C64};

/// Uniform linear array: element count and spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    n_elements: usize,
    spacing: f64,
}

impl ArrayGeometry {
    pub fn new(n_elements: usize, spacing: f64) -> Result<Self> {
        if n_elements == 0 {
            return Err(invalid("array needs at least one element"));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(invalid(format!("array spacing must be positive, got {spacing}")));
        }
        Ok(Self { n_elements, spacing })
    }

    /// Half-wavelength array.
    pub fn half_wavelength(n_elements: usize) -> Result<Self> {
        Self::new(n_elements, 0.5)
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Normalized spatial frequency `spacing * sin(angle)` seen by this array.
    pub fn spatial_frequency(&self, angle: f64) -> f64 {
        self.spacing * angle.sin()
    }

    /// Inverse of [`spatial_frequency`](Self::spatial_frequency), returning an
    /// angle in `[0, 2pi)`. Frequencies outside the visible region are clamped.
    pub fn angle_from_frequency(&self, freq: f64) -> f64 {
        let s = (freq / self.spacing).clamp(-1.0, 1.0);
        wrap_angle(s.asin())
    }
}

/// Maps an angle into `[0, 2pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(2.0 * PI);
    if a >= 2.0 * PI {
        0.0
    } else {
        a
    }
}

/// Unit-norm array response: element `m` is `exp(j 2pi d m sin(angle)) / sqrt(N)`.
pub fn steering_vector(geom: &ArrayGeometry, angle: f64) -> CVec {
    steering_from_frequency(geom.n_elements, geom.spatial_frequency(angle))
}

/// Unit-norm exponential with normalized frequency `freq` (cycles per element).
pub fn steering_from_frequency(n: usize, freq: f64) -> CVec {
    let scale = 1.0 / (n as f64).sqrt();
    CVec::from_fn(n, |m, _| C64::from_polar(scale, 2.0 * PI * freq * m as f64))
}

/// Multipath parameters of one channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    gains: Vec<C64>,
    aods: Vec<f64>,
    aoas: Vec<f64>,
    path_loss: f64,
}

impl PathSet {
    pub fn new(gains: Vec<C64>, aods: Vec<f64>, aoas: Vec<f64>, path_loss: f64) -> Result<Self> {
        if gains.is_empty() {
            return Err(invalid("a path set needs at least one path"));
        }
        if gains.len() != aods.len() || gains.len() != aoas.len() {
            return Err(invalid(format!(
                "path parameter lengths differ: {} gains, {} AoDs, {} AoAs",
                gains.len(),
                aods.len(),
                aoas.len()
            )));
        }
        if !(path_loss > 0.0 && path_loss.is_finite()) {
            return Err(invalid(format!("path loss must be positive, got {path_loss}")));
        }
        Ok(Self { gains, aods, aoas, path_loss })
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn gains(&self) -> &[C64] {
        &self.gains
    }

    pub fn aods(&self) -> &[f64] {
        &self.aods
    }

    pub fn aoas(&self) -> &[f64] {
        &self.aoas
    }

    pub fn path_loss(&self) -> f64 {
        self.path_loss
    }

    /// Same geometry with every gain multiplied by `c`.
    pub fn scaled(&self, c: C64) -> Self {
        Self {
            gains: self.gains.iter().map(|g| g * c).collect(),
            ..self.clone()
        }
    }
}

/// Complex channel matrix of shape `n_tx x n_rx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(CMat);

impl ChannelMatrix {
    pub fn new(entries: CMat) -> Self {
        Self(entries)
    }

    pub fn n_tx(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_rx(&self) -> usize {
        self.0.ncols()
    }

    pub fn entries(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }
}

/// Law from which path sets are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathDistribution {
    pub l_min: usize,
    pub l_max: usize,
    pub k_factor_db: f64,
    pub path_loss: f64,
}

impl PathDistribution {
    pub fn new(l_min: usize, l_max: usize, k_factor_db: f64, path_loss: f64) -> Result<Self> {
        if l_min == 0 || l_min > l_max {
            return Err(invalid(format!(
                "path count range must satisfy 1 <= l_min <= l_max, got [{l_min}, {l_max}]"
            )));
        }
        if !(path_loss > 0.0 && path_loss.is_finite()) {
            return Err(invalid(format!("path loss must be positive, got {path_loss}")));
        }
        if !k_factor_db.is_finite() {
            return Err(invalid("K-factor must be finite"));
        }
        Ok(Self { l_min, l_max, k_factor_db, path_loss })
    }

    /// Exactly `l` paths.
    pub fn fixed(l: usize, k_factor_db: f64) -> Result<Self> {
        Self::new(l, l, k_factor_db, 1.0)
    }

    /// Mean power of the LOS path and of each NLOS path for `l` paths,
    /// normalized to unit total power.
    pub fn path_powers(&self, l: usize) -> (f64, f64) {
        let k = 10f64.powf(self.k_factor_db / 10.0);
        let denom = k + (l as f64 - 1.0);
        (k / denom, 1.0 / denom)
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, power: f64) -> C64 {
    let s = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Draws one Rician path set: path 0 is LOS, the rest equal-power NLOS.
pub fn sample_paths<R: Rng + ?Sized>(dist: &PathDistribution, rng: &mut R) -> PathSet {
    let l = rng.random_range(dist.l_min..=dist.l_max);
    let (los, nlos) = dist.path_powers(l);
    let gains = (0..l)
        .map(|i| complex_gaussian(rng, if i == 0 { los } else { nlos }))
        .collect();
    let aods = (0..l).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let aoas = (0..l).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    PathSet { gains, aods, aoas, path_loss: dist.path_loss }
}

/// Builds `H = sqrt(N_T N_R / rho) * sum_l alpha_l a_T(theta_l) b_R(phi_l)^H`.
pub fn assemble_channel(tx: &ArrayGeometry, rx: &ArrayGeometry, paths: &PathSet) -> ChannelMatrix {
    let (nt, nr) = (tx.n_elements(), rx.n_elements());
    let scale = ((nt * nr) as f64 / paths.path_loss).sqrt();
    let mut h = CMat::zeros(nt, nr);
    for ((&g, &aod), &aoa) in paths.gains.iter().zip(&paths.aods).zip(&paths.aoas) {
        let a = steering_vector(tx, aod);
        let b = steering_vector(rx, aoa);
        h.ger(g * scale, &a, &b.conjugate(), C64::new(1.0, 0.0));
    }
    ChannelMatrix(h)
}

/// Descending singular values of `h`.
pub fn singular_values(h: &ChannelMatrix) -> Vec<f64> {
    linalg::singular_values(&h.0)
}

/// Monte Carlo mean of the normalized squared singular values
/// `sigma_i^2 / sum_j sigma_j^2`, in descending order.
pub fn singular_energy_profile<R: Rng + ?Sized>(
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    dist: &PathDistribution,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(invalid("energy profile needs at least one trial"));
    }
    let n = tx.n_elements().min(rx.n_elements());
    let mut acc = vec![0.0; n];
    for _ in 0..trials {
        let paths = sample_paths(dist, rng);
        let h = assemble_channel(tx, rx, &paths);
        let energies: Vec<f64> = singular_values(&h).iter().map(|s| s * s).collect();
        let total: f64 = energies.iter().sum();
        if total > 0.0 {
            for (a, e) in acc.iter_mut().zip(&energies) {
                *a += e / total;
            }
        }
    }
    Ok(acc.into_iter().map(|a| a / trials as f64).collect())
}
