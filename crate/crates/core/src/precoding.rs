//! Exact SVD-based precoders and combiners, the multi-user zero-forcing
//! digital stage, and power allocation.
//!
//! Matrices follow the row-vector signal convention of the channel model:
//! a stream row vector `s` leaves the macro array as `s P` and arrives
//! combined as `s P H C`. For user `k` with `H_k ~ U_k S_k V_k^H`, choosing
//! `P_k = U_k^H` and `C_k = V_k` gives `P_k H_k C_k = S_k`.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrix;
use crate::error::{invalid, Error, Result};
use crate::linalg::{block_diag, condition_number, hstack, svd, CMat, C64};

/// Coupling matrices with a condition number above this are rejected.
pub const MAX_COUPLING_CONDITION: f64 = 1e12;

/// Top-`R` singular triplets of a channel.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `N_tx x R`, orthonormal columns.
    pub left: CMat,
    /// `R` singular values, descending.
    pub sigmas: Vec<f64>,
    /// `N_rx x R`, orthonormal columns.
    pub right: CMat,
}

impl TruncatedSvd {
    pub fn rank_used(&self) -> usize {
        self.sigmas.len()
    }

    /// Precoder target `U^H` (`R x N_tx`).
    pub fn precoder_target(&self) -> CMat {
        self.left.adjoint()
    }

    /// `U diag(sigma) V^H`.
    pub fn reconstruct(&self) -> CMat {
        let mut us = self.left.clone();
        for (j, &s) in self.sigmas.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.right.adjoint()
    }
}

/// Top-`rank` singular triplets with a deterministic phase convention: the
/// first nonzero entry of each left singular vector is real and positive.
pub fn truncated_svd(h: &ChannelMatrix, rank: usize) -> Result<TruncatedSvd> {
    let (nt, nr) = (h.n_tx(), h.n_rx());
    if rank == 0 || rank > nt.min(nr) {
        return Err(invalid(format!(
            "truncation rank {rank} outside [1, {}] for a {nt}x{nr} channel",
            nt.min(nr)
        )));
    }
    let svd = svd(h.entries());
    let mut left = svd.u.columns(0, rank).into_owned();
    let mut right = svd.v.columns(0, rank).into_owned();
    for j in 0..rank {
        let pivot = left.column(j).iter().find(|z| z.norm() > 1e-14).copied().unwrap_or(C64::new(1.0, 0.0));
        let rot = C64::from_polar(1.0, -pivot.arg());
        left.column_mut(j).iter_mut().for_each(|z| *z *= rot);
        right.column_mut(j).iter_mut().for_each(|z| *z *= rot);
    }
    let sigmas = svd.s[..rank].to_vec();
    Ok(TruncatedSvd { left, sigmas, right })
}

/// Stacked exact factors for `K` users sharing rank `R`.
#[derive(Debug, Clone)]
pub struct MuExactSet {
    pub per_user: Vec<TruncatedSvd>,
    /// `[U_1 | ... | U_K]`, `N_tx x K R`.
    pub u_tilde: CMat,
    /// `diag{V_1, ..., V_K}`, `K N_rx x K R`.
    pub c_bar: CMat,
    pub sigma_stack: Vec<f64>,
}

impl MuExactSet {
    pub fn users(&self) -> usize {
        self.per_user.len()
    }

    pub fn rank(&self) -> usize {
        self.per_user.first().map_or(0, |s| s.rank_used())
    }

    /// Exact analog-times-digital product `U_tilde^H`.
    pub fn exact_precoder(&self) -> CMat {
        self.u_tilde.adjoint()
    }
}

pub fn mu_assemble(svds: Vec<TruncatedSvd>) -> Result<MuExactSet> {
    let first = svds.first().ok_or_else(|| invalid("need at least one user"))?;
    let rank = first.rank_used();
    let nt = first.left.nrows();
    let nr = first.right.nrows();
    for (k, s) in svds.iter().enumerate() {
        if s.rank_used() != rank {
            return Err(invalid(format!(
                "user {k} has rank {} but user 0 has rank {rank}",
                s.rank_used()
            )));
        }
        if s.left.nrows() != nt || s.right.nrows() != nr {
            return Err(invalid(format!("user {k} has mismatched array sizes")));
        }
    }
    if svds.len() * rank > nt {
        return Err(invalid(format!(
            "{} users x rank {rank} exceeds {nt} transmit antennas",
            svds.len()
        )));
    }
    let lefts: Vec<CMat> = svds.iter().map(|s| s.left.clone()).collect();
    let rights: Vec<CMat> = svds.iter().map(|s| s.right.clone()).collect();
    let sigma_stack = svds.iter().flat_map(|s| s.sigmas.iter().copied()).collect();
    Ok(MuExactSet {
        u_tilde: hstack(&lefts),
        c_bar: block_diag(&rights),
        sigma_stack,
        per_user: svds,
    })
}

/// Zero-forcing digital precoder `(P~_d P_a U~)^{-1}` and the condition
/// number of the inverted coupling matrix.
#[derive(Debug, Clone)]
pub struct DigitalPrecoder {
    pub matrix: CMat,
    pub condition: f64,
}

pub fn mu_digital_precoder(p_tilde_d: &CMat, p_a: &CMat, u_tilde: &CMat) -> Result<DigitalPrecoder> {
    if p_tilde_d.ncols() != p_a.nrows() || p_a.ncols() != u_tilde.nrows() {
        return Err(invalid(format!(
            "non-conformable factors {}x{} * {}x{} * {}x{}",
            p_tilde_d.nrows(),
            p_tilde_d.ncols(),
            p_a.nrows(),
            p_a.ncols(),
            u_tilde.nrows(),
            u_tilde.ncols()
        )));
    }
    let coupling = p_tilde_d * p_a * u_tilde;
    if !coupling.is_square() {
        return Err(invalid(format!(
            "coupling matrix is {}x{}, expected square",
            coupling.nrows(),
            coupling.ncols()
        )));
    }
    let condition = condition_number(&coupling);
    if !(condition <= MAX_COUPLING_CONDITION) {
        return Err(Error::SingularCoupling { condition });
    }
    let matrix = coupling
        .try_inverse()
        .ok_or(Error::SingularCoupling { condition })?;
    Ok(DigitalPrecoder { matrix, condition })
}

/// End-to-end matrix `P_d P~_d P_a H C_bar` (`K R x K R`); row `i` holds
/// what transmit stream `i` contributes to every combined output.
pub fn equivalent_channel(
    p_d: &CMat,
    p_tilde_d: &CMat,
    p_a: &CMat,
    h_stack: &CMat,
    c_bar: &CMat,
) -> Result<CMat> {
    let shapes = [
        (p_d.ncols(), p_tilde_d.nrows()),
        (p_tilde_d.ncols(), p_a.nrows()),
        (p_a.ncols(), h_stack.nrows()),
        (h_stack.ncols(), c_bar.nrows()),
    ];
    if let Some((a, b)) = shapes.iter().find(|(a, b)| a != b) {
        return Err(invalid(format!("inner dimensions {a} and {b} do not match")));
    }
    Ok(p_d * p_tilde_d * p_a * h_stack * c_bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationStrategy {
    Waterfilling,
    Equal,
}

impl AllocationStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AllocationStrategy::Waterfilling => "waterfilling",
            AllocationStrategy::Equal => "equal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub powers: Vec<f64>,
    pub strategy: AllocationStrategy,
}

impl PowerAllocation {
    /// Sum of the allocated powers.
    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }
}

/// Splits `budget` over parallel modes with gains `gains` (SNR per unit power).
///
/// Waterfilling solves the KKT conditions exactly: modes are sorted by gain
/// and the active set is the largest prefix whose water level clears every
/// member's floor `1/g_i`. Modes with zero gain never receive power.
pub fn allocate_power(gains: &[f64], budget: f64, strategy: AllocationStrategy) -> Result<PowerAllocation> {
    if gains.is_empty() {
        return Err(invalid("power allocation needs at least one mode"));
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(invalid(format!("power budget must be positive, got {budget}")));
    }
    if let Some(g) = gains.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(invalid(format!("mode gains must be finite and non-negative, got {g}")));
    }
    let n = gains.len();
    let powers = match strategy {
        AllocationStrategy::Equal => vec![budget / n as f64; n],
        AllocationStrategy::Waterfilling => {
            let mut order: Vec<usize> = (0..n).filter(|&i| gains[i] > 0.0).collect();
            if order.is_empty() {
                return Err(invalid("every mode has zero gain"));
            }
            order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
            let floors: Vec<f64> = order.iter().map(|&i| 1.0 / gains[i]).collect();
            let mut prefix = 0.0;
            let mut level = budget + floors[0];
            let mut active = 1;
            for (k, &floor) in floors.iter().enumerate() {
                prefix += floor;
                let mu = (budget + prefix) / (k + 1) as f64;
                if mu > floor {
                    level = mu;
                    active = k + 1;
                } else {
                    break;
                }
            }
            let mut p = vec![0.0; n];
            for &i in order.iter().take(active) {
                p[i] = (level - 1.0 / gains[i]).max(0.0);
            }
            p
        }
    };
    Ok(PowerAllocation { powers, strategy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::fro_sq;

    fn real(rows: usize, cols: usize, v: &[f64]) -> CMat {
        CMat::from_row_iterator(rows, cols, v.iter().map(|&x| C64::new(x, 0.0)))
    }

    #[test]
    fn diag_truncation() {
        let h = ChannelMatrix::new(real(2, 2, &[3.0, 0.0, 0.0, 1.0]));
        let t = truncated_svd(&h, 1).unwrap();
        assert!((t.sigmas[0] - 3.0).abs() < 1e-12);
        let err = fro_sq(&(h.entries() - t.reconstruct()));
        assert!((err - 1.0).abs() < 1e-12);
        // phase convention
        assert!(t.left[(0, 0)].im.abs() < 1e-15 && t.left[(0, 0)].re > 0.0);
    }

    #[test]
    fn truncation_rank_bounds() {
        let h = ChannelMatrix::new(real(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        assert!(truncated_svd(&h, 0).is_err());
        assert!(truncated_svd(&h, 3).is_err());
        assert!(truncated_svd(&h, 2).is_ok());
    }

    #[test]
    fn two_mode_waterfilling() {
        let p = allocate_power(&[4.0, 1.0], 1.0, AllocationStrategy::Waterfilling).unwrap();
        assert!((p.powers[0] - 0.875).abs() < 1e-12);
        assert!((p.powers[1] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn symmetric_waterfilling() {
        let p = allocate_power(&[2.5, 2.5], 3.0, AllocationStrategy::Waterfilling).unwrap();
        assert!((p.powers[0] - 1.5).abs() < 1e-12 && (p.powers[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn tiny_budget_goes_to_strongest() {
        let p = allocate_power(&[10.0, 0.1], 1e-6, AllocationStrategy::Waterfilling).unwrap();
        assert_eq!(p.powers[1], 0.0);
        assert!((p.powers[0] - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn zero_gain_mode_is_inactive() {
        let p = allocate_power(&[0.0, 3.0, 1.0], 100.0, AllocationStrategy::Waterfilling).unwrap();
        assert_eq!(p.powers[0], 0.0);
        assert!((p.total() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn equal_split() {
        let p = allocate_power(&[5.0, 1.0, 0.2, 9.0], 2.0, AllocationStrategy::Equal).unwrap();
        assert!(p.powers.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn allocation_rejects_bad_input() {
        use AllocationStrategy::*;
        assert!(allocate_power(&[], 1.0, Waterfilling).is_err());
        assert!(allocate_power(&[1.0], 0.0, Equal).is_err());
        assert!(allocate_power(&[-1.0], 1.0, Waterfilling).is_err());
        assert!(allocate_power(&[f64::NAN], 1.0, Waterfilling).is_err());
    }

    #[test]
    fn digital_precoder_of_scaled_identity() {
        let eye = CMat::identity(3, 3);
        let two = &eye * C64::new(2.0, 0.0);
        let d = mu_digital_precoder(&eye, &two, &eye).unwrap();
        assert!(fro_sq(&(d.matrix - &eye * C64::new(0.5, 0.0))) < 1e-28);
        assert!((d.condition - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_coupling_is_rejected() {
        let eye = CMat::identity(2, 2);
        let rank1 = real(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = mu_digital_precoder(&eye, &rank1, &eye).unwrap_err();
        assert!(matches!(err, Error::SingularCoupling { .. }));
    }

    #[test]
    fn equivalent_channel_shape_check() {
        let a = CMat::identity(2, 2);
        let b = CMat::identity(3, 3);
        assert!(equivalent_channel(&a, &a, &a, &b, &b).is_err());
    }
}
