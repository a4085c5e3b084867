//! Monte Carlo sum-capacity evaluation of the multi-user backhaul downlink.
//!
//! Every trial draws `K` independent channels, builds the precoder/combiner
//! design of each scheme, and evaluates sum capacity with inter-user
//! interference included over the whole SNR grid. Trials are independent
//! work units running on the rayon pool; each owns counter-derived random
//! substreams so rows do not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{assemble_channel, sample_paths, singular_energy_profile, ArrayGeometry, ChannelMatrix, PathDistribution};
use crate::error::{invalid, Result};
use crate::estimation::{estimate_channel, EstimationConfig, LinkSetup, SoundingChannel};
use crate::hybrid::{factorize, factorize_combiner, FactorizeOptions};
use crate::linalg::{block_diag, hstack, log2_det_hpd, svd, vstack, CMat, CVec, Svd, C64};
use crate::precoding::{
    allocate_power, equivalent_channel, mu_assemble, mu_digital_precoder, truncated_svd, AllocationStrategy,
    PowerAllocation, TruncatedSvd,
};
use crate::rng::{stream_id, substream};

const TAG_CHANNEL: u8 = 1;
const TAG_SOUNDING: u8 = 2;
const TAG_PROFILE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    HybridIdeal,
    HybridEstimated,
    FullDigital,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::HybridIdeal => "hybrid_ideal",
            Scheme::HybridEstimated => "hybrid_estimated",
            Scheme::FullDigital => "full_digital",
        }
    }
}

/// Estimation settings used by the `hybrid_estimated` scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSettings {
    /// Training SNR; `None` trains at each evaluated SNR point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_snr_db: Option<f64>,
    #[serde(flatten)]
    pub pipeline: EstimationConfig,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self { training_snr_db: None, pipeline: EstimationConfig::default() }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_ma: usize,
    pub n_sm: usize,
    pub k_users: usize,
    pub n_bb_ma: usize,
    pub n_bb_sm: usize,
    pub spacing: f64,
    pub path_loss: f64,
    pub noise_var: f64,
    pub carrier_ghz: f64,
    pub l_min: usize,
    pub l_max: usize,
    pub k_factor_db: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    pub allocations: Vec<AllocationStrategy>,
    pub master_seed: u64,
    pub max_iterations: usize,
    pub stall_tolerance: f64,
    pub estimation: EstimationSettings,
}

impl ScenarioConfig {
    /// Checks every structural invariant; the message names the violated one.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(invalid(msg));
        if self.n_ma == 0 || self.n_sm == 0 {
            return fail("n_ma and n_sm must be positive".into());
        }
        if self.k_users == 0 {
            return fail("k_users must be positive".into());
        }
        if self.n_bb_sm == 0 || self.n_bb_sm > self.n_sm {
            return fail(format!("n_bb_sm <= n_sm violated ({} > {})", self.n_bb_sm, self.n_sm));
        }
        if self.n_bb_ma > self.n_ma {
            return fail(format!("n_bb_ma <= n_ma violated ({} > {})", self.n_bb_ma, self.n_ma));
        }
        if self.k_users * self.n_bb_sm > self.n_bb_ma {
            return fail(format!(
                "k_users * n_bb_sm <= n_bb_ma violated ({} * {} > {})",
                self.k_users, self.n_bb_sm, self.n_bb_ma
            ));
        }
        if self.schemes.contains(&Scheme::FullDigital) && self.k_users * self.n_sm > self.n_ma {
            return fail(format!(
                "full_digital needs k_users * n_sm <= n_ma ({} * {} > {})",
                self.k_users, self.n_sm, self.n_ma
            ));
        }
        if self.k_users > 64 {
            return fail("k_users <= 64 violated".into());
        }
        if !(self.spacing > 0.0) || !(self.path_loss > 0.0) || !(self.noise_var > 0.0) {
            return fail("spacing, path_loss and noise_var must be positive".into());
        }
        if self.l_min == 0 || self.l_min > self.l_max {
            return fail(format!("1 <= l_min <= l_max violated ([{}, {}])", self.l_min, self.l_max));
        }
        if self.k_factor_db.is_empty() || self.k_factor_db.len() > 256 {
            return fail("k_factor_db needs between 1 and 256 values".into());
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.len() > 1024 {
            return fail("snr_grid_db needs between 1 and 1024 values".into());
        }
        if self.k_factor_db.iter().chain(&self.snr_grid_db).any(|v| !v.is_finite()) {
            return fail("k_factor_db and snr_grid_db must be finite".into());
        }
        if self.trials == 0 || self.trials > u32::MAX as usize {
            return fail("trials must be positive".into());
        }
        if self.schemes.is_empty() || self.allocations.is_empty() {
            return fail("schemes and allocations must be non-empty".into());
        }
        self.factorize_options().validate()?;
        self.estimation.pipeline.validate()?;
        if let Some(s) = self.estimation.training_snr_db {
            if !s.is_finite() {
                return fail("estimation.training_snr_db must be finite".into());
            }
        }
        Ok(())
    }

    pub fn tx_geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.n_ma, self.spacing)
    }

    pub fn rx_geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.n_sm, self.spacing)
    }

    pub fn path_distribution(&self, k_factor_db: f64) -> Result<PathDistribution> {
        PathDistribution::new(self.l_min, self.l_max, k_factor_db, self.path_loss)
    }

    pub fn factorize_options(&self) -> FactorizeOptions {
        FactorizeOptions {
            max_iterations: self.max_iterations,
            stall_tolerance: self.stall_tolerance,
            modulus: None,
        }
    }

    pub fn link_setup(&self) -> Result<LinkSetup> {
        Ok(LinkSetup {
            tx: self.tx_geometry()?,
            rx: self.rx_geometry()?,
            n_bb_ma: self.n_bb_ma,
            n_bb_sm: self.n_bb_sm,
            path_loss: self.path_loss,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityRow {
    pub scheme: Scheme,
    pub allocation: AllocationStrategy,
    pub snr_db: f64,
    pub k_factor_db: f64,
    pub trial: usize,
    pub capacity_bpcu: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CapacityResult {
    pub rows: Vec<CapacityRow>,
}

impl CapacityResult {
    /// Mean capacity over trials for one (scheme, allocation, K, SNR) point.
    pub fn mean(&self, scheme: Scheme, allocation: AllocationStrategy, k_factor_db: f64, snr_db: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                r.scheme == scheme && r.allocation == allocation && r.k_factor_db == k_factor_db && r.snr_db == snr_db
            })
            .map(|r| r.capacity_bpcu)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Transmit and receive processing of one multi-user downlink design.
#[derive(Debug, Clone)]
pub struct LinkDesign {
    pub p_d: CMat,
    pub p_tilde_d: CMat,
    pub p_a: CMat,
    /// Per-user `N_rx x R` combiners.
    pub combiners: Vec<CMat>,
    pub streams_per_user: usize,
    pub coupling_condition: f64,
    /// Relative factorization residuals of precoders and combiners.
    pub residuals: Vec<f64>,
}

impl LinkDesign {
    /// DPSN hybrid design: each user's `U^H` and `V` are factorized onto a
    /// constant-modulus analog stage, then zero-forced digitally.
    ///
    /// Zero forcing targets the left singular basis of each user's channel as
    /// seen through its realized combiner, `H_k C_k`. With exact factors this
    /// is `U_k`; with factorized combiners it also nulls the leakage of modes
    /// beyond the common rank through the combiner error.
    pub fn hybrid(channels: &[ChannelMatrix], rank: usize, opts: &FactorizeOptions) -> Result<Self> {
        let mut svds = channels.iter().map(|h| truncated_svd(h, rank)).collect::<Result<Vec<_>>>()?;
        complete_null_modes(&mut svds);
        let mut digital = Vec::with_capacity(svds.len());
        let mut analog = Vec::with_capacity(svds.len());
        let mut combiners = Vec::with_capacity(svds.len());
        let mut residuals = Vec::new();
        for s in &svds {
            let pre = factorize(&s.precoder_target(), opts)?;
            let comb = factorize_combiner(&s.right, opts)?;
            residuals.push(pre.residual);
            residuals.push(comb.residual);
            digital.push(pre.digital);
            analog.push(pre.analog);
            combiners.push(comb.product());
        }
        let leads: Vec<CMat> = channels.iter().zip(&combiners).map(|(h, c)| active_modes(&(h.entries() * c))).collect();
        let pools: Vec<CMat> = svds.iter().map(|s| s.left.clone()).collect();
        let bases = complete_bases(&leads, &pools, rank);
        let p_tilde_d = block_diag(&digital);
        let p_a = vstack(&analog);
        let zf = mu_digital_precoder(&p_tilde_d, &p_a, &hstack(&bases))?;
        let mut design = Self {
            p_d: zf.matrix,
            p_tilde_d,
            p_a,
            combiners,
            streams_per_user: rank,
            coupling_condition: zf.condition,
            residuals,
        };
        design.align_streams(channels)?;
        Ok(design)
    }

    /// Diagonalizes every user's own block of the equivalent channel.
    ///
    /// The analog factors only approximate the SVD bases, so `G_kk` picks up
    /// off-diagonal terms and the combined noise `sigma^2 C_k^H C_k` is
    /// colored. With `G_kk (C_k^H C_k)^{-1/2} = A S B^H`, user `k`'s digital
    /// rows are rotated by `A^H` and its combiner becomes
    /// `C_k (C_k^H C_k)^{-1/2} B`, leaving `G_kk = S` and white noise.
    fn align_streams(&mut self, channels: &[ChannelMatrix]) -> Result<()> {
        let r = self.streams_per_user;
        let h_stack = hstack(&channels.iter().map(|h| h.entries().clone()).collect::<Vec<_>>());
        let c_bar = block_diag(&self.combiners);
        let g = equivalent_channel(&self.p_d, &self.p_tilde_d, &self.p_a, &h_stack, &c_bar)?;
        let mut rotation = Vec::with_capacity(self.users());
        for (k, comb) in self.combiners.iter_mut().enumerate() {
            let eig = comb.ad_mul(comb).symmetric_eigen();
            if eig.eigenvalues.iter().any(|&e| !(e > 0.0)) {
                return Err(invalid("analog combiner lost rank"));
            }
            let inv_sqrt = &eig.eigenvectors
                * CMat::from_diagonal(&eig.eigenvalues.map(|e| C64::new(1.0 / e.sqrt(), 0.0)))
                * eig.eigenvectors.adjoint();
            let whitened = g.view((k * r, k * r), (r, r)) * &inv_sqrt;
            let svd = svd(&whitened);
            *comb = &*comb * inv_sqrt * svd.v;
            rotation.push(svd.u.adjoint());
        }
        self.p_d = block_diag(&rotation) * &self.p_d;
        Ok(())
    }

    /// Unconstrained design with exact SVD factors.
    pub fn exact(channels: &[ChannelMatrix], rank: usize) -> Result<Self> {
        let mut svds = channels.iter().map(|h| truncated_svd(h, rank)).collect::<Result<Vec<_>>>()?;
        complete_null_modes(&mut svds);
        let combiners = svds.iter().map(|s| s.right.clone()).collect();
        let exact = mu_assemble(svds)?;
        let n = exact.u_tilde.ncols();
        let p_tilde_d = CMat::identity(n, n);
        let p_a = exact.exact_precoder();
        let zf = mu_digital_precoder(&p_tilde_d, &p_a, &exact.u_tilde)?;
        Ok(Self {
            p_d: zf.matrix,
            p_tilde_d,
            p_a,
            combiners,
            streams_per_user: rank,
            coupling_condition: zf.condition,
            residuals: vec![],
        })
    }

    pub fn users(&self) -> usize {
        self.combiners.len()
    }

    /// Equivalent channel with every stream's transmit vector scaled to unit
    /// norm, so stream power equals radiated power.
    pub fn equivalent(&self, channels: &[ChannelMatrix]) -> Result<CMat> {
        if channels.len() != self.users() {
            return Err(invalid("channel count does not match the design"));
        }
        let h_stack = hstack(&channels.iter().map(|h| h.entries().clone()).collect::<Vec<_>>());
        let c_bar = block_diag(&self.combiners);
        let mut g = equivalent_channel(&self.p_d, &self.p_tilde_d, &self.p_a, &h_stack, &c_bar)?;
        let composite = &self.p_d * &self.p_tilde_d * &self.p_a;
        for i in 0..g.nrows() {
            let norm = composite.row(i).norm();
            if norm > 0.0 {
                g.row_mut(i).unscale_mut(norm);
            }
        }
        Ok(g)
    }

    /// Per-user `sigma^2 C_k^H C_k`.
    pub fn noise_covariances(&self, noise_var: f64) -> Vec<CMat> {
        self.combiners
            .iter()
            .map(|c| c.ad_mul(c) * C64::new(noise_var, 0.0))
            .collect()
    }
}

/// Singular values below this fraction of the largest count as exact zeros.
const NULL_MODE_TOL: f64 = 1e-8;

/// Left singular vectors of `m` whose singular values are not null.
fn active_modes(m: &CMat) -> CMat {
    let Svd { s, u, .. } = svd(m);
    let smax = s.first().copied().unwrap_or(0.0);
    let rank = s.iter().filter(|&&x| x > NULL_MODE_TOL * smax).count();
    u.columns(0, rank).into_owned()
}

/// Removes the span of `q`'s orthonormal columns from `v`, twice for stability.
fn project_out(v: &mut CVec, q: &[CVec]) {
    for _ in 0..2 {
        for b in q {
            let c = b.dotc(v);
            *v -= b * c;
        }
    }
}

/// Completes per-user zero-forcing bases to `rank` columns each.
///
/// `leads[k]` holds user `k`'s active modes. Missing columns are drawn by
/// Gram-Schmidt, first from `pools[k]` and then from coordinate vectors, and
/// kept orthogonal to every user's active modes and to earlier fills. Null
/// modes are arbitrary up to that choice, and this one keeps the stacked
/// basis well conditioned.
fn complete_bases(leads: &[CMat], pools: &[CMat], rank: usize) -> Vec<CMat> {
    const KEEP: f64 = 1e-3;
    let n = leads[0].nrows();
    // Users' active modes are not mutually orthogonal, so project against an
    // orthonormal basis of their joint span.
    let joint = active_modes(&hstack(leads));
    let mut taken: Vec<CVec> = joint.column_iter().map(|c| c.into_owned()).collect();
    let mut next_coordinate = 0;
    let mut out = Vec::with_capacity(leads.len());
    for (lead, pool) in leads.iter().zip(pools) {
        let mut cols: Vec<CVec> = lead.column_iter().take(rank).map(|c| c.into_owned()).collect();
        let mut candidates = pool.column_iter().map(|c| c.into_owned());
        while cols.len() < rank {
            let mut v = match candidates.next() {
                Some(c) => c,
                None => {
                    let mut e = CVec::zeros(n);
                    e[next_coordinate % n] = C64::new(1.0, 0.0);
                    next_coordinate += 1;
                    e
                }
            };
            let scale = v.norm();
            project_out(&mut v, &taken);
            let norm = v.norm();
            if norm > KEEP * scale {
                v.unscale_mut(norm);
                taken.push(v.clone());
                cols.push(v);
            }
        }
        out.push(CMat::from_columns(&cols));
    }
    out
}

/// Replaces the left vectors of null modes so that no two users share one.
/// Any unit vector in a user's left null space is a valid singular vector
/// there, so each factorization stays exact.
fn complete_null_modes(svds: &mut [TruncatedSvd]) {
    let leads: Vec<CMat> = svds
        .iter()
        .map(|s| {
            let active = s.sigmas.iter().filter(|&&x| x > NULL_MODE_TOL * s.sigmas[0]).count();
            s.left.columns(0, active).into_owned()
        })
        .collect();
    let pools: Vec<CMat> = svds.iter().map(|s| s.left.clone()).collect();
    let rank = svds[0].rank_used();
    for (s, basis) in svds.iter_mut().zip(complete_bases(&leads, &pools, rank)) {
        s.left = basis;
    }
}

/// Column-convention view of a row-convention equivalent channel: block
/// `(k, j)` maps user `j`'s streams onto user `k`'s combined outputs.
pub fn receive_view(g_row: &CMat) -> CMat {
    g_row.adjoint()
}

/// `log2 det(I + (R_n + sum_{j != k} G_kj Q_j G_kj^H)^{-1} G_kk Q_k G_kk^H)`.
///
/// `g` is in column convention (see [`receive_view`]), `powers` covers every
/// stream of every user, and `noise_cov` is user `k`'s combined noise
/// covariance.
pub fn user_capacity(
    g: &CMat,
    user: usize,
    streams_per_user: usize,
    powers: &PowerAllocation,
    noise_cov: &CMat,
    interference: bool,
) -> Result<f64> {
    let r = streams_per_user;
    let n = g.nrows();
    if !g.is_square() || r == 0 || n % r != 0 || (user + 1) * r > n {
        return Err(invalid("equivalent channel blocks do not match the stream layout"));
    }
    if powers.powers.len() != n || noise_cov.shape() != (r, r) {
        return Err(invalid("power vector or noise covariance has the wrong size"));
    }
    if log2_det_hpd(noise_cov).is_none() {
        return Err(invalid("noise covariance is not positive definite"));
    }
    let users = n / r;
    let block_cov = |j: usize| {
        let gk = g.view((user * r, j * r), (r, r));
        let mut scaled = gk.into_owned();
        for (c, &p) in powers.powers[j * r..(j + 1) * r].iter().enumerate() {
            scaled.column_mut(c).scale_mut(p.sqrt());
        }
        &scaled * scaled.adjoint()
    };
    let mut base = noise_cov.clone();
    if interference {
        for j in (0..users).filter(|&j| j != user) {
            base += block_cov(j);
        }
    }
    let total = &base + block_cov(user);
    let num = log2_det_hpd(&total).ok_or_else(|| invalid("received covariance is not positive definite"))?;
    let den = log2_det_hpd(&base).ok_or_else(|| invalid("interference covariance is not positive definite"))?;
    Ok((num - den).max(0.0))
}

/// Per-stream gains `|G_ii|^2 / (R_n)_ii` used for power allocation.
pub fn stream_gains(g_row: &CMat, noise_covs: &[CMat], streams_per_user: usize) -> Vec<f64> {
    (0..g_row.nrows())
        .map(|i| {
            let (k, local) = (i / streams_per_user, i % streams_per_user);
            g_row[(i, i)].norm_sqr() / noise_covs[k][(local, local)].re
        })
        .collect()
}

/// Sum capacity of a design evaluated on `truth`, with power allocated from
/// the gains of `planning` (the channels the transmitter believes in).
pub fn sum_capacity(
    design: &LinkDesign,
    truth: &[ChannelMatrix],
    planning: &[ChannelMatrix],
    snr_db: f64,
    noise_var: f64,
    strategy: AllocationStrategy,
) -> Result<f64> {
    let g_true = design.equivalent(truth)?;
    let covs = design.noise_covariances(noise_var);
    let g_plan = if std::ptr::eq(truth, planning) { g_true.clone() } else { design.equivalent(planning)? };
    evaluate(design, &g_true, &g_plan, &covs, snr_db, noise_var, strategy)
}

fn evaluate(
    design: &LinkDesign,
    g_true: &CMat,
    g_plan: &CMat,
    covs: &[CMat],
    snr_db: f64,
    noise_var: f64,
    strategy: AllocationStrategy,
) -> Result<f64> {
    let budget = noise_var * 10f64.powf(snr_db / 10.0);
    let gains = stream_gains(g_plan, covs, design.streams_per_user);
    let powers = allocate_power(&gains, budget, strategy)?;
    let view = receive_view(g_true);
    (0..design.users())
        .map(|k| user_capacity(&view, k, design.streams_per_user, &powers, &covs[k], true))
        .sum()
}

/// Exact zero-forcing SVD with full per-user rank `n_rx` and power
/// allocation over every mode.
pub fn full_digital_baseline(
    channels: &[ChannelMatrix],
    snr_db: f64,
    noise_var: f64,
    allocation: AllocationStrategy,
) -> Result<f64> {
    let first = channels.first().ok_or_else(|| invalid("need at least one channel"))?;
    let (n_tx, n_rx) = (first.n_tx(), first.n_rx());
    if channels.len() * n_rx > n_tx {
        return Err(invalid(format!(
            "full-digital zero forcing needs K * n_rx <= n_tx ({} * {n_rx} > {n_tx})",
            channels.len()
        )));
    }
    let design = LinkDesign::exact(channels, n_rx)?;
    sum_capacity(&design, channels, channels, snr_db, noise_var, allocation)
}

/// Draws the `K` channels of one trial.
pub fn draw_channels(cfg: &ScenarioConfig, k_index: usize, trial: usize) -> Result<Vec<ChannelMatrix>> {
    let tx = cfg.tx_geometry()?;
    let rx = cfg.rx_geometry()?;
    let dist = cfg.path_distribution(cfg.k_factor_db[k_index])?;
    Ok((0..cfg.k_users)
        .map(|user| {
            let mut rng = substream(cfg.master_seed, stream_id(TAG_CHANNEL, k_index as u8, trial as u32, user as u16));
            assemble_channel(&tx, &rx, &sample_paths(&dist, &mut rng))
        })
        .collect())
}

/// Estimates every user's channel at training SNR `snr_db`; `slot` separates
/// the random streams of repeated trainings within a trial.
pub fn estimate_channels(
    cfg: &ScenarioConfig,
    channels: &[ChannelMatrix],
    snr_db: f64,
    k_index: usize,
    trial: usize,
    slot: usize,
) -> Result<Vec<ChannelMatrix>> {
    let setup = cfg.link_setup()?;
    let noise = cfg.noise_var / (cfg.noise_var * 10f64.powf(snr_db / 10.0));
    channels
        .iter()
        .enumerate()
        .map(|(user, h)| {
            let sub = (slot * 64 + user) as u16;
            let rng = substream(cfg.master_seed, stream_id(TAG_SOUNDING, k_index as u8, trial as u32, sub));
            let mut oracle = SoundingChannel::new(h.clone(), noise, rng)?;
            Ok(estimate_channel(&mut oracle, &setup, &cfg.estimation.pipeline)?.reconstruction)
        })
        .collect()
}

/// Every row of one (K-factor, trial) work unit.
pub fn evaluate_trial(cfg: &ScenarioConfig, k_index: usize, trial: usize) -> Result<Vec<CapacityRow>> {
    let channels = draw_channels(cfg, k_index, trial)?;
    let k_factor_db = cfg.k_factor_db[k_index];
    let mut rows = Vec::new();
    let mut push = |scheme, allocation, snr_db, capacity_bpcu| {
        rows.push(CapacityRow { scheme, allocation, snr_db, k_factor_db, trial, capacity_bpcu })
    };

    for &scheme in &cfg.schemes {
        match scheme {
            Scheme::HybridIdeal | Scheme::FullDigital => {
                let design = if scheme == Scheme::HybridIdeal {
                    LinkDesign::hybrid(&channels, cfg.n_bb_sm, &cfg.factorize_options())?
                } else {
                    LinkDesign::exact(&channels, cfg.n_sm)?
                };
                let g = design.equivalent(&channels)?;
                let covs = design.noise_covariances(cfg.noise_var);
                for &alloc in &cfg.allocations {
                    for &snr in &cfg.snr_grid_db {
                        push(scheme, alloc, snr, evaluate(&design, &g, &g, &covs, snr, cfg.noise_var, alloc)?);
                    }
                }
            }
            Scheme::HybridEstimated => {
                let build = |train_snr: f64, slot: usize| -> Result<EstimatedDesign> {
                    let estimates = estimate_channels(cfg, &channels, train_snr, k_index, trial, slot)?;
                    let design = LinkDesign::hybrid(&estimates, cfg.n_bb_sm, &cfg.factorize_options())?;
                    Ok(EstimatedDesign {
                        g_true: design.equivalent(&channels)?,
                        g_plan: design.equivalent(&estimates)?,
                        covs: design.noise_covariances(cfg.noise_var),
                        design,
                    })
                };
                let fixed = cfg.estimation.training_snr_db.map(|t| build(t, 0)).transpose()?;
                for (snr_index, &snr) in cfg.snr_grid_db.iter().enumerate() {
                    let per_point;
                    let d = match &fixed {
                        Some(d) => d,
                        None => {
                            per_point = build(snr, snr_index + 1)?;
                            &per_point
                        }
                    };
                    for &alloc in &cfg.allocations {
                        let c = evaluate(&d.design, &d.g_true, &d.g_plan, &d.covs, snr, cfg.noise_var, alloc)?;
                        push(scheme, alloc, snr, c);
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Singular-value energy profile for every fixed path count
/// `L = l_min..=l_max`, `trials` channels each, at the first K-factor.
pub fn rank_profiles(cfg: &ScenarioConfig) -> Result<Vec<(usize, Vec<f64>)>> {
    cfg.validate()?;
    let (tx, rx) = (cfg.tx_geometry()?, cfg.rx_geometry()?);
    (cfg.l_min..=cfg.l_max)
        .into_par_iter()
        .map(|l| {
            let dist = PathDistribution::new(l, l, cfg.k_factor_db[0], cfg.path_loss)?;
            let mut rng = substream(cfg.master_seed, stream_id(TAG_PROFILE, 0, l as u32, 0));
            Ok((l, singular_energy_profile(&tx, &rx, &dist, cfg.trials, &mut rng)?))
        })
        .collect()
}

/// Outcome of factorizing one user's SVD precoder target.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationStat {
    pub k_factor_db: f64,
    pub trial: usize,
    pub user: usize,
    pub residual: f64,
    pub iterations_used: usize,
    pub first_objective: f64,
    pub best_objective: f64,
}

/// Factorizes the rank-`n_bb_sm` precoder target of every drawn channel.
pub fn factorization_report(cfg: &ScenarioConfig) -> Result<Vec<FactorizationStat>> {
    cfg.validate()?;
    let units: Vec<(usize, usize)> = (0..cfg.k_factor_db.len())
        .flat_map(|k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let chunks = units
        .par_iter()
        .map(|&(k, trial)| {
            draw_channels(cfg, k, trial)?
                .iter()
                .enumerate()
                .map(|(user, h)| {
                    let target = truncated_svd(h, cfg.n_bb_sm)?.precoder_target();
                    let f = factorize(&target, &cfg.factorize_options())?;
                    Ok(FactorizationStat {
                        k_factor_db: cfg.k_factor_db[k],
                        trial,
                        user,
                        residual: f.residual,
                        iterations_used: f.iterations_used,
                        first_objective: f.objective_trace[0],
                        best_objective: f.objective_trace[f.best_iteration],
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

struct EstimatedDesign {
    design: LinkDesign,
    g_true: CMat,
    g_plan: CMat,
    covs: Vec<CMat>,
}

/// Runs every (K-factor, trial) unit and returns rows sorted by scheme,
/// allocation, K-factor, SNR and trial.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<CapacityResult> {
    cfg.validate()?;
    let units: Vec<(usize, usize)> = (0..cfg.k_factor_db.len())
        .flat_map(|k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let chunks = units
        .par_iter()
        .map(|&(k, t)| evaluate_trial(cfg, k, t))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<CapacityRow> = chunks.into_iter().flatten().collect();
    let snr_pos = |s: f64| cfg.snr_grid_db.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    let k_pos = |k: f64| cfg.k_factor_db.iter().position(|&x| x == k).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        (a.scheme, a.allocation, k_pos(a.k_factor_db), snr_pos(a.snr_db), a.trial).cmp(&(
            b.scheme,
            b.allocation,
            k_pos(b.k_factor_db),
            snr_pos(b.snr_db),
            b.trial,
        ))
    });
    Ok(CapacityResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_alloc(p: &[f64]) -> PowerAllocation {
        PowerAllocation { powers: p.to_vec(), strategy: AllocationStrategy::Equal }
    }

    #[test]
    fn scalar_capacity() {
        let g = CMat::from_element(1, 1, C64::new(0.6, 0.8));
        let noise = CMat::from_element(1, 1, C64::new(0.5, 0.0));
        let c = user_capacity(&g, 0, 1, &diag_alloc(&[3.0]), &noise, false).unwrap();
        assert!((c - (1.0 + 3.0 * 1.0 / 0.5f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn zero_power_gives_zero() {
        let g = CMat::identity(2, 2);
        let noise = CMat::identity(2, 2);
        let c = user_capacity(&g, 0, 2, &diag_alloc(&[0.0, 0.0]), &noise, true).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn diagonal_channel_matches_parallel_modes() {
        let sig = [3.0, 1.5, 0.5, 2.0];
        let g = CMat::from_diagonal(&nalgebra::DVector::from_iterator(4, sig.iter().map(|&s| C64::new(s, 0.0))));
        let p = [1.0, 2.0, 0.5, 0.25];
        let sigma2 = 0.7;
        let noise = CMat::identity(2, 2) * C64::new(sigma2, 0.0);
        let total: f64 = (0..2)
            .map(|k| user_capacity(&g, k, 2, &diag_alloc(&p), &noise, true).unwrap())
            .sum();
        let want: f64 = sig.iter().zip(&p).map(|(s, p)| (1.0 + p * s * s / sigma2).log2()).sum();
        assert!((total - want).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_noise() {
        let g = CMat::identity(1, 1);
        let noise = CMat::from_element(1, 1, C64::new(-1.0, 0.0));
        assert!(user_capacity(&g, 0, 1, &diag_alloc(&[1.0]), &noise, false).is_err());
    }

    #[test]
    fn interference_lowers_capacity() {
        let g = CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.5, 0.0), C64::new(0.3, 0.0), C64::new(1.0, 0.0)]);
        let noise = CMat::identity(1, 1);
        let a = diag_alloc(&[1.0, 1.0]);
        let with = user_capacity(&g, 0, 1, &a, &noise, true).unwrap();
        let without = user_capacity(&g, 0, 1, &a, &noise, false).unwrap();
        assert!(with < without);
    }
}
