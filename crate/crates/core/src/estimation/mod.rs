//! Three-phase compressive channel estimation.
//!
//! 1. Coarse sweep: the macro station steps through its beam codebook while
//!    the small cell steps through its combiner codebook; the strongest pairs
//!    are fed back.
//! 2. Small-cell side: for each fed-back macro beam the small cell reads its
//!    whole array through antenna subsets and extracts AoA spatial
//!    frequencies with the matrix pencil.
//! 3. Macro side: roles swap; the small cell transmits toward each AoA found
//!    and the macro station extracts AoD frequencies the same way.
//!
//! Path coupling is then fitted by least squares over every observation, the
//! dominant coupling entries become paths, and the channel is rebuilt from
//! the geometric model.

mod codebook;
mod gains;
mod pencil;
mod sounding;

pub use codebook::{dft_codebook, Codebook};
pub use gains::{estimate_gains, steering_matrix, GainFit, Measurement};
pub use pencil::{fit_amplitudes, frequency_distance, line_spectrum_estimate, wrap_frequency, LineSpectrum};
pub use sounding::{
    array_snapshot, coarse_sweep, snapshot_slots, BeamPair, BeamReport, ChannelOracle, Link, Snapshot,
    SoundingChannel,
};

use serde::{Deserialize, Serialize};

use crate::channel::{assemble_channel, steering_from_frequency, ArrayGeometry, ChannelMatrix, PathSet};
use crate::error::{invalid, Error, Result};
use crate::linalg::{CMat, C64};

/// Knobs of the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// Macro codebook size `L_Ma`; `None` uses one beam per antenna.
    pub tx_codebook_size: Option<usize>,
    /// Small-cell codebook size `L_Sm`; `None` uses one beam per antenna.
    pub rx_codebook_size: Option<usize>,
    /// Beam pairs fed back after the sweep (`B`).
    pub keep: usize,
    pub rank_threshold: f64,
    pub max_order: usize,
    /// Frequency merge radius in units of `1/N`.
    pub merge_tolerance: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            tx_codebook_size: None,
            rx_codebook_size: None,
            keep: 8,
            rank_threshold: 1e-2,
            max_order: 8,
            merge_tolerance: 0.25,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keep == 0 {
            return Err(invalid("estimation.keep must be at least 1"));
        }
        if self.tx_codebook_size == Some(0) || self.rx_codebook_size == Some(0) {
            return Err(invalid("codebook sizes must be at least 1"));
        }
        if !(self.rank_threshold > 0.0 && self.rank_threshold < 1.0) {
            return Err(invalid("estimation.rank_threshold must lie in (0, 1)"));
        }
        if self.max_order == 0 {
            return Err(invalid("estimation.max_order must be at least 1"));
        }
        if !(self.merge_tolerance > 0.0) {
            return Err(invalid("estimation.merge_tolerance must be positive"));
        }
        Ok(())
    }
}

/// Arrays, chain counts and path loss of the link being sounded.
#[derive(Debug, Clone, Copy)]
pub struct LinkSetup {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub n_bb_ma: usize,
    pub n_bb_sm: usize,
    pub path_loss: f64,
}

impl LinkSetup {
    pub fn scale(&self) -> f64 {
        ((self.tx.n_elements() * self.rx.n_elements()) as f64 / self.path_loss).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub beam_report: BeamReport,
    pub aoa_frequencies: Vec<f64>,
    pub aod_frequencies: Vec<f64>,
    pub aoas: Vec<f64>,
    pub aods: Vec<f64>,
    /// `L_aod x L_aoa` least-squares coupling.
    pub gain_matrix: CMat,
    pub gain_residual: f64,
    pub paired_paths: PathSet,
    /// Sub-slots of the coarse sweep.
    pub sweep_slots: usize,
    pub small_cell_slots: usize,
    pub macro_slots: usize,
    /// Phase 2 plus phase 3 sub-slots (`T_gain`).
    pub training_slots_used: usize,
    pub reconstruction: ChannelMatrix,
}

/// Sub-slot count of phases 2 and 3 for `probes` fed-back beams and `aoas`
/// AoAs found.
pub fn expected_training_slots(setup: &LinkSetup, probes: usize, aoas: usize) -> usize {
    probes * snapshot_slots(setup.rx.n_elements(), setup.n_bb_sm)
        + aoas * snapshot_slots(setup.tx.n_elements(), setup.n_bb_ma)
}

/// Keeps the strongest line among any group closer than `radius`.
fn merge_lines(mut lines: Vec<(f64, f64)>, radius: f64) -> Vec<f64> {
    lines.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let mut kept: Vec<f64> = Vec::new();
    for (f, _) in lines {
        if kept.iter().all(|&k| frequency_distance(k, f) > radius) {
            kept.push(f);
        }
    }
    kept
}

pub fn estimate_channel<O: ChannelOracle + ?Sized>(
    oracle: &mut O,
    setup: &LinkSetup,
    cfg: &EstimationConfig,
) -> Result<EstimationReport> {
    cfg.validate()?;
    let (n_ma, n_sm) = (setup.tx.n_elements(), setup.rx.n_elements());
    if oracle.macro_antennas() != n_ma || oracle.small_antennas() != n_sm {
        return Err(invalid("oracle array sizes do not match the link setup"));
    }
    let tx_cb = dft_codebook(&setup.tx, cfg.tx_codebook_size.unwrap_or(n_ma))?;
    let rx_cb = dft_codebook(&setup.rx, cfg.rx_codebook_size.unwrap_or(n_sm))?;

    // Phase 1.
    let beam_report = coarse_sweep(oracle, &tx_cb, &rx_cb, cfg.keep)?;
    if beam_report.pairs.is_empty() {
        return Err(Error::EstimationFailed("coarse sweep returned no beam pairs".into()));
    }

    let mut measurements = Vec::new();

    // Phase 2: AoAs at the small cell.
    let order_sm = cfg.max_order.min(n_sm / 2);
    let mut small_cell_slots = 0;
    let mut aoa_lines = Vec::new();
    for pair in &beam_report.pairs {
        let f = tx_cb.beam(pair.tx_beam);
        let snap = array_snapshot(oracle, Link::Downlink, &f, setup.n_bb_sm)?;
        small_cell_slots += snap.slots_used;
        let spec = line_spectrum_estimate(&snap.values, order_sm, cfg.rank_threshold)?;
        aoa_lines.extend(spec.frequencies.iter().zip(&spec.coefficients).map(|(&fr, c)| (fr, c.norm())));
        // conj(y_n) = conj(f)^T H e_n
        let left = CMat::from_fn(n_ma, n_sm, |i, _| f[i].conj());
        measurements.push(Measurement {
            left,
            right: CMat::identity(n_sm, n_sm),
            values: snap.values.map(|z| z.conj()),
        });
    }
    let aoa_frequencies = merge_lines(aoa_lines, cfg.merge_tolerance / n_sm as f64);
    if aoa_frequencies.is_empty() {
        return Err(Error::EstimationFailed("no angle of arrival detected".into()));
    }

    // Phase 3: AoDs at the macro station.
    let order_ma = cfg.max_order.min(n_ma / 2);
    let mut macro_slots = 0;
    let mut aod_lines = Vec::new();
    for &fa in &aoa_frequencies {
        let g = steering_from_frequency(n_sm, fa);
        let snap = array_snapshot(oracle, Link::Uplink, &g, setup.n_bb_ma)?;
        macro_slots += snap.slots_used;
        let spec = line_spectrum_estimate(&snap.values, order_ma, cfg.rank_threshold)?;
        aod_lines.extend(spec.frequencies.iter().zip(&spec.coefficients).map(|(&fr, c)| (fr, c.norm())));
        // y_i = e_i^T H g
        let right = CMat::from_fn(n_sm, n_ma, |i, _| g[i]);
        measurements.push(Measurement { left: CMat::identity(n_ma, n_ma), right, values: snap.values });
    }
    let aod_frequencies = merge_lines(aod_lines, cfg.merge_tolerance / n_ma as f64);
    if aod_frequencies.is_empty() {
        return Err(Error::EstimationFailed("no angle of departure detected".into()));
    }

    let fit = estimate_gains(
        &measurements,
        &setup.tx,
        &setup.rx,
        &aod_frequencies,
        &aoa_frequencies,
        setup.scale(),
    )?;

    // Dominant coupling entries become paths.
    let keep = aod_frequencies.len().min(aoa_frequencies.len());
    let mut entries: Vec<(usize, usize, C64)> = (0..fit.coupling.nrows())
        .flat_map(|p| (0..fit.coupling.ncols()).map(move |q| (p, q)))
        .map(|(p, q)| (p, q, fit.coupling[(p, q)]))
        .collect();
    entries.sort_by(|a, b| b.2.norm().total_cmp(&a.2.norm()).then((a.0, a.1).cmp(&(b.0, b.1))));
    entries.truncate(keep);

    let aods: Vec<f64> = aod_frequencies.iter().map(|&f| setup.tx.angle_from_frequency(f)).collect();
    let aoas: Vec<f64> = aoa_frequencies.iter().map(|&f| setup.rx.angle_from_frequency(f)).collect();
    let paired_paths = PathSet::new(
        entries.iter().map(|e| e.2).collect(),
        entries.iter().map(|e| aods[e.0]).collect(),
        entries.iter().map(|e| aoas[e.1]).collect(),
        setup.path_loss,
    )?;
    let reconstruction = assemble_channel(&setup.tx, &setup.rx, &paired_paths);

    Ok(EstimationReport {
        sweep_slots: beam_report.slots_used,
        beam_report,
        aoa_frequencies,
        aod_frequencies,
        aoas,
        aods,
        gain_matrix: fit.coupling,
        gain_residual: fit.relative_residual,
        paired_paths,
        small_cell_slots,
        macro_slots,
        training_slots_used: small_cell_slots + macro_slots,
        reconstruction,
    })
}

/// `||H_hat - H||_F^2 / ||H||_F^2`.
pub fn channel_nmse(estimate: &ChannelMatrix, truth: &ChannelMatrix) -> f64 {
    let diff = estimate.entries() - truth.entries();
    crate::linalg::fro_sq(&diff) / crate::linalg::fro_sq(truth.entries())
}
