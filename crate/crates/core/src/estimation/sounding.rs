//! Training-slot level access to a channel: beam sweeps and antenna-subset
//! snapshots.

use rand_distr::{Distribution, StandardNormal};

use super::codebook::Codebook;
use crate::channel::ChannelMatrix;
use crate::error::{invalid, Result};
use crate::linalg::{CMat, CVec, C64};
use crate::rng::SimRng;

/// Transmission direction of a training slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Macro array transmits, small-cell array receives `H^H f`.
    Downlink,
    /// Small-cell array transmits, macro array receives `H g`.
    Uplink,
}

/// Black-box access to a channel through noisy training observations.
pub trait ChannelOracle {
    fn macro_antennas(&self) -> usize;
    fn small_antennas(&self) -> usize;

    /// One slot: `beam` drives the transmitting array; every column `w` of
    /// `combiners` yields the scalar `w^H r + n` where `r` is the noiseless
    /// signal at the receiving antennas and `n ~ CN(0, noise_var ||w||^2)`.
    fn observe(&mut self, link: Link, beam: &CVec, combiners: &CMat) -> CVec;

    fn receive_antennas(&self, link: Link) -> usize {
        match link {
            Link::Downlink => self.small_antennas(),
            Link::Uplink => self.macro_antennas(),
        }
    }
}

/// Known channel plus complex Gaussian receiver noise.
pub struct SoundingChannel {
    h: ChannelMatrix,
    noise_var: f64,
    rng: SimRng,
}

impl SoundingChannel {
    pub fn new(h: ChannelMatrix, noise_var: f64, rng: SimRng) -> Result<Self> {
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(invalid(format!("noise variance must be non-negative, got {noise_var}")));
        }
        Ok(Self { h, noise_var, rng })
    }

    pub fn channel(&self) -> &ChannelMatrix {
        &self.h
    }

    fn noise(&mut self, var: f64) -> C64 {
        if var == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let s = (var / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(&mut self.rng);
        let im: f64 = StandardNormal.sample(&mut self.rng);
        C64::new(s * re, s * im)
    }
}

impl ChannelOracle for SoundingChannel {
    fn macro_antennas(&self) -> usize {
        self.h.n_tx()
    }

    fn small_antennas(&self) -> usize {
        self.h.n_rx()
    }

    fn observe(&mut self, link: Link, beam: &CVec, combiners: &CMat) -> CVec {
        let h = self.h.entries();
        let r = match link {
            Link::Downlink => h.ad_mul(beam),
            Link::Uplink => h * beam,
        };
        let clean = combiners.ad_mul(&r);
        let mut out = clean;
        for (j, v) in out.iter_mut().enumerate() {
            let w_norm = combiners.column(j).norm_squared();
            *v += self.noise(self.noise_var * w_norm);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPair {
    pub tx_beam: usize,
    pub rx_beam: usize,
    pub power: f64,
}

/// Strongest beam pairs from a coarse sweep, sorted by power (descending).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamReport {
    pub pairs: Vec<BeamPair>,
    /// Sub-slots spent on the sweep (`L_Ma * L_Sm`).
    pub slots_used: usize,
}

/// Exhaustive downlink sweep over every (macro beam, small-cell combiner)
/// pair, one noisy observation per pair.
///
/// The kept pairs favour local maxima of the power grid (neighbours in both
/// beam indices, wrapping around) so that distinct paths are not crowded out
/// by the sidelobes of the strongest one; remaining slots are filled with the
/// strongest other pairs.
pub fn coarse_sweep<O: ChannelOracle + ?Sized>(
    oracle: &mut O,
    tx_cb: &Codebook,
    rx_cb: &Codebook,
    keep: usize,
) -> Result<BeamReport> {
    if tx_cb.beams().nrows() != oracle.macro_antennas()
        || rx_cb.beams().nrows() != oracle.small_antennas()
    {
        return Err(invalid("codebook sizes do not match the arrays"));
    }
    let (mt, mr) = (tx_cb.size(), rx_cb.size());
    let mut grid = vec![0.0; mt * mr];
    for m in 0..mt {
        let obs = oracle.observe(Link::Downlink, &tx_cb.beam(m), rx_cb.beams());
        for (n, v) in obs.iter().enumerate() {
            grid[m * mr + n] = v.norm_sqr();
        }
    }
    let power = |m: usize, n: usize| grid[m * mr + n];
    let is_peak = |m: usize, n: usize| {
        let p = power(m, n);
        for dm in [mt - 1, 0, 1] {
            for dn in [mr - 1, 0, 1] {
                if dm == 0 && dn == 0 {
                    continue;
                }
                let (mm, nn) = ((m + dm) % mt, (n + dn) % mr);
                if (mm, nn) != (m, n) && power(mm, nn) > p {
                    return false;
                }
            }
        }
        true
    };

    let mut peaks = Vec::new();
    let mut others = Vec::new();
    for m in 0..mt {
        for n in 0..mr {
            let pair = BeamPair { tx_beam: m, rx_beam: n, power: power(m, n) };
            if is_peak(m, n) {
                peaks.push(pair);
            } else {
                others.push(pair);
            }
        }
    }
    let by_power = |a: &BeamPair, b: &BeamPair| {
        b.power
            .total_cmp(&a.power)
            .then(a.tx_beam.cmp(&b.tx_beam))
            .then(a.rx_beam.cmp(&b.rx_beam))
    };
    peaks.sort_by(by_power);
    others.sort_by(by_power);
    let mut pairs: Vec<BeamPair> = peaks.into_iter().chain(others).take(keep).collect();
    pairs.sort_by(by_power);
    Ok(BeamReport { pairs, slots_used: mt * mr })
}

/// Full-array observation assembled from antenna subsets.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub values: CVec,
    pub slots_used: usize,
}

/// Number of sub-slots needed to read `n_antennas` through `n_chains` chains.
pub fn snapshot_slots(n_antennas: usize, n_chains: usize) -> usize {
    n_antennas.div_ceil(n_chains)
}

/// Reads the whole receiving array while `beam` is transmitted: each sub-slot
/// connects `n_chains` chains to distinct antennas (all other phase shifters
/// disabled), so `ceil(N / n_chains)` sub-slots cover the array.
pub fn array_snapshot<O: ChannelOracle + ?Sized>(
    oracle: &mut O,
    link: Link,
    beam: &CVec,
    n_chains: usize,
) -> Result<Snapshot> {
    if n_chains == 0 {
        return Err(invalid("snapshot needs at least one chain"));
    }
    let tx_len = match link {
        Link::Downlink => oracle.macro_antennas(),
        Link::Uplink => oracle.small_antennas(),
    };
    if beam.len() != tx_len {
        return Err(invalid(format!("beam has {} entries, array has {tx_len}", beam.len())));
    }
    let n = oracle.receive_antennas(link);
    let mut values = CVec::zeros(n);
    let mut slots = 0;
    let mut start = 0;
    while start < n {
        let width = n_chains.min(n - start);
        let mut select = CMat::zeros(n, width);
        for j in 0..width {
            select[(start + j, j)] = C64::new(1.0, 0.0);
        }
        let obs = oracle.observe(link, beam, &select);
        values.rows_mut(start, width).copy_from(&obs);
        start += width;
        slots += 1;
    }
    Ok(Snapshot { values, slots_used: slots })
}
