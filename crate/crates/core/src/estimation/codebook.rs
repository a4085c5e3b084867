use std::f64::consts::PI;

use crate::channel::{steering_vector, ArrayGeometry};
use crate::error::{invalid, Result};
use crate::linalg::{CMat, CVec};

/// Fixed beam patterns, one unit-norm steering vector per column.
#[derive(Debug, Clone)]
pub struct Codebook {
    beams: CMat,
    angles: Vec<f64>,
}

impl Codebook {
    pub fn beams(&self) -> &CMat {
        &self.beams
    }

    pub fn size(&self) -> usize {
        self.beams.ncols()
    }

    pub fn beam(&self, m: usize) -> CVec {
        self.beams.column(m).into_owned()
    }

    /// Pointing angle of beam `m`, in `[0, 2pi)`.
    pub fn angle(&self, m: usize) -> f64 {
        self.angles[m]
    }
}

/// `size` beams at `asin(-1 + (2m + 1) / size)`, uniform in sine space.
pub fn dft_codebook(geom: &ArrayGeometry, size: usize) -> Result<Codebook> {
    if size == 0 {
        return Err(invalid("codebook needs at least one beam"));
    }
    let angles: Vec<f64> = (0..size)
        .map(|m| {
            let s = -1.0 + (2 * m + 1) as f64 / size as f64;
            s.asin().rem_euclid(2.0 * PI)
        })
        .collect();
    let mut beams = CMat::zeros(geom.n_elements(), size);
    for (m, &a) in angles.iter().enumerate() {
        beams.set_column(m, &steering_vector(geom, a));
    }
    Ok(Codebook { beams, angles })
}
