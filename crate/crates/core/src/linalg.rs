//! Small complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Squared Frobenius norm.
pub fn fro_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn fro(m: &CMat) -> f64 {
    fro_sq(m).sqrt()
}

/// Thin SVD `m = U diag(s) V^H` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

fn to_faer(m: &CMat) -> faer::Mat<C64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, C64>) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

// nalgebra's complex SVD can return factors that do not recompose the input
// when the matrix is rank deficient, so decompositions go through faer.
pub fn svd(m: &CMat) -> Svd {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return Svd { u: CMat::zeros(m.nrows(), 0), s: vec![], v: CMat::zeros(m.ncols(), 0) };
    }
    let f = to_faer(m).thin_svd().expect("SVD converges for finite input");
    let diag = f.S().column_vector();
    Svd { u: from_faer(f.U()), s: (0..k).map(|i| diag[i].re).collect(), v: from_faer(f.V()) }
}

/// Descending singular values.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    to_faer(m).singular_values().expect("SVD converges for finite input")
}

/// Moore-Penrose pseudoinverse; singular values below `rcond * sigma_max` are dropped.
pub fn pinv(m: &CMat, rcond: f64) -> CMat {
    let f = svd(m);
    let smax = f.s.first().copied().unwrap_or(0.0);
    let mut out = CMat::zeros(m.ncols(), m.nrows());
    for (i, &s) in f.s.iter().enumerate() {
        if s > rcond * smax && s > 0.0 {
            out += (f.v.column(i) * f.u.column(i).adjoint()) * C64::new(1.0 / s, 0.0);
        }
    }
    out
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Horizontal concatenation `[A | B | ...]`.
pub fn hstack(blocks: &[CMat]) -> CMat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation.
pub fn vstack(blocks: &[CMat]) -> CMat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// `log2 det(A)` for a Hermitian positive-definite matrix, `None` if the
/// Cholesky factorization fails.
pub fn log2_det_hpd(a: &CMat) -> Option<f64> {
    if a.nrows() == 0 {
        return Some(0.0);
    }
    // Symmetrize to wash out rounding asymmetry before factorizing.
    let sym = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let chol = sym.cholesky()?;
    let l = chol.l_dirty();
    Some(2.0 * (0..a.nrows()).map(|i| l[(i, i)].re.log2()).sum::<f64>())
}

/// Condition number in the 2-norm.
pub fn condition_number(m: &CMat) -> f64 {
    let s = singular_values(m);
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Orthonormal basis for the column space of `m` (thin QR).
pub fn orth(m: CMat) -> CMat {
    m.qr().q()
}
