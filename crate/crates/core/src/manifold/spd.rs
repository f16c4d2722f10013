//! Symmetric matrix functions via eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this are clamped before taking logarithms.
pub const EIG_FLOOR: f64 = 1e-14;
/// Clamping more than this (relative to the largest eigenvalue) is an error.
pub const CLAMP_TOLERANCE: f64 = 1e-10;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn symmetry_defect(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let e = SymmetricEigen::new(symmetrize(a));
        Self {
            values: e.eigenvalues,
            vectors: e.eigenvectors,
        }
    }

    /// `Q diag(f(λ)) Qᵀ`, exactly symmetric.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * f(self.values[j])
        });
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    pub fn min(&self) -> f64 {
        self.values.min()
    }

    pub fn max(&self) -> f64 {
        self.values.max()
    }
}

/// `X^{1/2}` and `X^{-1/2}` of an SPD matrix.
pub fn sqrt_and_inv_sqrt(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let e = SymEig::new(x);
    if !(e.min() > 0.0) {
        return Err(Error::NotPositiveDefinite(e.min()));
    }
    Ok((e.map(f64::sqrt), e.map(|l| 1.0 / l.sqrt())))
}

pub fn expm_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    SymEig::new(a).map(f64::exp)
}

/// Matrix logarithm of an SPD matrix with the eigenvalue floor applied.
pub fn logm_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = SymEig::new(a);
    let floor = clamp_check(&e)?;
    Ok(e.map(|l| l.max(floor).ln()))
}

/// Eigenvalues of an SPD matrix with the clamping policy applied.
pub fn spd_eigenvalues(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let e = SymEig::new(a);
    let floor = clamp_check(&e)?;
    Ok(e.values.map(|l| l.max(floor)))
}

fn clamp_check(e: &SymEig) -> Result<f64> {
    let lo = e.min();
    if !lo.is_finite() || !e.max().is_finite() {
        return Err(Error::NonFinite("symmetric eigendecomposition"));
    }
    if lo < EIG_FLOOR && (EIG_FLOOR - lo) > CLAMP_TOLERANCE * e.max().abs() {
        return Err(Error::NotPositiveDefinite(lo));
    }
    Ok(EIG_FLOOR)
}

/// Congruence `A M Aᵀ` for symmetric `M`, symmetrized.
pub fn congruence(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(a * m * a.transpose()))
}
