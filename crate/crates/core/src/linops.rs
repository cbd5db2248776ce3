//! SVD-backed spectral primitives: nuclear-norm proximal map, projectors,
//! pseudo-inverse and numerical rank.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Singular values at or below `max(rel_tol * d1, abs_floor)` count as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralTolerance {
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for SpectralTolerance {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_floor: 0.0,
        }
    }
}

impl SpectralTolerance {
    pub fn new(rel_tol: f64, abs_floor: f64) -> Result<Self> {
        if !(rel_tol > 0.0) || !rel_tol.is_finite() {
            return Err(Error::invalid("rel_tol", format!("must be positive, got {rel_tol}")));
        }
        if !(abs_floor >= 0.0) {
            return Err(Error::invalid("abs_floor", format!("must be nonnegative, got {abs_floor}")));
        }
        Ok(Self { rel_tol, abs_floor })
    }

    fn threshold<T: Real>(&self, d1: T) -> T {
        let rel = d1 * T::lit(self.rel_tol);
        let floor = T::lit(self.abs_floor);
        if rel > floor {
            rel
        } else {
            floor
        }
    }
}

/// Thin SVD `m = U diag(s) V'`, singular values sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd<T: Real> {
    pub u: DMatrix<T>,
    pub s: DVector<T>,
    pub v_t: DMatrix<T>,
}

impl<T: Real> ThinSvd<T> {
    pub fn new(m: &DMatrix<T>) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Ok(Self {
                u: DMatrix::zeros(rows, 0),
                s: DVector::zeros(0),
                v_t: DMatrix::zeros(0, cols),
            });
        }
        let mut svd = m
            .clone()
            .try_svd(true, true, T::default_epsilon(), 0)
            .ok_or(Error::Svd { rows, cols })?;
        svd.sort_by_singular_values();
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::Svd { rows, cols }),
        };
        Ok(Self {
            u,
            s: svd.singular_values,
            v_t,
        })
    }

    pub fn d1(&self) -> T {
        self.s.iter().copied().next().unwrap_or_else(T::zero)
    }

    /// Number of singular values above the tolerance.
    pub fn rank(&self, tol: &SpectralTolerance) -> usize {
        let thr = tol.threshold(self.d1());
        self.s.iter().take_while(|&&s| s > thr).count()
    }

    /// Rank with the relative tolerance measured against `max(d1, reference)`,
    /// for matrices whose natural scale is known from elsewhere.
    pub fn rank_against(&self, tol: &SpectralTolerance, reference: T) -> usize {
        let d1 = self.d1();
        let thr = tol.threshold(if reference > d1 { reference } else { d1 });
        self.s.iter().take_while(|&&s| s > thr).count()
    }
}

/// Singular values in decreasing order.
pub fn singular_values<T: Real>(m: &DMatrix<T>) -> Result<Vec<T>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let s = m
        .clone()
        .try_svd(false, false, T::default_epsilon(), 0)
        .ok_or(Error::Svd { rows, cols })?
        .singular_values;
    let mut s: Vec<T> = s.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(s)
}

/// Largest singular value `d1(m)`; zero for an empty matrix.
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> Result<T> {
    if m.ncols() == 1 || m.nrows() == 1 {
        return Ok(m.norm());
    }
    Ok(singular_values(m)?.first().copied().unwrap_or_else(T::zero))
}

pub fn nuclear_norm<T: Real>(m: &DMatrix<T>) -> Result<T> {
    if m.ncols() == 1 || m.nrows() == 1 {
        return Ok(m.norm());
    }
    Ok(singular_values(m)?
        .into_iter()
        .fold(T::zero(), |acc, s| acc + s))
}

/// Singular value soft-thresholding `U (D - tau)_+ V'`, the minimizer of
/// `0.5 ||A - m||_F^2 + tau ||A||_*`.
pub fn nuclear_prox<T: Real>(m: &DMatrix<T>, tau: T) -> Result<DMatrix<T>> {
    if tau < T::zero() {
        return Err(Error::invalid("tau", format!("must be nonnegative, got {tau}")));
    }
    if tau == T::zero() {
        return Ok(m.clone());
    }
    // Vectors: the nuclear norm is the Euclidean norm.
    if m.ncols() == 1 || m.nrows() == 1 {
        let norm = m.norm();
        if norm <= tau {
            return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
        }
        return Ok(m * ((norm - tau) / norm));
    }
    let svd = ThinSvd::new(m)?;
    let kept = svd.s.iter().take_while(|&&s| s > tau).count();
    if kept == 0 {
        return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
    }
    let mut u = svd.u.columns(0, kept).into_owned();
    for (j, mut col) in u.column_iter_mut().enumerate() {
        col *= svd.s[j] - tau;
    }
    Ok(u * svd.v_t.rows(0, kept))
}

/// Orthonormal basis (`n x r`) of the column space of `m`.
pub fn orthonormal_basis<T: Real>(m: &DMatrix<T>, tol: &SpectralTolerance) -> Result<DMatrix<T>> {
    let svd = ThinSvd::new(m)?;
    let r = svd.rank(tol);
    Ok(svd.u.columns(0, r).into_owned())
}

/// Orthogonal projector onto the column space of `m`.
pub fn column_space_projector<T: Real>(
    m: &DMatrix<T>,
    tol: &SpectralTolerance,
) -> Result<DMatrix<T>> {
    if m.ncols() == 0 {
        return Err(Error::invalid("m", "projector needs at least one column"));
    }
    let basis = orthonormal_basis(m, tol)?;
    Ok(&basis * basis.transpose())
}

/// `A^+ B` with singular values below the tolerance treated as zero.
pub fn pinv_apply<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    tol: &SpectralTolerance,
) -> Result<DMatrix<T>> {
    if a.nrows() != b.nrows() {
        return Err(Error::mismatch("rows of pinv right-hand side", a.nrows(), b.nrows()));
    }
    let svd = ThinSvd::new(a)?;
    let r = svd.rank(tol);
    if r == 0 {
        return Ok(DMatrix::zeros(a.ncols(), b.ncols()));
    }
    let mut ut_b = svd.u.columns(0, r).tr_mul(b);
    for (i, mut row) in ut_b.row_iter_mut().enumerate() {
        row /= svd.s[i];
    }
    Ok(svd.v_t.rows(0, r).tr_mul(&ut_b))
}

/// Count of singular values above `tol`; zero for the zero matrix.
pub fn numerical_rank<T: Real>(m: &DMatrix<T>, tol: &SpectralTolerance) -> Result<usize> {
    let s = singular_values(m)?;
    let d1 = s.first().copied().unwrap_or_else(T::zero);
    let thr = tol.threshold(d1);
    Ok(s.iter().filter(|&&v| v > thr).count())
}
