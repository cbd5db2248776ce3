use nalgebra::{DMatrix, SymmetricEigen};

use crate::composition::{concat_columns, MultiViewDesign};
use crate::error::{Error, Result};
use crate::linops::{nuclear_norm, orthonormal_basis, pinv_apply, SpectralTolerance};
use crate::scalar::Real;

/// Least-squares problem `min 1/(2c) ||Y - X B||^2 + ...` held in Gram form so
/// that every solver iteration costs `O(p^2 q)` regardless of `n`.
#[derive(Debug, Clone)]
pub(crate) struct GramProblem<T: Real> {
    pub n: usize,
    pub q: usize,
    pub p: usize,
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    pub gram: DMatrix<T>,
    eig_vecs: DMatrix<T>,
    eig_vals: Vec<T>,
    pub xty: DMatrix<T>,
    pub yy: T,
    /// Mean diagonal of the Gram matrix, the natural curvature scale.
    pub curvature: T,
}

impl<T: Real> GramProblem<T> {
    pub fn new(x: &DMatrix<T>, y: &DMatrix<T>, sizes: Vec<usize>) -> Result<Self> {
        let n = x.nrows();
        if y.nrows() != n {
            return Err(Error::mismatch("response rows", n, y.nrows()));
        }
        let gram = x.tr_mul(x);
        let xty = x.tr_mul(y);
        let yy = y.norm_squared();
        Self::from_parts(n, gram, xty, yy, sizes)
    }

    pub fn from_parts(
        n: usize,
        gram: DMatrix<T>,
        xty: DMatrix<T>,
        yy: T,
        sizes: Vec<usize>,
    ) -> Result<Self> {
        let p = gram.nrows();
        let q = xty.ncols();
        let eig = SymmetricEigen::new(gram.clone());
        let eig_vals = eig
            .eigenvalues
            .iter()
            .map(|&e| if e > T::zero() { e } else { T::zero() })
            .collect();
        let mut trace = T::zero();
        for i in 0..p {
            trace += gram[(i, i)];
        }
        let mut curvature = trace / T::from_usize_lossy(p.max(1));
        if !(curvature > T::zero()) {
            curvature = T::one();
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        if acc != p {
            return Err(Error::mismatch("sum of block sizes", p, acc));
        }
        Ok(Self {
            n,
            q,
            p,
            offsets,
            sizes,
            gram,
            eig_vecs: eig.eigenvectors,
            eig_vals,
            xty,
            yy,
            curvature,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// `||Y - X B||_F^2` from the Gram quantities.
    pub fn rss(&self, b: &DMatrix<T>) -> T {
        let gb = &self.gram * b;
        let v = self.yy - (self.xty.dot(b) * T::lit(2.0)) + b.dot(&gb);
        if v > T::zero() {
            v
        } else {
            T::zero()
        }
    }

    /// `X'(Y - X B)`.
    pub fn neg_gradient(&self, b: &DMatrix<T>) -> DMatrix<T> {
        &self.xty - &self.gram * b
    }

    /// Solves `(G / c + rho I) B = rhs`.
    pub fn shifted_solve(&self, rhs: &DMatrix<T>, c: T, rho: T) -> DMatrix<T> {
        let mut z = self.eig_vecs.tr_mul(rhs);
        for (i, mut row) in z.row_iter_mut().enumerate() {
            row /= self.eig_vals[i] / c + rho;
        }
        &self.eig_vecs * z
    }

    /// Minimum-norm least-squares coefficients `G^+ X'Y`.
    pub fn least_squares(&self) -> DMatrix<T> {
        let top = self.eig_vals.iter().cloned().fold(T::zero(), |a, b| if b > a { b } else { a });
        let cut = top * T::lit(SpectralTolerance::default().rel_tol);
        let mut z = self.eig_vecs.tr_mul(&self.xty);
        for (i, mut row) in z.row_iter_mut().enumerate() {
            let e = self.eig_vals[i];
            if e > cut {
                row /= e;
            } else {
                row.fill(T::zero());
            }
        }
        &self.eig_vecs * z
    }

    /// Typical Frobenius size of a coefficient matrix for this problem.
    pub fn coef_scale(&self) -> T {
        let nq = T::from_usize_lossy(self.n * self.q);
        let y_rms = (self.yy / nq).sqrt();
        let y_rms = if y_rms > T::zero() { y_rms } else { T::one() };
        T::from_usize_lossy(self.p * self.q).sqrt()
            * y_rms
            * (T::from_usize_lossy(self.n) / self.curvature).sqrt()
    }

    pub fn block<'a>(&self, b: &'a DMatrix<T>, k: usize) -> nalgebra::DMatrixView<'a, T> {
        b.rows(self.offsets[k], self.sizes[k])
    }

    /// `sum_k t_k ||B_k||_*`.
    pub fn penalty(&self, b: &DMatrix<T>, thresholds: &[T]) -> Result<T> {
        let mut total = T::zero();
        for (k, &t) in thresholds.iter().enumerate() {
            if t == T::zero() {
                continue;
            }
            total += t * nuclear_norm(&self.block(b, k).into_owned())?;
        }
        Ok(total)
    }
}

/// Response and design with intercept and controls partialled out. The response
/// is divided by its null-model noise level so solver tolerances are unit-free.
#[derive(Debug, Clone)]
pub(crate) struct Prepared<T: Real> {
    pub y_scale: T,
    pub nuisance: Option<DMatrix<T>>,
    pub gram: GramProblem<T>,
}

impl<T: Real> Prepared<T> {
    pub fn new(y: &DMatrix<T>, design: &MultiViewDesign<T>) -> Result<Self> {
        let n = design.n();
        if y.nrows() != n {
            return Err(Error::mismatch("response rows (design has n rows)", n, y.nrows()));
        }
        if y.ncols() == 0 {
            return Err(Error::invalid("y", "response has no columns"));
        }
        let nuisance = nuisance_matrix(design);
        let basis = match &nuisance {
            Some(m) => Some(orthonormal_basis(m, &SpectralTolerance::default())?),
            None => None,
        };
        let x = residualize(&design.concatenated(), basis.as_ref());
        let mut y_res = residualize(y, basis.as_ref());
        let nq = T::from_usize_lossy(n * y.ncols());
        let y_scale = (y_res.norm_squared() / nq).sqrt();
        if !(y_scale > T::zero()) || !y_scale.is_finite_value() {
            return Err(Error::invalid(
                "y",
                "response has no variation after removing intercept and controls",
            ));
        }
        y_res /= y_scale;
        let gram = GramProblem::new(&x, &y_res, design.group_sizes())?;
        Ok(Self {
            y_scale,
            nuisance,
            gram,
        })
    }

    /// Intercept and control coefficients for a coefficient matrix in original units.
    pub fn back_solve(
        &self,
        y: &DMatrix<T>,
        design: &MultiViewDesign<T>,
        b: &DMatrix<T>,
    ) -> Result<Option<DMatrix<T>>> {
        let Some(nuis) = &self.nuisance else {
            return Ok(None);
        };
        let resid = y - design.concatenated() * b;
        Ok(Some(pinv_apply(nuis, &resid, &SpectralTolerance::default())?))
    }
}

/// `[1, Z0]`, or `None` when the model has neither intercept nor controls.
pub(crate) fn nuisance_matrix<T: Real>(design: &MultiViewDesign<T>) -> Option<DMatrix<T>> {
    let n = design.n();
    let mut parts = Vec::new();
    if design.has_intercept() {
        parts.push(DMatrix::from_element(n, 1, T::one()));
    }
    if let Some(c) = design.controls() {
        if c.ncols() > 0 {
            parts.push(c.clone());
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some(concat_columns(&parts))
    }
}

pub(crate) fn residualize<T: Real>(m: &DMatrix<T>, basis: Option<&DMatrix<T>>) -> DMatrix<T> {
    match basis {
        Some(q) if q.ncols() > 0 => m - q * q.tr_mul(m),
        _ => m.clone(),
    }
}

/// Design blocks with the intercept and controls partialled out.
pub(crate) fn residualized_blocks<T: Real>(design: &MultiViewDesign<T>) -> Result<Vec<DMatrix<T>>> {
    let basis = match nuisance_matrix(design) {
        Some(m) => Some(orthonormal_basis(&m, &SpectralTolerance::default())?),
        None => None,
    };
    Ok(design
        .x_blocks()
        .iter()
        .map(|b| residualize(b, basis.as_ref()))
        .collect())
}
