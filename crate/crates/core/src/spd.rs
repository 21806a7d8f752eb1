//! Symmetric positive definite matrix algebra and the change of basis
//! `x' = B^{1/2} x` that maps a B-variant onto its B-free counterpart.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{GaussianParams, Moments, ProjectionVariant};

/// Maximum absolute asymmetry tolerated for "symmetric" inputs.
pub const SYM_TOL: f64 = 1e-10;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let asym = max_asymmetry(m);
    if asym > SYM_TOL || asym.is_nan() {
        return Err(Error::Asymmetric(asym));
    }
    Ok(())
}

/// Symmetric and smallest eigenvalue strictly positive.
pub fn check_spd(m: &DMatrix<f64>) -> Result<()> {
    check_symmetric(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd("non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::NotSpd(format!("smallest eigenvalue {min:e}")));
    }
    Ok(())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition with eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SortedEigen {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(symmetrize(m));
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
        let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }

    /// `V f(Λ) V'`
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.values.map(f);
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |r, c| {
            self.vectors[(r, c)] * d[c]
        });
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    /// Pullback of a matrix gradient through `W -> f(W)` (Daleckii–Krein).
    /// `grad` is the gradient with respect to `f(W)`; the result is the
    /// symmetric gradient with respect to `W`.
    pub fn pullback(
        &self,
        grad: &DMatrix<f64>,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> DMatrix<f64> {
        let v = &self.vectors;
        let g = v.transpose() * symmetrize(grad) * v;
        let n = self.values.len();
        let fv = self.values.map(&f);
        let inner = DMatrix::from_fn(n, n, |i, j| {
            let (li, lj) = (self.values[i], self.values[j]);
            let ratio = if (li - lj).abs() > 1e-9 * (1.0 + li.abs().max(lj.abs())) {
                (fv[i] - fv[j]) / (li - lj)
            } else {
                df(0.5 * (li + lj))
            };
            g[(i, j)] * ratio
        });
        symmetrize(&(v * inner * v.transpose()))
    }
}

/// Returns `(B^{1/2}, B^{-1/2})` via symmetric eigendecomposition.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_symmetric(m).map_err(|e| Error::NotSpd(e.to_string()))?;
    let eig = SortedEigen::new(m);
    let min = eig.values[0];
    if !(min > 0.0) {
        return Err(Error::NotSpd(format!("smallest eigenvalue {min:e}")));
    }
    Ok((eig.apply(f64::sqrt), eig.apply(|l| 1.0 / l.sqrt())))
}

/// Primed parameters `mu' = B^{1/2} mu`, `Sigma' = B^{1/2} Sigma B^{1/2}`.
pub fn to_primed(params: &GaussianParams, variant: &ProjectionVariant) -> Result<GaussianParams> {
    let b = variant
        .b()
        .ok_or_else(|| Error::InvalidVariant("to_primed requires a B matrix".into()))?;
    variant.check_dim(params.dim())?;
    let (sqrt_b, _) = spd_sqrt(b)?;
    Ok(primed_with(params, &sqrt_b))
}

pub(crate) fn primed_with(params: &GaussianParams, sqrt_b: &DMatrix<f64>) -> GaussianParams {
    let mu = sqrt_b * params.mu();
    let sigma = symmetrize(&(sqrt_b * params.sigma() * sqrt_b));
    GaussianParams::from_parts_unchecked(mu, sigma)
}

/// Maps moments of `y'` back to `y = B^{-1/2} y'`.
pub fn from_primed_moments(primed: &Moments, inv_sqrt_b: &DMatrix<f64>) -> Result<Moments> {
    let n = primed.dim();
    if inv_sqrt_b.nrows() != n || inv_sqrt_b.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: inv_sqrt_b.nrows(),
        });
    }
    let gamma = inv_sqrt_b * &primed.gamma;
    let psi = inv_sqrt_b * &primed.psi * inv_sqrt_b;
    Ok(Moments::from_covariance(gamma, psi))
}
