//! Moments of quadratic forms `q = x'Mx`, `p = x'Kx` and linear forms
//! `l = b'x` of a Gaussian vector `x ~ N(mu, Sigma)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::GaussianParams;
use crate::spd::check_symmetric;

fn check_form(params: &GaussianParams, m: &DMatrix<f64>) -> Result<()> {
    let n = params.dim();
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.nrows(),
        });
    }
    check_symmetric(m)
}

/// `E[x'Mx] = tr(M Sigma) + mu'M mu`
pub fn qf_mean(params: &GaussianParams, m: &DMatrix<f64>) -> Result<f64> {
    check_form(params, m)?;
    let mu = params.mu();
    Ok(m.component_mul(params.sigma()).sum() + mu.dot(&(m * mu)))
}

/// `var(x'Mx) = 2 tr(M Sigma M Sigma) + 4 mu'M Sigma M mu`
pub fn qf_variance(params: &GaussianParams, m: &DMatrix<f64>) -> Result<f64> {
    qf_covariance(params, m, m)
}

/// `cov(x'Mx, x'Kx) = 2 tr(M Sigma K Sigma) + 4 mu'M Sigma K mu`
pub fn qf_covariance(params: &GaussianParams, m: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    check_form(params, m)?;
    check_form(params, k)?;
    let sigma = params.sigma();
    let mu = params.mu();
    let ms = m * sigma;
    let ks = k * sigma;
    // tr(AB) with A = MΣ, B = KΣ
    let trace = ms.component_mul(&ks.transpose()).sum();
    let quad = (ms.transpose() * mu).dot(&(k * mu));
    Ok(2.0 * trace + 4.0 * quad)
}

/// `cov(x'Mx, b'x) = 2 mu'M Sigma b`
pub fn qf_linear_covariance(
    params: &GaussianParams,
    m: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    check_form(params, m)?;
    if b.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: b.len(),
        });
    }
    Ok(2.0 * (m * params.mu()).dot(&(params.sigma() * b)))
}
