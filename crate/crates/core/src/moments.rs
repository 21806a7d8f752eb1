//! Second-order Taylor approximations of the first and second moments of
//! `y = x / sqrt(x'Bx + c)` for all four denominator variants.
//!
//! The mean uses, per coordinate, the ratio `f(x_i, z_i) = x_i / sqrt(x_i^2 + z_i)`
//! with `z_i = x'x - x_i^2 + c`; the second moment uses the ratio of quadratic
//! forms `n_ij / d` with `n_ij = x_i x_j` and `d = x'x + c`. Both are
//! evaluated in vectorized form. B-variants are handled by approximating in
//! the primed space `x' = B^{1/2} x` and mapping back with `B^{-1/2}`.
//!
//! Each forward routine has a matching `*_backward` that propagates a
//! gradient with respect to its output back to `(mu, Sigma, c)`. Matrix
//! gradients treat the entries of `Sigma` as independent; callers
//! symmetrize.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{GaussianParams, Moments, ProjectionVariant};
use crate::spd::{self, symmetrize};

/// Moments of the auxiliary variables `z_i = x'x - x_i^2 + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZMoments {
    pub z_bar: DVector<f64>,
    pub z_var: DVector<f64>,
    pub xz_cov: DVector<f64>,
}

/// Moments of the numerators `n_ij = x_i x_j` and denominator `d = x'x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenominatorMoments {
    pub d_bar: f64,
    pub d_var: f64,
    /// `cov(n_ij, d)`
    pub nd_cov: DMatrix<f64>,
    /// `E[n_ij]`
    pub n_bar: DMatrix<f64>,
}

fn check_c(c: f64) -> Result<()> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::InvalidParams(format!(
            "c must be finite and >= 0, got {c}"
        )));
    }
    Ok(())
}

pub fn z_moments(params: &GaussianParams, c: f64) -> Result<ZMoments> {
    check_c(c)?;
    Ok(z_moments_raw(params.mu(), params.sigma(), c))
}

pub(crate) fn z_moments_raw(mu: &DVector<f64>, sigma: &DMatrix<f64>, c: f64) -> ZMoments {
    let n = mu.len();
    let diag = sigma.diagonal();
    let sm = sigma * mu;
    let total = sigma.trace() + mu.norm_squared() + c;
    let tr_ss = sigma.norm_squared();
    let quad = mu.dot(&sm);
    let z_bar = DVector::from_fn(n, |i, _| total - diag[i] - mu[i] * mu[i]);
    let z_var = DVector::from_fn(n, |i, _| {
        let ss_ii = sigma.row(i).norm_squared();
        2.0 * tr_ss + 4.0 * quad
            - 2.0 * (2.0 * ss_ii - diag[i] * diag[i])
            - 4.0 * (2.0 * mu[i] * sm[i] - mu[i] * mu[i] * diag[i])
    });
    let xz_cov = DVector::from_fn(n, |i, _| 2.0 * (sm[i] - mu[i] * diag[i]));
    ZMoments {
        z_bar,
        z_var,
        xz_cov,
    }
}

pub fn denominator_moments(params: &GaussianParams, c: f64) -> Result<DenominatorMoments> {
    check_c(c)?;
    Ok(denominator_moments_raw(params.mu(), params.sigma(), c))
}

pub(crate) fn denominator_moments_raw(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    c: f64,
) -> DenominatorMoments {
    let sm = sigma * mu;
    let outer = mu * mu.transpose();
    let d_bar = sigma.trace() + mu.norm_squared() + c;
    let d_var = 2.0 * sigma.norm_squared() + 4.0 * mu.dot(&sm);
    let n_bar = sigma + &outer;
    let nd_cov = (sigma * sigma + &outer * sigma + sigma * &outer) * 2.0;
    DenominatorMoments {
        d_bar,
        d_var,
        nd_cov,
        n_bar,
    }
}

/// Approximate `E[y]` for the denominator `sqrt(x'x + c)`.
///
/// The result is not clamped to the unit ball; for small `n` and large
/// covariance its norm can slightly exceed one.
pub fn mean_taylor(params: &GaussianParams, c: f64) -> Result<DVector<f64>> {
    check_c(c)?;
    mean_taylor_raw(params.mu(), params.sigma(), c)
}

pub(crate) fn mean_taylor_raw(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    c: f64,
) -> Result<DVector<f64>> {
    let z = z_moments_raw(mu, sigma, c);
    let n = mu.len();
    let mut gamma = DVector::zeros(n);
    for i in 0..n {
        let (m, zb) = (mu[i], z.z_bar[i]);
        let denom = m * m + zb;
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::NumericalOverflow(format!(
                "mu_i^2 + z_bar_i = {denom} at index {i}"
            )));
        }
        let p5 = denom.powf(-2.5);
        gamma[i] = m / denom.sqrt()
            + 0.5 * sigma[(i, i)] * (-3.0 * m * zb) * p5
            + 0.5 * z.z_var[i] * (3.0 * m / 4.0) * p5
            + z.xz_cov[i] * (m * m - 0.5 * zb) * p5;
    }
    Ok(gamma)
}

/// Gradient of `<gbar, mean_taylor(mu, sigma, c)>`.
pub(crate) fn mean_taylor_backward(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    c: f64,
    gbar: &DVector<f64>,
) -> TaylorGrad {
    let n = mu.len();
    let z = z_moments_raw(mu, sigma, c);
    let sm = sigma * mu;
    let mut g_mu = DVector::zeros(n);
    let mut g_sigma = DMatrix::zeros(n, n);
    let mut z_adj = DVector::zeros(n);
    let mut vz_adj = DVector::zeros(n);
    let mut cv_adj = DVector::zeros(n);

    for i in 0..n {
        let (m, zb, vz, cv, sii) = (mu[i], z.z_bar[i], z.z_var[i], z.xz_cov[i], sigma[(i, i)]);
        let d = m * m + zb;
        let p1 = d.powf(-0.5);
        let p5 = d.powf(-2.5);
        let t = -1.5 * sii * m * zb + 0.375 * m * vz + cv * (m * m - 0.5 * zb);
        let gb = gbar[i];
        g_mu[i] += gb * (p1 + p5 * (-1.5 * sii * zb + 0.375 * vz + 2.0 * cv * m));
        g_sigma[(i, i)] += gb * p5 * (-1.5 * m * zb);
        z_adj[i] += gb * p5 * (-1.5 * sii * m - 0.5 * cv);
        vz_adj[i] = gb * 0.375 * m * p5;
        cv_adj[i] = gb * p5 * (m * m - 0.5 * zb);
        let d_adj = gb * (-0.5 * m * d.powf(-1.5) - 2.5 * d.powf(-3.5) * t);
        g_mu[i] += 2.0 * m * d_adj;
        z_adj[i] += d_adj;
    }

    // z_bar_i = total - Sigma_ii - mu_i^2
    let total_adj = z_adj.sum();
    for i in 0..n {
        g_sigma[(i, i)] -= z_adj[i];
        g_mu[i] -= 2.0 * mu[i] * z_adj[i];
    }
    for i in 0..n {
        g_sigma[(i, i)] += total_adj;
    }
    g_mu += mu * (2.0 * total_adj);
    let g_c = total_adj;

    // var(z_i)
    let a = vz_adj.sum();
    g_sigma += sigma * (4.0 * a) + mu * mu.transpose() * (4.0 * a);
    g_mu += &sm * (8.0 * a);
    let w = DMatrix::from_diagonal(&vz_adj);
    g_sigma -= (&w * sigma + sigma * &w) * 4.0;
    let wmu = vz_adj.component_mul(mu);
    g_sigma -= &wmu * mu.transpose() * 8.0;
    g_mu -= (vz_adj.component_mul(&sm) + sigma * &wmu) * 8.0;
    for i in 0..n {
        g_sigma[(i, i)] += 4.0 * vz_adj[i] * sigma[(i, i)] + 4.0 * vz_adj[i] * mu[i] * mu[i];
        g_mu[i] += 8.0 * vz_adj[i] * mu[i] * sigma[(i, i)];
    }

    // cov(x_i, z_i)
    g_sigma += &cv_adj * mu.transpose() * 2.0;
    g_mu += sigma * &cv_adj * 2.0;
    for i in 0..n {
        g_sigma[(i, i)] -= 2.0 * cv_adj[i] * mu[i];
        g_mu[i] -= 2.0 * cv_adj[i] * sigma[(i, i)];
    }

    TaylorGrad {
        mu: g_mu,
        sigma: g_sigma,
        c: g_c,
    }
}

/// Approximate `E[yy']` for the denominator `sqrt(x'x + c)`.
pub fn second_moment_taylor(params: &GaussianParams, c: f64) -> Result<DMatrix<f64>> {
    check_c(c)?;
    second_moment_taylor_raw(params.mu(), params.sigma(), c)
}

pub(crate) fn second_moment_taylor_raw(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    c: f64,
) -> Result<DMatrix<f64>> {
    let dm = denominator_moments_raw(mu, sigma, c);
    let d = dm.d_bar;
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::NumericalOverflow(format!("d_bar = {d}")));
    }
    // N/d * (1 - C/(N d) + var(d)/d^2), expanded so that N_ij = 0 is harmless
    let e = &dm.n_bar * (1.0 / d + dm.d_var / (d * d * d)) - &dm.nd_cov / (d * d);
    Ok(symmetrize(&e))
}

/// Gradient of `<ebar, second_moment_taylor(mu, sigma, c)>`.
pub(crate) fn second_moment_backward(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    c: f64,
    ebar: &DMatrix<f64>,
) -> TaylorGrad {
    let ebar = symmetrize(ebar);
    let dm = denominator_moments_raw(mu, sigma, c);
    let (d, vd) = (dm.d_bar, dm.d_var);
    let outer = mu * mu.transpose();

    let n_adj = &ebar * (1.0 / d + vd / (d * d * d));
    let c_adj = &ebar * (-1.0 / (d * d));
    let vd_adj = ebar.component_mul(&dm.n_bar).sum() / (d * d * d);
    let d_adj = ebar
        .component_mul(
            &(&dm.n_bar * (-1.0 / (d * d) - 3.0 * vd / d.powi(4)) + &dm.nd_cov * (2.0 / d.powi(3))),
        )
        .sum();

    // N = Sigma + mu mu'
    let mut g_sigma = n_adj.clone();
    let mut g_mu = (&n_adj + n_adj.transpose()) * mu;

    // C = 2 (Sigma Sigma + P Sigma + Sigma P), P = mu mu'
    g_sigma += (&c_adj * sigma.transpose() + sigma.transpose() * &c_adj) * 2.0;
    g_sigma += (outer.transpose() * &c_adj + &c_adj * outer.transpose()) * 2.0;
    let p_adj = (&c_adj * sigma.transpose() + sigma.transpose() * &c_adj) * 2.0;
    g_mu += (&p_adj + p_adj.transpose()) * mu;

    // var(d) = 2 |Sigma|_F^2 + 4 mu' Sigma mu
    g_sigma += (sigma + &outer) * (4.0 * vd_adj);
    g_mu += sigma * mu * (8.0 * vd_adj);

    // d = tr(Sigma) + mu'mu + c
    for i in 0..mu.len() {
        g_sigma[(i, i)] += d_adj;
    }
    g_mu += mu * (2.0 * d_adj);

    TaylorGrad {
        mu: g_mu,
        sigma: g_sigma,
        c: d_adj,
    }
}

/// Gradient of a scalar with respect to `(mu, Sigma, c)`.
#[derive(Debug, Clone)]
pub(crate) struct TaylorGrad {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub c: f64,
}

/// `Psi = E[yy'] - gamma gamma'`, symmetrized.
pub fn covariance_taylor(
    gamma: &DVector<f64>,
    second_moment: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = gamma.len();
    if second_moment.nrows() != n || second_moment.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: second_moment.nrows(),
        });
    }
    Ok(symmetrize(&(second_moment - gamma * gamma.transpose())))
}

/// Approximate moments of any of the four variants.
pub fn approx_moments(params: &GaussianParams, variant: &ProjectionVariant) -> Result<Moments> {
    variant.check_dim(params.dim())?;
    let c = variant.c();
    match variant.b() {
        None => approx_moments_c(params, c),
        Some(b) => {
            let (sqrt_b, inv_sqrt_b) = spd::spd_sqrt(b)?;
            let primed = spd::primed_with(params, &sqrt_b);
            let m = approx_moments_c(&primed, c)?;
            spd::from_primed_moments(&m, &inv_sqrt_b)
        }
    }
}

fn approx_moments_c(params: &GaussianParams, c: f64) -> Result<Moments> {
    let gamma = mean_taylor(params, c)?;
    let second = second_moment_taylor(params, c)?;
    Ok(Moments::from_second_moment(gamma, second))
}
