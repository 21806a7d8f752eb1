#![allow(dead_code)]

use std::f64::consts::PI;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use projected_normal::quadratic_forms::{
    qf_covariance, qf_linear_covariance, qf_mean, qf_variance,
};
use projected_normal::sampling::{sample_mu, sample_sigma, EigDist, RngHandle};
use projected_normal::GaussianParams;

pub fn gauss_legendre(deg: usize) -> GaussLegendre {
    GaussLegendre::new(deg).expect("valid degree")
}

/// `int_a^b f` with a fixed Gauss-Legendre rule.
pub fn integrate(deg: usize, a: f64, b: f64, f: impl FnMut(f64) -> f64) -> f64 {
    gauss_legendre(deg).integrate(a, b, f)
}

/// Periodic trapezoid rule on `[0, 2 pi)`, spectrally accurate for smooth
/// periodic integrands.
pub fn integrate_circle(m: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = 2.0 * PI / m as f64;
    (0..m).map(|k| f(k as f64 * h)).sum::<f64>() * h
}

/// Surface integral over the unit sphere in R^3: Gauss-Legendre in
/// `u = cos(theta)`, trapezoid in `phi`.
pub fn integrate_sphere(n_u: usize, n_phi: usize, mut f: impl FnMut(&DVector<f64>) -> f64) -> f64 {
    let gl = gauss_legendre(n_u);
    gl.integrate(-1.0, 1.0, |u| {
        let r = (1.0 - u * u).max(0.0).sqrt();
        integrate_circle(n_phi, |phi| {
            f(&DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), u]))
        })
    })
}

/// Integral over the open unit disk in polar coordinates.
pub fn integrate_disk(n_r: usize, n_theta: usize, mut f: impl FnMut(&DVector<f64>) -> f64) -> f64 {
    let gl = gauss_legendre(n_r);
    gl.integrate(0.0, 1.0, |r| {
        r * integrate_circle(n_theta, |t| {
            f(&DVector::from_vec(vec![r * t.cos(), r * t.sin()]))
        })
    })
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Sample covariance of paired draws with a standard error from the
/// spread of the centered products.
pub fn cov_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let (mx, _) = mean_se(xs);
    let (my, _) = mean_se(ys);
    let prods: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .collect();
    mean_se(&prods)
}

pub fn assert_within_se(what: &str, estimate: f64, truth: f64, se: f64, k: f64) {
    assert!(
        (estimate - truth).abs() <= k * se,
        "{what}: estimate {estimate} vs {truth}, |diff| = {} > {k} SE ({se})",
        (estimate - truth).abs()
    );
}

/// Random parameters: uniform direction scaled by `radius`, covariance
/// from the experiment generator at scale `s`.
pub fn random_params(
    n: usize,
    radius: f64,
    s: f64,
    eig: EigDist,
    rng: &mut RngHandle,
) -> GaussianParams {
    let mu = sample_mu(n, rng) * radius;
    GaussianParams::new(mu, sample_sigma(n, s, rng, eig)).unwrap()
}

/// Random symmetric (indefinite) matrix.
pub fn random_symmetric(n: usize, rng: &mut RngHandle) -> DMatrix<f64> {
    let a = sample_sigma(n, (n as f64).sqrt(), rng, EigDist::Uniform);
    let b = sample_sigma(n, (n as f64).sqrt(), rng, EigDist::Uniform);
    a - b
}

pub fn random_vector(n: usize, rng: &mut RngHandle) -> DVector<f64> {
    sample_mu(n, rng) * 1.5
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn identity_without(n: usize, i: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(n, n);
    m[(i, i)] = 0.0;
    m
}

pub fn basis(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

/// `(e_i e_j' + e_j e_i') / 2`, the symmetric form with `x'Ax = x_i x_j`.
pub fn pair_form(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    a[(i, j)] += 0.5;
    a[(j, i)] += 0.5;
    a
}

/// The mean approximation built index by index from quadratic-form
/// moments and the scalar Taylor expression.
pub fn mean_per_index(p: &GaussianParams, c: f64) -> DVector<f64> {
    let n = p.dim();
    DVector::from_fn(n, |i, _| {
        let m_i = identity_without(n, i);
        let z = qf_mean(p, &m_i).unwrap() + c;
        let vz = qf_variance(p, &m_i).unwrap();
        let cxz = qf_linear_covariance(p, &m_i, &basis(n, i)).unwrap();
        let mu = p.mu()[i];
        let s = mu * mu + z;
        mu / s.sqrt()
            + p.sigma()[(i, i)] / 2.0 * (-3.0 * mu * z / s.powf(2.5))
            + vz / 2.0 * (3.0 * mu / (4.0 * s.powf(2.5)))
            + cxz * ((mu * mu - 0.5 * z) / s.powf(2.5))
    })
}

/// The second-moment approximation built entry by entry.
pub fn second_moment_per_index(p: &GaussianParams, c: f64) -> DMatrix<f64> {
    let n = p.dim();
    let eye = DMatrix::identity(n, n);
    let d = qf_mean(p, &eye).unwrap() + c;
    let vd = qf_variance(p, &eye).unwrap();
    DMatrix::from_fn(n, n, |i, j| {
        let a = pair_form(n, i, j);
        let nij = qf_mean(p, &a).unwrap();
        let cov = qf_covariance(p, &a, &eye).unwrap();
        nij / d - cov / (d * d) + nij * vd / (d * d * d)
    })
}
