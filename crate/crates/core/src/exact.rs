//! Exact moments of the projected normal with isotropic covariance
//! `sigma^2 I`, and the confluent hypergeometric function they need.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Moments;

const MAX_TERMS: usize = 100_000;
const Z_GUARD: f64 = 1e4;
const RESCALE: f64 = 1e200;

/// Kummer's confluent hypergeometric function `1F1(a; b; z)`.
///
/// Negative arguments are mapped through Kummer's transformation
/// `1F1(a; b; z) = e^z 1F1(b - a; b; -z)` whenever that yields a series of
/// positive terms, and the series is summed with a running log scale so
/// that `e^z` and the series can be combined without overflow. Below
/// `z = -1e4` the large-argument asymptotic expansion is used instead;
/// positive arguments beyond `1e4` are rejected.
pub fn hyp1f1(a: f64, b: f64, z: f64) -> Result<f64> {
    if b <= 0.0 && b == b.floor() {
        return Err(Error::Pole(b));
    }
    if !z.is_finite() {
        return Err(Error::OutOfRange(format!("z = {z}")));
    }
    if z < -Z_GUARD {
        return asymptotic_negative(a, b, -z);
    }
    if z > Z_GUARD {
        return Err(Error::OutOfRange(format!("z = {z} exceeds {Z_GUARD}")));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    if z < 0.0 && b - a >= 0.0 && b > 0.0 {
        let (sign, log_abs) = log_series(b - a, b, -z)?;
        return Ok(sign * (log_abs + z).exp());
    }
    let (sign, log_abs) = log_series(a, b, z)?;
    Ok(sign * log_abs.exp())
}

/// `1F1(a; b; -x) ~ Gamma(b)/Gamma(b-a) x^{-a} sum_s (a)_s (1+a-b)_s / s! x^{-s}`;
/// the exponentially small companion term is below double precision here.
fn asymptotic_negative(a: f64, b: f64, x: f64) -> Result<f64> {
    let bma = b - a;
    if bma <= 0.0 && bma == bma.floor() {
        return Err(Error::OutOfRange(format!(
            "asymptotic branch needs b - a not in -N, got {bma}"
        )));
    }
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for s in 0..200 {
        let sf = s as f64;
        let next = term * (a + sf) * (1.0 + a - b + sf) / ((sf + 1.0) * x);
        if next.abs() >= term.abs() && s > 0 {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    let log_gamma_ratio = libm::lgamma(b) - libm::lgamma(bma);
    let (_, sign_b) = libm::lgamma_r(b);
    let (_, sign_bma) = libm::lgamma_r(bma);
    let sign = f64::from(sign_b * sign_bma);
    Ok(sign * (log_gamma_ratio - a * x.ln()).exp() * sum)
}

/// Sums `sum_k (a)_k / (b)_k z^k / k!`, returning `(sign, ln|sum|)`.
fn log_series(a: f64, b: f64, z: f64) -> Result<(f64, f64)> {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut log_scale = 0.0f64;
    let mut small = 0;
    for k in 0..MAX_TERMS {
        let kf = k as f64;
        term *= (a + kf) / (b + kf) * z / (kf + 1.0);
        sum += term;
        if sum.abs() > RESCALE || term.abs() > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            log_scale += RESCALE.ln();
        }
        if term.abs() < 1e-16 * sum.abs() {
            small += 1;
            if small == 3 {
                return Ok((sum.signum(), sum.abs().ln() + log_scale));
            }
        } else {
            small = 0;
        }
    }
    Err(Error::NonConvergence(MAX_TERMS))
}

/// Coefficients of the isotropic moments:
/// `gamma = a mu`, `Psi = b mu mu' + c I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

pub fn isotropic_coeffs(n: usize, mu_norm_sq: f64, sigma2: f64) -> Result<IsotropicCoeffs> {
    if n < 2 {
        return Err(Error::InvalidParams(format!(
            "dimension must be >= 2, got {n}"
        )));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParams(format!(
            "sigma2 must be positive, got {sigma2}"
        )));
    }
    let nf = n as f64;
    let z = -mu_norm_sq / (2.0 * sigma2);
    let log_ratio = libm::lgamma(0.5 * (nf + 1.0)) - libm::lgamma(0.5 * nf + 1.0);
    let a = log_ratio.exp() / (2.0 * sigma2).sqrt() * hyp1f1(0.5, 0.5 * (nf + 2.0), z)?;
    let b = hyp1f1(1.0, 0.5 * (nf + 4.0), z)? / (sigma2 * (nf + 2.0)) - a * a;
    let c = hyp1f1(1.0, 0.5 * (nf + 2.0), z)? / nf;
    Ok(IsotropicCoeffs { a, b, c })
}

/// Exact moments of `x / ||x||` for `x ~ N(mu, sigma2 I)`.
pub fn exact_moments_isotropic(mu: &DVector<f64>, sigma2: f64) -> Result<Moments> {
    let n = mu.len();
    let k = isotropic_coeffs(n, mu.norm_squared(), sigma2)?;
    let gamma = mu * k.a;
    let psi = mu * mu.transpose() * k.b + DMatrix::identity(n, n) * k.c;
    Ok(Moments::from_covariance(gamma, psi))
}
