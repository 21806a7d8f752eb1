//! Log-densities of the projected normal (on the sphere), of the variant
//! with an additive constant (inside the unit ball) and of the variant
//! with a matrix and a constant (inside an ellipsoid).
//!
//! The variant with a matrix and no constant lives on an ellipsoid surface
//! and has no density here.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{GaussianParams, ProjectionVariant};
use crate::spd;

const MAX_ORDER: usize = 512;
const ALPHA_GUARD: f64 = 1e4;
const RESCALE: f64 = 1e200;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn check_m_args(alpha: f64, order: usize) -> Result<()> {
    if order > MAX_ORDER {
        return Err(Error::NumericalOverflow(format!(
            "order {order} exceeds {MAX_ORDER}"
        )));
    }
    if !alpha.is_finite() || alpha.abs() > ALPHA_GUARD {
        return Err(Error::NumericalOverflow(format!(
            "|alpha| = {} exceeds {ALPHA_GUARD}",
            alpha.abs()
        )));
    }
    Ok(())
}

/// `M_k(alpha)` defined by `M_{k+1} = alpha M_k + k M_{k-1}`,
/// `M_0 = Phi(alpha)`, `M_1 = alpha Phi(alpha) + phi(alpha)`.
pub fn m_recursion(alpha: f64, order: usize) -> Result<f64> {
    let v = log_m_recursion(alpha, order)?.exp();
    if !v.is_finite() {
        return Err(Error::NumericalOverflow(format!(
            "M_{order}({alpha}) overflows"
        )));
    }
    Ok(v)
}

/// Natural log of `M_k(alpha)`; the sequence is positive for every `alpha`.
///
/// The forward recursion loses relative accuracy for negative `alpha` (the
/// sequence is then the minimal solution of the recurrence), so that regime
/// uses Miller's backward recursion normalized by `M_0`.
pub fn log_m_recursion(alpha: f64, order: usize) -> Result<f64> {
    check_m_args(alpha, order)?;
    let k = order as f64;
    if alpha >= 0.0 || 2.0 * alpha.abs() * k.sqrt() <= 4.0 {
        Ok(forward_log_m(alpha, order))
    } else {
        Ok(backward_log_m(alpha, order))
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn ln_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

fn forward_log_m(alpha: f64, order: usize) -> f64 {
    let phi = ln_std_normal_pdf(alpha).exp();
    let mut prev = std_normal_cdf(alpha);
    if order == 0 {
        return prev.ln();
    }
    let mut cur = alpha * prev + phi;
    let mut log_scale = 0.0;
    for j in 1..order {
        let next = alpha * cur + j as f64 * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
            log_scale += RESCALE.ln();
        }
    }
    cur.ln() + log_scale
}

/// `Phi(alpha) / phi(alpha)` for `alpha < 0`.
fn mills_ratio_negative(alpha: f64) -> f64 {
    let x = -alpha;
    if x < 5.0 {
        return std_normal_cdf(alpha) / ln_std_normal_pdf(alpha).exp();
    }
    // R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...)))), evaluated bottom-up
    let mut tail = x;
    for j in (1..=80).rev() {
        tail = x + j as f64 / tail;
    }
    1.0 / tail
}

fn backward_log_m(alpha: f64, order: usize) -> f64 {
    // Work with I_k = M_k / phi(alpha), which satisfies the same recurrence.
    let k = order as f64;
    let start = ((k.sqrt() + 20.0 / alpha.abs()).powi(2)).ceil() as usize + 10;
    let mut next = 0.0f64; // y_{j+1}
    let mut cur = 1.0f64; // y_j
    let mut at_order = if start == order { cur } else { 0.0 };
    let mut log_scale = 0.0f64;
    let mut log_scale_at_order = 0.0f64;
    for j in (1..=start).rev() {
        let prev = (next - alpha * cur) / j as f64;
        next = cur;
        cur = prev;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            next /= RESCALE;
            log_scale += RESCALE.ln();
        } else if cur.abs() < 1.0 / RESCALE {
            cur *= RESCALE;
            next *= RESCALE;
            log_scale -= RESCALE.ln();
        }
        if j - 1 == order {
            at_order = cur;
            log_scale_at_order = log_scale;
        }
    }
    // cur now holds y_0 (with scale log_scale)
    let log_i0 = mills_ratio_negative(alpha).ln();
    let log_ratio = at_order.ln() + log_scale_at_order - (cur.ln() + log_scale);
    ln_std_normal_pdf(alpha) + log_i0 + log_ratio
}

fn cholesky(sigma: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotSpd("Cholesky factorization failed".into()))
}

fn log_det_from_chol(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn check_point(y: &DVector<f64>, n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    Ok(())
}

/// Log-density of `y = x/||x||` with respect to surface measure on the
/// unit sphere.
pub fn pn_logpdf(y: &DVector<f64>, params: &GaussianParams) -> Result<f64> {
    let n = params.dim();
    check_point(y, n)?;
    let dev = (y.norm() - 1.0).abs();
    if dev > 1e-8 {
        return Err(Error::NotOnSphere(dev));
    }
    let ch = cholesky(params.sigma())?;
    let prec_mu = ch.solve(params.mu());
    let prec_y = ch.solve(y);
    let q1 = params.mu().dot(&prec_mu);
    let q2 = y.dot(&prec_mu);
    let q3 = y.dot(&prec_y);
    let nf = n as f64;
    let alpha = q2 / q3.sqrt();
    Ok(
        -0.5 * (nf - 1.0) * (2.0 * PI).ln() - 0.5 * log_det_from_chol(&ch) - 0.5 * nf * q3.ln()
            + 0.5 * (q2 * q2 / q3 - q1)
            + log_m_recursion(alpha, n - 1)?,
    )
}

fn gaussian_logpdf(x: &DVector<f64>, mu: &DVector<f64>, ch: &Cholesky<f64, Dyn>) -> f64 {
    let n = x.len() as f64;
    let d = x - mu;
    let maha = d.dot(&ch.solve(&d));
    -0.5 * n * (2.0 * PI).ln() - 0.5 * log_det_from_chol(ch) - 0.5 * maha
}

fn pnc_logpdf_chol(
    y: &DVector<f64>,
    mu: &DVector<f64>,
    ch: &Cholesky<f64, Dyn>,
    c: f64,
) -> Result<f64> {
    let r2 = y.norm_squared();
    if !(r2 < 1.0) {
        return Err(Error::OutsideBall(r2.sqrt()));
    }
    let n = y.len() as f64;
    let scale = c / (1.0 - r2);
    let x = y * scale.sqrt();
    Ok(gaussian_logpdf(&x, mu, ch) + 0.5 * n * scale.ln() - (1.0 - r2).ln())
}

/// Log-density of `y = x/sqrt(x'x + c)` on the open unit ball.
pub fn pnc_logpdf(y: &DVector<f64>, params: &GaussianParams, c: f64) -> Result<f64> {
    check_point(y, params.dim())?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::NonpositiveC(c));
    }
    let ch = cholesky(params.sigma())?;
    pnc_logpdf_chol(y, params.mu(), &ch, c)
}

/// Log-density of `y = x/sqrt(x'Bx + c)` on the open ellipsoid `y'By < 1`.
pub fn pnbc_logpdf(
    y: &DVector<f64>,
    params: &GaussianParams,
    variant: &ProjectionVariant,
) -> Result<f64> {
    let n = params.dim();
    check_point(y, n)?;
    let b = variant
        .b()
        .ok_or_else(|| Error::InvalidVariant("B matrix required".into()))?;
    let c = variant.c();
    if !(c > 0.0) {
        return Err(Error::InvalidVariant("c must be positive".into()));
    }
    variant.check_dim(n)?;
    let yby = y.dot(&(b * y));
    if !(yby < 1.0) {
        return Err(Error::OutsideEllipsoid(yby));
    }
    let (sqrt_b, _) = spd::spd_sqrt(b)?;
    let primed = spd::primed_with(params, &sqrt_b);
    let ch = cholesky(primed.sigma())?;
    let y_primed = &sqrt_b * y;
    let log_det_sqrt_b = 0.5 * log_det_from_chol(&cholesky(b)?);
    Ok(pnc_logpdf_chol(&y_primed, primed.mu(), &ch, c)? + log_det_sqrt_b)
}
