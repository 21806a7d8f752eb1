//! Unconstrained coordinates for moment matching and the analytic gradient
//! of the loss with respect to them.
//!
//! Layout of `theta`, in order:
//! - `u` (n): `mu = u / |u|`
//! - Sigma: upper triangle of `W` with `Sigma = exp(W)` (full), or
//!   `log sigma2` with `Sigma = sigma2 I` (isotropic)
//! - B (when present): `log b` then `w` (n) with `B = I + b v v'`,
//!   `v = w / |w|` (rank-1), or the upper triangle of `W_B` with
//!   `B = exp(W_B)` (full)
//! - `log c` (when the variant has a constant)

use nalgebra::{DMatrix, DVector};

use super::{BMode, FitProblem, SigmaMode};
use crate::error::{Error, Result};
use crate::model::{GaussianParams, ProjectionVariant};
use crate::moments::{
    mean_taylor_backward, mean_taylor_raw, second_moment_backward, second_moment_taylor_raw,
};
use crate::spd::{symmetrize, SortedEigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub n: usize,
    pub sigma: SigmaMode,
    pub b: BMode,
    pub has_c: bool,
}

fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn unpack_sym(n: usize, coords: &[f64]) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            w[(i, j)] = coords[k];
            w[(j, i)] = coords[k];
            k += 1;
        }
    }
    w
}

fn pack_sym(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(tri_len(n));
    for i in 0..n {
        for j in i..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Gradient for the packed upper triangle from a symmetric matrix gradient.
fn pack_sym_grad(g: &DMatrix<f64>) -> Vec<f64> {
    let n = g.nrows();
    let mut out = Vec::with_capacity(tri_len(n));
    for i in 0..n {
        for j in i..n {
            out.push(if i == j {
                g[(i, i)]
            } else {
                g[(i, j)] + g[(j, i)]
            });
        }
    }
    out
}

impl Layout {
    pub fn dim(&self) -> usize {
        let n = self.n;
        let sigma = match self.sigma {
            SigmaMode::FullSigma => tri_len(n),
            SigmaMode::IsotropicSigma => 1,
        };
        let b = match self.b {
            BMode::None => 0,
            BMode::Rank1 => 1 + n,
            BMode::Full => tri_len(n),
        };
        n + sigma + b + usize::from(self.has_c)
    }

    fn sigma_len(&self) -> usize {
        match self.sigma {
            SigmaMode::FullSigma => tri_len(self.n),
            SigmaMode::IsotropicSigma => 1,
        }
    }

    fn b_len(&self) -> usize {
        match self.b {
            BMode::None => 0,
            BMode::Rank1 => 1 + self.n,
            BMode::Full => tri_len(self.n),
        }
    }
}

pub(crate) enum SigmaState {
    Full(SortedEigen),
    Isotropic(f64),
}

pub(crate) enum BState {
    None,
    Rank1 {
        b: f64,
        v: DVector<f64>,
        w_norm: f64,
    },
    Full(SortedEigen),
}

/// Decoded constrained parameters plus what the backward pass reuses.
pub(crate) struct Decoded {
    pub mu: DVector<f64>,
    pub u_norm: f64,
    pub sigma: DMatrix<f64>,
    pub sigma_state: SigmaState,
    pub b_state: BState,
    /// `(B, B^{1/2}, B^{-1/2})`
    pub b_mats: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>,
    pub c: f64,
}

impl Decoded {
    pub fn params(&self) -> GaussianParams {
        GaussianParams::from_parts_unchecked(self.mu.clone(), self.sigma.clone())
    }

    pub fn variant(&self) -> ProjectionVariant {
        ProjectionVariant::from_parts_unchecked(self.b_mats.as_ref().map(|m| m.0.clone()), self.c)
    }

    pub fn rank1(&self) -> Option<(f64, DVector<f64>)> {
        match &self.b_state {
            BState::Rank1 { b, v, .. } => Some((*b, v.clone())),
            _ => None,
        }
    }
}

pub(crate) fn decode(layout: &Layout, theta: &[f64]) -> Result<Decoded> {
    let n = layout.n;
    if theta.len() != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: theta.len(),
        });
    }
    let u = DVector::from_column_slice(&theta[..n]);
    let u_norm = u.norm();
    if !(u_norm > 0.0) || !u_norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let mu = u / u_norm;
    let mut off = n;
    let (sigma, sigma_state) = match layout.sigma {
        SigmaMode::FullSigma => {
            let eig = SortedEigen::new(&unpack_sym(n, &theta[off..off + tri_len(n)]));
            (eig.apply(f64::exp), SigmaState::Full(eig))
        }
        SigmaMode::IsotropicSigma => {
            let s2 = theta[off].exp();
            (DMatrix::identity(n, n) * s2, SigmaState::Isotropic(s2))
        }
    };
    off += layout.sigma_len();
    let (b_state, b_mats) = match layout.b {
        BMode::None => (BState::None, None),
        BMode::Rank1 => {
            let b = theta[off].exp();
            let w = DVector::from_column_slice(&theta[off + 1..off + 1 + n]);
            let w_norm = w.norm();
            if !(w_norm > 0.0) || !w_norm.is_finite() {
                return Err(Error::ZeroVector);
            }
            let v = w / w_norm;
            let vv = &v * v.transpose();
            let r = (1.0 + b).sqrt();
            let eye = DMatrix::identity(n, n);
            let mats = (
                &eye + &vv * b,
                &eye + &vv * (r - 1.0),
                &eye + &vv * (1.0 / r - 1.0),
            );
            (BState::Rank1 { b, v, w_norm }, Some(mats))
        }
        BMode::Full => {
            let eig = SortedEigen::new(&unpack_sym(n, &theta[off..off + tri_len(n)]));
            let mats = (
                eig.apply(f64::exp),
                eig.apply(|l| (0.5 * l).exp()),
                eig.apply(|l| (-0.5 * l).exp()),
            );
            (BState::Full(eig), Some(mats))
        }
    };
    off += layout.b_len();
    let c = if layout.has_c { theta[off].exp() } else { 0.0 };
    if !(sigma.iter().all(|v| v.is_finite()) && c.is_finite()) {
        return Err(Error::NumericalOverflow(
            "decoded parameters are not finite".into(),
        ));
    }
    Ok(Decoded {
        mu,
        u_norm,
        sigma,
        sigma_state,
        b_state,
        b_mats,
        c,
    })
}

/// Coordinates reproducing given constrained parameters.
pub(crate) fn encode(
    layout: &Layout,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    b: Option<&InitB>,
    c: f64,
) -> Vec<f64> {
    let mut theta: Vec<f64> = mu.iter().copied().collect();
    match layout.sigma {
        SigmaMode::FullSigma => theta.extend(pack_sym(&SortedEigen::new(sigma).apply(f64::ln))),
        SigmaMode::IsotropicSigma => theta.push((sigma.trace() / layout.n as f64).ln()),
    }
    match (layout.b, b) {
        (BMode::Rank1, Some(InitB::Rank1 { b, v })) => {
            theta.push(b.ln());
            theta.extend(v.iter().copied());
        }
        (BMode::Full, Some(InitB::Full(m))) => {
            theta.extend(pack_sym(&SortedEigen::new(m).apply(f64::ln)))
        }
        (BMode::Full, _) => theta.extend(pack_sym(&DMatrix::zeros(layout.n, layout.n))),
        (BMode::Rank1, _) => {
            theta.push(0.0);
            let mut e = vec![0.0; layout.n];
            e[0] = 1.0;
            theta.extend(e);
        }
        (BMode::None, _) => {}
    }
    if layout.has_c {
        theta.push(c.ln());
    }
    theta
}

pub(crate) enum InitB {
    Rank1 { b: f64, v: DVector<f64> },
    Full(DMatrix<f64>),
}

/// Approximate moments `(gamma, Psi)` of a decoded candidate, plus the
/// primed intermediates needed by the backward pass.
struct Forward {
    mu_p: DVector<f64>,
    sigma_p: DMatrix<f64>,
    gamma_p: DVector<f64>,
    psi_p: DMatrix<f64>,
    gamma: DVector<f64>,
    psi: DMatrix<f64>,
}

fn forward(d: &Decoded) -> Result<Forward> {
    let (mu_p, sigma_p) = match &d.b_mats {
        Some((_, s, _)) => (s * &d.mu, symmetrize(&(s * &d.sigma * s))),
        None => (d.mu.clone(), d.sigma.clone()),
    };
    let gamma_p = mean_taylor_raw(&mu_p, &sigma_p, d.c)?;
    let e_p = second_moment_taylor_raw(&mu_p, &sigma_p, d.c)?;
    let psi_p = symmetrize(&(e_p - &gamma_p * gamma_p.transpose()));
    let (gamma, psi) = match &d.b_mats {
        Some((_, _, t)) => (t * &gamma_p, symmetrize(&(t * &psi_p * t))),
        None => (gamma_p.clone(), psi_p.clone()),
    };
    Ok(Forward {
        mu_p,
        sigma_p,
        gamma_p,
        psi_p,
        gamma,
        psi,
    })
}

fn loss_from(fw: &Forward, problem: &FitProblem) -> (f64, DVector<f64>, DMatrix<f64>) {
    let rg = &fw.gamma - &problem.observed_gamma;
    let rp = &fw.psi - &problem.observed_psi;
    let lam = problem.lambda;
    let loss = (1.0 - lam) * rg.norm_squared() + lam * rp.norm_squared();
    (loss, rg, rp)
}

pub(crate) fn loss_at(layout: &Layout, problem: &FitProblem, theta: &[f64]) -> Result<f64> {
    let d = decode(layout, theta)?;
    let fw = forward(&d)?;
    Ok(loss_from(&fw, problem).0)
}

pub(crate) fn loss_and_grad(
    layout: &Layout,
    problem: &FitProblem,
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let d = decode(layout, theta)?;
    let fw = forward(&d)?;
    let (loss, rg, rp) = loss_from(&fw, problem);
    let lam = problem.lambda;
    let gbar = rg * (2.0 * (1.0 - lam));
    let psibar = rp * (2.0 * lam);

    // back through gamma = T gamma', Psi = T Psi' T
    let (mut gbar_p, psibar_p, tbar) = match &d.b_mats {
        Some((_, _, t)) => {
            let tbar = &gbar * fw.gamma_p.transpose()
                + &psibar * (&fw.psi_p * t).transpose()
                + (t * &fw.psi_p).transpose() * &psibar;
            (
                t.transpose() * &gbar,
                t.transpose() * &psibar * t.transpose(),
                Some(tbar),
            )
        }
        None => (gbar, psibar, None),
    };

    // Psi' = E' - gamma' gamma'
    let ebar_p = symmetrize(&psibar_p);
    gbar_p -= &ebar_p * &fw.gamma_p * 2.0;

    let g1 = mean_taylor_backward(&fw.mu_p, &fw.sigma_p, d.c, &gbar_p);
    let g2 = second_moment_backward(&fw.mu_p, &fw.sigma_p, d.c, &ebar_p);
    let mubar_p = g1.mu + g2.mu;
    let sigmabar_p = symmetrize(&(g1.sigma + g2.sigma));
    let cbar = g1.c + g2.c;

    // back through mu' = S mu, Sigma' = S Sigma S
    let (mubar, sigmabar, sbar) = match &d.b_mats {
        Some((_, s, _)) => {
            let sbar = &mubar_p * d.mu.transpose()
                + &sigmabar_p * (&d.sigma * s).transpose()
                + (s * &d.sigma).transpose() * &sigmabar_p;
            (
                s.transpose() * &mubar_p,
                s.transpose() * &sigmabar_p * s.transpose(),
                Some(sbar),
            )
        }
        None => (mubar_p, sigmabar_p, None),
    };

    let mut grad = Vec::with_capacity(layout.dim());
    let ubar = (&mubar - &d.mu * d.mu.dot(&mubar)) / d.u_norm;
    grad.extend(ubar.iter().copied());

    match &d.sigma_state {
        SigmaState::Full(eig) => {
            grad.extend(pack_sym_grad(&eig.pullback(&sigmabar, f64::exp, f64::exp)))
        }
        SigmaState::Isotropic(s2) => grad.push(sigmabar.trace() * s2),
    }

    match (&d.b_state, sbar, tbar) {
        (BState::None, _, _) => {}
        (BState::Rank1 { b, v, w_norm }, Some(sbar), Some(tbar)) => {
            let r = (1.0 + b).sqrt();
            let alpha = r - 1.0;
            let beta = 1.0 / r - 1.0;
            let abar = v.dot(&(&sbar * v));
            let bbar_coef = v.dot(&(&tbar * v));
            let vbar =
                (&sbar + sbar.transpose()) * v * alpha + (&tbar + tbar.transpose()) * v * beta;
            let b_grad = abar / (2.0 * r) - bbar_coef / (2.0 * r * r * r);
            grad.push(b_grad * b);
            let wbar = (&vbar - v * v.dot(&vbar)) / *w_norm;
            grad.extend(wbar.iter().copied());
        }
        (BState::Full(eig), Some(sbar), Some(tbar)) => {
            let ws = eig.pullback(&sbar, |l| (0.5 * l).exp(), |l| 0.5 * (0.5 * l).exp());
            let wt = eig.pullback(&tbar, |l| (-0.5 * l).exp(), |l| -0.5 * (-0.5 * l).exp());
            grad.extend(pack_sym_grad(&(ws + wt)));
        }
        _ => unreachable!("B state and its adjoints are produced together"),
    }

    if layout.has_c {
        grad.push(cbar * d.c);
    }
    debug_assert_eq!(grad.len(), layout.dim());
    Ok((loss, grad))
}
