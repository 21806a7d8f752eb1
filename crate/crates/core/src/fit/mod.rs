//! Moment matching: find parameters whose approximate moments match
//! observed ones under the loss
//! `(1 - lambda) |gamma~ - gamma|^2 + lambda |Psi~ - Psi|_F^2`.
//!
//! Constrained parameters are reached through smooth surjective maps from
//! unconstrained coordinates (normalization onto the sphere, matrix
//! exponential onto the SPD cone, `exp` for positive scalars), and the
//! coordinates are optimized with NAdam under a cyclic learning rate.

mod nadam;
mod param;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    mat_to_rows, rows_to_mat, vec_to_rows, GaussianParams, ProjectionVariant, VariantKind,
};
use crate::moments::approx_moments;
use crate::spd::{check_symmetric, symmetrize, SortedEigen};

use nadam::Nadam;
use param::{InitB, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    FullSigma,
    IsotropicSigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BMode {
    None,
    Rank1,
    /// Unconstrained SPD `B`. Available, but the fits are poorly
    /// conditioned and recover `B` unreliably.
    Full,
}

/// Observed moments plus the model family to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem", into = "RawProblem")]
pub struct FitProblem {
    pub observed_gamma: DVector<f64>,
    pub observed_psi: DMatrix<f64>,
    pub variant_kind: VariantKind,
    pub constraint_mode: SigmaMode,
    pub b_mode: BMode,
    pub lambda: f64,
}

impl FitProblem {
    pub fn new(
        observed_gamma: DVector<f64>,
        observed_psi: DMatrix<f64>,
        variant_kind: VariantKind,
        constraint_mode: SigmaMode,
        b_mode: BMode,
        lambda: f64,
    ) -> Result<Self> {
        let p = Self {
            observed_gamma,
            observed_psi,
            variant_kind,
            constraint_mode,
            b_mode,
            lambda,
        };
        p.validate()?;
        Ok(p)
    }

    /// Full-covariance projected normal fit.
    pub fn pn(
        observed_gamma: DVector<f64>,
        observed_psi: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        Self::new(
            observed_gamma,
            observed_psi,
            VariantKind::Pn,
            SigmaMode::FullSigma,
            BMode::None,
            lambda,
        )
    }

    /// `Sigma = sigma2 I`, `B = I + b v v'`, free `c`.
    pub fn pnbc_rank1(
        observed_gamma: DVector<f64>,
        observed_psi: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        Self::new(
            observed_gamma,
            observed_psi,
            VariantKind::PnBc,
            SigmaMode::IsotropicSigma,
            BMode::Rank1,
            lambda,
        )
    }

    pub fn dim(&self) -> usize {
        self.observed_gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n < 2 {
            return Err(Error::InvalidParams(format!(
                "dimension must be >= 2, got {n}"
            )));
        }
        if self.observed_psi.nrows() != n || self.observed_psi.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.observed_psi.nrows(),
            });
        }
        check_symmetric(&self.observed_psi)?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if self
            .observed_gamma
            .iter()
            .chain(self.observed_psi.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParams(
                "observed moments must be finite".into(),
            ));
        }
        match (self.variant_kind.has_b(), self.b_mode) {
            (true, BMode::None) => Err(Error::InvalidConfig(format!(
                "{} needs b_mode rank1 or full",
                self.variant_kind
            ))),
            (false, BMode::Rank1 | BMode::Full) => Err(Error::InvalidConfig(format!(
                "{} has no B matrix; use b_mode none",
                self.variant_kind
            ))),
            _ => Ok(()),
        }
    }

    fn layout(&self) -> Layout {
        Layout {
            n: self.dim(),
            sigma: self.constraint_mode,
            b: self.b_mode,
            has_c: self.variant_kind.has_c(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawProblem {
    observed_gamma: Vec<f64>,
    observed_psi: Vec<Vec<f64>>,
    variant_kind: VariantKind,
    constraint_mode: SigmaMode,
    b_mode: BMode,
    lambda: f64,
}

impl TryFrom<RawProblem> for FitProblem {
    type Error = Error;

    fn try_from(raw: RawProblem) -> Result<Self> {
        Self::new(
            DVector::from_vec(raw.observed_gamma),
            rows_to_mat(&raw.observed_psi)?,
            raw.variant_kind,
            raw.constraint_mode,
            raw.b_mode,
            raw.lambda,
        )
    }
}

impl From<FitProblem> for RawProblem {
    fn from(p: FitProblem) -> Self {
        RawProblem {
            observed_gamma: vec_to_rows(&p.observed_gamma),
            observed_psi: mat_to_rows(&p.observed_psi),
            variant_kind: p.variant_kind,
            constraint_mode: p.constraint_mode,
            b_mode: p.b_mode,
            lambda: p.lambda,
        }
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub cycles: usize,
    pub iterations_per_cycle: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub cycle_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum_decay: f64,
    /// Initial `b` for rank-1 `B` fits.
    pub b_init: f64,
    /// The fit counts as converged when the last cycle improved the best
    /// loss by less than this relative amount.
    pub tol: f64,
    /// Start every cycle with fresh optimizer moments; when false they
    /// carry over from the previous cycle.
    pub reset_each_cycle: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            cycles: 12,
            iterations_per_cycle: 80,
            lr: 0.4,
            lr_decay: 0.85,
            decay_every: 5,
            cycle_decay: 0.85,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum_decay: 4e-3,
            b_init: 1.0,
            tol: 1e-10,
            reset_each_cycle: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.lr,
            self.lr_decay,
            self.cycle_decay,
            self.eps,
            self.b_init,
        ];
        if self.cycles == 0 || self.iterations_per_cycle == 0 || self.decay_every == 0 {
            return Err(Error::InvalidConfig(
                "cycles, iterations_per_cycle and decay_every must be >= 1".into(),
            ));
        }
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning-rate constants, eps and b_init must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Recovered `b` and `v` of a rank-1 `B = I + b v v'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Estimate {
    pub b: f64,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params_hat: GaussianParams,
    pub variant_hat: ProjectionVariant,
    pub rank1_hat: Option<Rank1Estimate>,
    pub final_loss: f64,
    /// Best loss seen up to each evaluated iterate.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// The loss of a candidate, from its approximate moments.
pub fn loss(
    params: &GaussianParams,
    variant: &ProjectionVariant,
    problem: &FitProblem,
) -> Result<f64> {
    problem.validate()?;
    if params.dim() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: params.dim(),
        });
    }
    let m = approx_moments(params, variant)?;
    let lam = problem.lambda;
    Ok(
        (1.0 - lam) * (&m.gamma - &problem.observed_gamma).norm_squared()
            + lam * (&m.psi - &problem.observed_psi).norm_squared(),
    )
}

/// `u / |u|`
pub fn sphere_embed(u: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = u.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(u / norm)
}

/// `exp(W)` for symmetric `W`.
pub fn spd_embed(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(w)?;
    Ok(SortedEigen::new(w).apply(f64::exp))
}

/// Learning rate at a global iteration of the cyclic schedule.
pub fn lr_schedule(iteration: usize, config: &FitConfig) -> f64 {
    let cycle = iteration / config.iterations_per_cycle;
    let within = iteration % config.iterations_per_cycle;
    let steps = within / config.decay_every;
    config.lr * config.cycle_decay.powi(cycle as i32) * config.lr_decay.powi(steps as i32)
}

/// The loss as a function of the unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct Objective {
    layout: Layout,
    problem: FitProblem,
}

impl Objective {
    pub fn new(problem: &FitProblem) -> Result<Self> {
        problem.validate()?;
        Ok(Self {
            layout: problem.layout(),
            problem: problem.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        param::loss_at(&self.layout, &self.problem, theta)
    }

    pub fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        param::loss_and_grad(&self.layout, &self.problem, theta)
    }

    /// Constrained parameters represented by `theta`.
    pub fn decode(&self, theta: &[f64]) -> Result<(GaussianParams, ProjectionVariant)> {
        let d = param::decode(&self.layout, theta)?;
        Ok((d.params(), d.variant()))
    }

    /// Coordinates of the data-driven starting point.
    pub fn initial_theta(&self, config: &FitConfig) -> Result<Vec<f64>> {
        let p = &self.problem;
        let n = p.dim();
        let psi = symmetrize(&p.observed_psi);
        let eig = SortedEigen::new(&psi);
        let sigma = match p.constraint_mode {
            SigmaMode::FullSigma => {
                let top = eig.values.max().max(0.0);
                let floor = (1e-6 * top).max(1e-10);
                eig.apply(|l| l.max(floor))
            }
            SigmaMode::IsotropicSigma => {
                DMatrix::identity(n, n) * (psi.trace() / n as f64).max(1e-10)
            }
        };
        let init_b = match p.b_mode {
            BMode::None => None,
            BMode::Rank1 => Some(InitB::Rank1 {
                b: config.b_init,
                v: eig.vectors.column(0).into_owned(),
            }),
            BMode::Full => Some(InitB::Full(DMatrix::identity(n, n))),
        };
        let direction = match &init_b {
            Some(InitB::Rank1 { b, v }) => {
                let sqrt_b = DMatrix::identity(n, n) + v * v.transpose() * ((1.0 + b).sqrt() - 1.0);
                sqrt_b * &p.observed_gamma
            }
            _ => p.observed_gamma.clone(),
        };
        let mu = sphere_embed(&direction)?;
        let c = sigma.trace() + 1.0;
        Ok(param::encode(&self.layout, &mu, &sigma, init_b.as_ref(), c))
    }

    fn result(
        &self,
        theta: &[f64],
        final_loss: f64,
        loss_trace: Vec<f64>,
        iterations: usize,
        converged: bool,
    ) -> Result<FitResult> {
        let d = param::decode(&self.layout, theta)?;
        Ok(FitResult {
            params_hat: d.params(),
            variant_hat: d.variant(),
            rank1_hat: d.rank1().map(|(b, v)| Rank1Estimate {
                b,
                v: v.iter().copied().collect(),
            }),
            final_loss,
            loss_trace,
            iterations,
            converged,
        })
    }
}

fn finite_eval(obj: &Objective, theta: &[f64], iteration: usize) -> Result<(f64, Vec<f64>)> {
    match obj.loss_and_grad(theta) {
        Ok((l, g)) if l.is_finite() && g.iter().all(|v| v.is_finite()) => Ok((l, g)),
        Ok(_) | Err(Error::NumericalOverflow(_) | Error::ZeroVector) => {
            Err(Error::NonFiniteLoss { iteration })
        }
        Err(e) => Err(e),
    }
}

/// Fits any supported model family; returns the best iterate.
pub fn fit(problem: &FitProblem, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let obj = Objective::new(problem)?;
    let mut theta = obj.initial_theta(config)?;
    let mut best_theta = theta.clone();
    let mut best = f64::INFINITY;
    let mut trace = Vec::with_capacity(config.cycles * config.iterations_per_cycle + 1);
    let mut iteration = 0;
    let mut converged = false;
    let new_opt = || {
        Nadam::new(
            obj.dim(),
            config.beta1,
            config.beta2,
            config.eps,
            config.momentum_decay,
        )
    };
    let mut opt = new_opt();

    'cycles: for cycle in 0..config.cycles {
        let best_before = best;
        if config.reset_each_cycle && cycle > 0 {
            opt = new_opt();
        }
        for _ in 0..config.iterations_per_cycle {
            let (l, g) = finite_eval(&obj, &theta, iteration)?;
            if l < best {
                best = l;
                best_theta.clone_from(&theta);
            }
            trace.push(best);
            if best == 0.0 {
                converged = true;
                break 'cycles;
            }
            opt.update(&mut theta, &g, lr_schedule(iteration, config));
            iteration += 1;
        }
        converged = best_before.is_finite() && (best_before - best) <= config.tol * best_before;
    }
    if best > 0.0 {
        // the iterate produced by the last update has not been scored yet
        if let Ok(l) = obj.loss(&theta) {
            if l < best {
                best = l;
                best_theta.clone_from(&theta);
            }
        }
        trace.push(best);
    }
    obj.result(&best_theta, best, trace, iteration, converged)
}

/// Projected normal with full covariance.
pub fn fit_pn(problem: &FitProblem, config: &FitConfig) -> Result<FitResult> {
    if problem.variant_kind != VariantKind::Pn || problem.constraint_mode != SigmaMode::FullSigma {
        return Err(Error::InvalidConfig(
            "fit_pn needs variant pn with full_sigma".into(),
        ));
    }
    fit(problem, config)
}

/// `Sigma = sigma2 I`, `B = I + b v v'` and free `c`.
pub fn fit_pnbc(problem: &FitProblem, config: &FitConfig) -> Result<FitResult> {
    if problem.variant_kind != VariantKind::PnBc
        || problem.constraint_mode != SigmaMode::IsotropicSigma
        || problem.b_mode != BMode::Rank1
    {
        return Err(Error::InvalidConfig(
            "fit_pnbc needs variant pnbc with isotropic_sigma and rank1".into(),
        ));
    }
    fit(problem, config)
}
