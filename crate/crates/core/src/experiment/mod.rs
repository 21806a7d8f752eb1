//! Accuracy and moment-matching experiment grids over dimension `n`,
//! covariance scale `s` and trial index, with per-cell metrics and
//! machine-readable reports.

mod metrics;
mod report;

pub use metrics::{cosine_sim, rel_error_pct};
pub use report::{
    median, parse_json_report, quantile, report, summarize, Report, ReportFormat, SummaryRow,
};

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit, BMode, FitConfig, FitProblem, FitResult, SigmaMode};
use crate::model::{GaussianParams, ProjectionVariant, VariantKind, MAX_DIM};
use crate::moments::approx_moments;
use crate::sampling::{
    cell_seed, mc_moments, sample_b, sample_c, sample_isotropic_sigma2, sample_mu, sample_sigma,
    BShape, EigDist, ExpConvention, RngHandle,
};

/// Candidate covariance weights for the constrained `B`, `c` fits.
pub const PNBC_LAMBDA_GRID: [f64; 4] = [0.66, 0.9, 0.95, 0.98];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: Vec<usize>,
    pub scales: Vec<f64>,
    pub trials: usize,
    pub mc_samples: usize,
    pub variant: VariantKind,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub seed: u64,
    pub eig_dist: EigDist,
    pub exp_convention: ExpConvention,
    /// Off by default so that reruns produce identical bytes.
    pub record_wall_time: bool,
    pub fit: FitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: vec![3, 6, 12, 24, 48],
            scales: vec![0.125, 0.25, 0.5, 1.0],
            trials: 20,
            mc_samples: 100_000,
            variant: VariantKind::Pn,
            lambda: None,
            lambda_grid: None,
            seed: 0,
            eig_dist: EigDist::Exponential,
            exp_convention: ExpConvention::Mean,
            record_wall_time: false,
            fit: FitConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.scales.is_empty() {
            return Err(Error::InvalidConfig(
                "dims and scales must be non-empty".into(),
            ));
        }
        if let Some(&n) = self.dims.iter().find(|&&n| !(2..=MAX_DIM).contains(&n)) {
            return Err(Error::InvalidConfig(format!(
                "dimension {n} outside [2, {MAX_DIM}]"
            )));
        }
        if self.scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("scales must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.mc_samples < 2 {
            return Err(Error::InvalidConfig("mc_samples must be >= 2".into()));
        }
        let lambdas = self.lambda.iter().chain(self.lambda_grid.iter().flatten());
        if lambdas.clone().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidConfig(
                "lambda values must be in [0, 1]".into(),
            ));
        }
        if self.lambda_grid.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::InvalidConfig("lambda_grid must be non-empty".into()));
        }
        self.fit.validate()
    }

    /// Covariance weights tried by the matching experiment.
    pub fn lambdas(&self) -> Vec<f64> {
        match (&self.lambda_grid, self.lambda) {
            (Some(grid), _) => grid.clone(),
            (None, Some(l)) => vec![l],
            (None, None) if self.variant == VariantKind::PnBc => PNBC_LAMBDA_GRID.to_vec(),
            (None, None) => vec![0.9],
        }
    }

    fn cells(&self) -> Vec<(usize, f64, usize)> {
        let mut out = Vec::new();
        for &n in &self.dims {
            for &s in &self.scales {
                for t in 0..self.trials {
                    out.push((n, s, t));
                }
            }
        }
        out
    }
}

/// One `(n, s, trial)` cell. Metrics that do not apply are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub n: usize,
    pub s: f64,
    pub trial: usize,
    /// Seed of the cell; with the config it reproduces the record alone.
    pub seed: u64,
    pub variant: VariantKind,
    pub lambda: Option<f64>,
    pub error_gamma_pct: Option<f64>,
    pub cosine_gamma: Option<f64>,
    pub error_psi_pct: Option<f64>,
    pub cosine_psi: Option<f64>,
    pub error_mu_pct: Option<f64>,
    pub cosine_mu: Option<f64>,
    pub error_sigma_pct: Option<f64>,
    pub cosine_sigma: Option<f64>,
    pub error_b_pct: Option<f64>,
    pub cosine_b: Option<f64>,
    pub error_c_pct: Option<f64>,
    pub final_loss: Option<f64>,
    pub fit_error: Option<String>,
    pub wall_time: Option<f64>,
}

impl ExperimentRecord {
    fn empty(n: usize, s: f64, trial: usize, seed: u64, variant: VariantKind) -> Self {
        Self {
            n,
            s,
            trial,
            seed,
            variant,
            lambda: None,
            error_gamma_pct: None,
            cosine_gamma: None,
            error_psi_pct: None,
            cosine_psi: None,
            error_mu_pct: None,
            cosine_mu: None,
            error_sigma_pct: None,
            cosine_sigma: None,
            error_b_pct: None,
            cosine_b: None,
            error_c_pct: None,
            final_loss: None,
            fit_error: None,
            wall_time: None,
        }
    }
}

/// Ground-truth parameters of one cell.
#[derive(Debug, Clone)]
pub struct Truth {
    pub params: GaussianParams,
    pub variant: ProjectionVariant,
}

fn sample_truth_accuracy(
    n: usize,
    s: f64,
    config: &ExperimentConfig,
    rng: &mut RngHandle,
) -> Result<Truth> {
    let mu = sample_mu(n, rng);
    let sigma = sample_sigma(n, s, rng, config.eig_dist);
    let params = GaussianParams::new(mu, sigma)?;
    let kind = config.variant;
    let b = kind
        .has_b()
        .then(|| sample_b(n, rng, BShape::Full, config.exp_convention).matrix);
    let c = if kind.has_c() {
        sample_c(&params, rng)
    } else {
        0.0
    };
    Ok(Truth {
        params,
        variant: ProjectionVariant::new(b, c)?,
    })
}

fn sample_truth_matching(
    n: usize,
    s: f64,
    config: &ExperimentConfig,
    rng: &mut RngHandle,
) -> Result<Truth> {
    let mu = sample_mu(n, rng);
    let (sigma_mode, b_mode) = fit_modes(config.variant);
    let sigma = match sigma_mode {
        SigmaMode::FullSigma => sample_sigma(n, s, rng, config.eig_dist),
        SigmaMode::IsotropicSigma => DMatrix::identity(n, n) * sample_isotropic_sigma2(n, s, rng),
    };
    let params = GaussianParams::new(mu, sigma)?;
    let b = match b_mode {
        BMode::None => None,
        BMode::Rank1 => Some(sample_b(n, rng, BShape::Rank1, config.exp_convention).matrix),
        BMode::Full => Some(sample_b(n, rng, BShape::Full, config.exp_convention).matrix),
    };
    let c = if config.variant.has_c() {
        sample_c(&params, rng)
    } else {
        0.0
    };
    Ok(Truth {
        params,
        variant: ProjectionVariant::new(b, c)?,
    })
}

/// Constraint set used when fitting each variant.
pub fn fit_modes(kind: VariantKind) -> (SigmaMode, BMode) {
    match kind {
        VariantKind::Pn | VariantKind::PnC => (SigmaMode::FullSigma, BMode::None),
        VariantKind::PnB => (SigmaMode::FullSigma, BMode::Full),
        VariantKind::PnBc => (SigmaMode::IsotropicSigma, BMode::Rank1),
    }
}

fn param_rng(seed: u64) -> RngHandle {
    RngHandle::with_stream(seed, 0)
}

fn mc_rng(seed: u64) -> RngHandle {
    RngHandle::with_stream(seed, 1)
}

/// One cell of the accuracy grid, reproducible from its seed.
pub fn accuracy_trial(
    n: usize,
    s: f64,
    trial: usize,
    seed: u64,
    config: &ExperimentConfig,
) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let truth = sample_truth_accuracy(n, s, config, &mut param_rng(seed))?;
    let mc = mc_moments(
        &truth.params,
        &truth.variant,
        config.mc_samples,
        &mut mc_rng(seed),
    )?;
    let approx = approx_moments(&truth.params, &truth.variant)?;
    let mut r = ExperimentRecord::empty(n, s, trial, seed, config.variant);
    r.error_gamma_pct = Some(rel_error_pct(approx.gamma.as_slice(), mc.gamma.as_slice())?);
    r.cosine_gamma = Some(cosine_sim(approx.gamma.as_slice(), mc.gamma.as_slice())?);
    r.error_psi_pct = Some(rel_error_pct(approx.psi.as_slice(), mc.psi.as_slice())?);
    r.cosine_psi = Some(cosine_sim(approx.psi.as_slice(), mc.psi.as_slice())?);
    if config.record_wall_time {
        r.wall_time = Some(start.elapsed().as_secs_f64());
    }
    Ok(r)
}

/// Approximate moments against Monte Carlo truth over the whole grid.
pub fn run_moment_accuracy(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    config
        .cells()
        .into_par_iter()
        .map(|(n, s, t)| accuracy_trial(n, s, t, cell_seed(config.seed, n, s, t), config))
        .collect()
}

fn score_fit(r: &mut ExperimentRecord, truth: &Truth, fit: &FitResult) -> Result<()> {
    let (mu, mu_hat) = (truth.params.mu(), fit.params_hat.mu());
    let (sigma, sigma_hat) = (truth.params.sigma(), fit.params_hat.sigma());
    r.error_mu_pct = Some(rel_error_pct(mu_hat.as_slice(), mu.as_slice())?);
    r.cosine_mu = Some(cosine_sim(mu_hat.as_slice(), mu.as_slice())?);
    r.error_sigma_pct = Some(rel_error_pct(sigma_hat.as_slice(), sigma.as_slice())?);
    r.cosine_sigma = Some(cosine_sim(sigma_hat.as_slice(), sigma.as_slice())?);
    if let (Some(b), Some(b_hat)) = (truth.variant.b(), fit.variant_hat.b()) {
        r.error_b_pct = Some(rel_error_pct(b_hat.as_slice(), b.as_slice())?);
        r.cosine_b = Some(cosine_sim(b_hat.as_slice(), b.as_slice())?);
    }
    if truth.variant.c() > 0.0 {
        r.error_c_pct = Some(rel_error_pct(&[fit.variant_hat.c()], &[truth.variant.c()])?);
    }
    r.final_loss = Some(fit.final_loss);
    Ok(())
}

/// One cell of the matching grid: a record per candidate `lambda`.
pub fn matching_trial(
    n: usize,
    s: f64,
    trial: usize,
    seed: u64,
    config: &ExperimentConfig,
) -> Result<Vec<ExperimentRecord>> {
    let start = Instant::now();
    let truth = sample_truth_matching(n, s, config, &mut param_rng(seed))?;
    let observed = mc_moments(
        &truth.params,
        &truth.variant,
        config.mc_samples,
        &mut mc_rng(seed),
    )?;
    let (sigma_mode, b_mode) = fit_modes(config.variant);
    let mut out = Vec::new();
    for lambda in config.lambdas() {
        let mut r = ExperimentRecord::empty(n, s, trial, seed, config.variant);
        r.lambda = Some(lambda);
        let problem = FitProblem::new(
            observed.gamma.clone(),
            observed.psi.clone(),
            config.variant,
            sigma_mode,
            b_mode,
            lambda,
        )?;
        match fit(&problem, &config.fit) {
            Ok(res) => score_fit(&mut r, &truth, &res)?,
            Err(e) => r.fit_error = Some(e.to_string()),
        }
        if config.record_wall_time {
            r.wall_time = Some(start.elapsed().as_secs_f64());
        }
        out.push(r);
    }
    Ok(out)
}

/// Score used to pick `lambda` within a cell: error of `B` when the
/// variant has one, otherwise error of `Sigma`.
fn selection_score(r: &ExperimentRecord) -> Option<f64> {
    r.error_b_pct.or(r.error_sigma_pct)
}

/// Fit recovery over the grid. With several candidate weights, each
/// `(n, s)` cell keeps the weight with the smallest median selection
/// error; failed fits count as infinitely bad.
pub fn run_moment_matching(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let per_trial: Vec<Vec<ExperimentRecord>> = config
        .cells()
        .into_par_iter()
        .map(|(n, s, t)| matching_trial(n, s, t, cell_seed(config.seed, n, s, t), config))
        .collect::<Result<_>>()?;
    let lambdas = config.lambdas();
    if lambdas.len() == 1 {
        return Ok(per_trial.into_iter().flatten().collect());
    }
    let mut out = Vec::new();
    for cell in per_trial.chunks(config.trials) {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..lambdas.len() {
            let scores: Vec<f64> = cell
                .iter()
                .map(|trial| selection_score(&trial[k]).unwrap_or(f64::INFINITY))
                .collect();
            let med = median(&scores).unwrap_or(f64::INFINITY);
            if best.is_none_or(|(_, b)| med < b) {
                best = Some((k, med));
            }
        }
        let k = best.map_or(0, |(k, _)| k);
        out.extend(cell.iter().map(|trial| trial[k].clone()));
    }
    Ok(out)
}
