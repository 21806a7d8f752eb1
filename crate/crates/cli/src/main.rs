//! `pnorm`: moments, densities, samples, fits and experiment grids for the
//! projected normal family from the command line.

mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use projected_normal::density::{pn_logpdf, pnbc_logpdf, pnc_logpdf};
use projected_normal::exact::exact_moments_isotropic;
use projected_normal::experiment::{
    report, run_moment_accuracy, run_moment_matching, ExperimentConfig, ReportFormat,
};
use projected_normal::fit::{fit, FitConfig, FitProblem};
use projected_normal::moments::approx_moments;
use projected_normal::sampling::{mc_moments_with_se, project, sample_gaussian, RngHandle};
use projected_normal::VariantKind;

use io::{ModelFile, Output};

#[derive(Parser)]
#[command(
    name = "pnorm",
    version,
    about = "Projected normal distributions: moments, densities, sampling and fitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Moments of the projected variable for given parameters.
    Moments(MomentsArgs),
    /// Log-density at points read from a CSV file.
    Pdf(PdfArgs),
    /// Draws from the projected distribution.
    Sample(SampleArgs),
    /// Single moment-matching fit from an observed-moments file.
    Fit(FitArgs),
    /// Accuracy or moment-matching experiment grids.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct Common {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct ModelArgs {
    /// JSON file with `mu`, `sigma` and optional `b`, `c`.
    #[arg(long)]
    params: PathBuf,
    /// Projection variant; defaults to the one implied by `b` and `c`.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<VariantKind>,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "approx")]
    method: Method,
    /// Monte Carlo sample count for `--method mc`.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PdfArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Header-less CSV, one point per row.
    #[arg(long)]
    points: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FitArgs {
    /// JSON file with the observed moments and model family.
    #[arg(long)]
    problem: PathBuf,
    /// JSON file with optimizer settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Must match the family in the problem file when given.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<VariantKind>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    kind: ExperimentKind,
    /// JSON experiment config; library defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<VariantKind>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Approx,
    Exact,
    Mc,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Accuracy,
    Matching,
}

fn parse_variant(s: &str) -> std::result::Result<VariantKind, String> {
    s.parse()
        .map_err(|e: projected_normal::Error| e.to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Moments(a) => moments(a),
        Command::Pdf(a) => pdf(a),
        Command::Sample(a) => sample(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn moments(a: MomentsArgs) -> Result<()> {
    let (params, variant) = ModelFile::load(&a.model.params)?.resolve(a.model.variant)?;
    let out = Output::new(a.common.out);
    let format = a.common.format.unwrap_or(Format::Json);
    let (m, se) = match a.method {
        Method::Approx => (approx_moments(&params, &variant)?, None),
        Method::Exact => {
            if variant.kind() != VariantKind::Pn {
                bail!("exact moments exist only for variant pn");
            }
            let sigma2 = io::isotropic_variance(params.sigma())
                .context("exact moments need an isotropic covariance sigma2 * I")?;
            (exact_moments_isotropic(params.mu(), sigma2)?, None)
        }
        Method::Mc => {
            let est =
                mc_moments_with_se(&params, &variant, a.samples, &mut RngHandle::new(a.seed))?;
            (est.moments, Some((est.gamma_se, est.psi_se)))
        }
    };
    match format {
        Format::Json => out.write(&io::moments_json(&m, se.as_ref())?),
        Format::Csv => out.write(&io::moments_csv(&m, se.as_ref())?),
    }
}

fn pdf(a: PdfArgs) -> Result<()> {
    let (params, variant) = ModelFile::load(&a.model.params)?.resolve(a.model.variant)?;
    let points = io::read_points(&a.points, params.dim())?;
    let mut values = Vec::with_capacity(points.len());
    for (i, y) in points.iter().enumerate() {
        let v = match variant.kind() {
            VariantKind::Pn => pn_logpdf(y, &params),
            VariantKind::PnC => pnc_logpdf(y, &params, variant.c()),
            VariantKind::PnBc => pnbc_logpdf(y, &params, &variant),
            VariantKind::PnB => bail!("no density is available for variant pnb"),
        };
        values.push(v.with_context(|| format!("point {}", i + 1))?);
    }
    let out = Output::new(a.common.out);
    match a.common.format.unwrap_or(Format::Csv) {
        Format::Csv => out.write(&io::column_csv("logpdf", &values)?),
        Format::Json => out.write(&io::json_bytes(&serde_json::json!({ "logpdf": values }))?),
    }
}

fn sample(a: SampleArgs) -> Result<()> {
    let (params, variant) = ModelFile::load(&a.model.params)?.resolve(a.model.variant)?;
    let x = sample_gaussian(&params, a.count, &mut RngHandle::new(a.seed))?;
    let ys = x
        .row_iter()
        .map(|row| {
            project(
                &DVector::from_iterator(row.len(), row.iter().copied()),
                &variant,
            )
        })
        .collect::<projected_normal::Result<Vec<_>>>()?;
    let out = Output::new(a.common.out);
    match a.common.format.unwrap_or(Format::Csv) {
        Format::Csv => out.write(&io::points_csv(&ys)?),
        Format::Json => {
            let rows: Vec<Vec<f64>> = ys.iter().map(|y| y.iter().copied().collect()).collect();
            out.write(&io::json_bytes(&rows)?)
        }
    }
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let problem: FitProblem = io::read_json(&a.problem)?;
    if let Some(v) = a.variant {
        if v != problem.variant_kind {
            bail!(
                "--variant {v} does not match the problem file ({})",
                problem.variant_kind
            );
        }
    }
    let config: FitConfig = match &a.config {
        Some(p) => io::read_json(p)?,
        None => FitConfig::default(),
    };
    if a.common.format == Some(Format::Csv) {
        bail!("fit results are written as JSON only");
    }
    let result = fit(&problem, &config)?;
    Output::new(a.common.out).write(&io::json_bytes(&result)?)
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut config: ExperimentConfig = match &a.config {
        Some(p) => io::read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(v) = a.variant {
        config.variant = v;
    }
    if let Some(t) = a.trials {
        config.trials = t;
    }
    if let Some(m) = a.mc_samples {
        config.mc_samples = m;
    }
    let records = match a.kind {
        ExperimentKind::Accuracy => run_moment_accuracy(&config)?,
        ExperimentKind::Matching => run_moment_matching(&config)?,
    };
    let format = match a.common.format.unwrap_or(Format::Csv) {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    Output::new(a.common.out).write(&report(&records, format)?)
}
