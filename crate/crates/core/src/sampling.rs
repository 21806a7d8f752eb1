//! Random generation: Gaussian draws, projection through a variant, Monte
//! Carlo moment estimates and the random parameter generators used by the
//! experiment grids.
//!
//! All randomness flows through [`RngHandle`], a seeded ChaCha8 stream.
//! Standard normal variates use the ziggurat sampler from `rand_distr`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GaussianParams, Moments, ProjectionVariant};
use crate::quadratic_forms::qf_mean;
use crate::spd::symmetrize;

/// Seeded, reproducible random stream. Not meant to be shared between
/// threads; parallel work derives independent `(seed, stream)` pairs.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn exp1(&mut self) -> f64 {
        self.rng.sample(Exp1)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Platform-stable hash of a sequence of words.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c909, |h, &w| splitmix64(h ^ splitmix64(w)))
}

/// Seed for one `(n, s, trial)` grid cell: `seed XOR hash(n, s, trial)`.
pub fn cell_seed(seed: u64, n: usize, s: f64, trial: usize) -> u64 {
    seed ^ hash_words(&[n as u64, s.to_bits(), trial as u64])
}

fn cholesky_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(sigma.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::NotSpd("Cholesky factorization failed".into()))
}

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut RngHandle) -> DMatrix<f64> {
    // Column-major fill: each column is one draw.
    let mut m = DMatrix::zeros(rows, cols);
    for v in m.iter_mut() {
        *v = rng.normal();
    }
    m
}

/// `m` rows of i.i.d. draws `mu + L u`, `L` the Cholesky factor of `Sigma`.
pub fn sample_gaussian(
    params: &GaussianParams,
    m: usize,
    rng: &mut RngHandle,
) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::InvalidParams("sample count must be >= 1".into()));
    }
    let l = cholesky_factor(params.sigma())?;
    let mut x = &l * standard_normal_matrix(params.dim(), m, rng);
    for mut col in x.column_iter_mut() {
        col += params.mu();
    }
    Ok(x.transpose())
}

/// `y = x / sqrt(x'Bx + c)`, with `B = I` when absent.
pub fn project(x: &DVector<f64>, variant: &ProjectionVariant) -> Result<DVector<f64>> {
    let q = match variant.b() {
        Some(b) => {
            if b.nrows() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: b.nrows(),
                    got: x.len(),
                });
            }
            x.dot(&(b * x))
        }
        None => x.norm_squared(),
    };
    let denom = q + variant.c();
    if !(denom > 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(x / denom.sqrt())
}

const BATCH: usize = 512;

/// Draws `cols` Gaussian samples and projects them, one per column.
fn projected_batch(
    l: &DMatrix<f64>,
    mu: &DVector<f64>,
    variant: &ProjectionVariant,
    cols: usize,
    rng: &mut RngHandle,
) -> Result<DMatrix<f64>> {
    let mut x = l * standard_normal_matrix(mu.len(), cols, rng);
    for mut col in x.column_iter_mut() {
        col += mu;
    }
    let bx = variant.b().map(|b| b * &x);
    for j in 0..cols {
        let q = match &bx {
            Some(bx) => x.column(j).dot(&bx.column(j)),
            None => x.column(j).norm_squared(),
        };
        let denom = q + variant.c();
        if !(denom > 0.0) {
            return Err(Error::ZeroVector);
        }
        let inv = 1.0 / denom.sqrt();
        x.column_mut(j).scale_mut(inv);
    }
    Ok(x)
}

fn check_mc_args(params: &GaussianParams, variant: &ProjectionVariant, m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidParams(
            "Monte Carlo needs at least 2 samples".into(),
        ));
    }
    variant.check_dim(params.dim())
}

/// Streaming estimate of the moments of the projected variable from `m`
/// draws; memory is independent of `m`.
pub fn mc_moments(
    params: &GaussianParams,
    variant: &ProjectionVariant,
    m: usize,
    rng: &mut RngHandle,
) -> Result<Moments> {
    check_mc_args(params, variant, m)?;
    let n = params.dim();
    let l = cholesky_factor(params.sigma())?;
    let mut sum = DVector::zeros(n);
    let mut outer = DMatrix::zeros(n, n);
    let mut done = 0;
    while done < m {
        let cols = BATCH.min(m - done);
        let y = projected_batch(&l, params.mu(), variant, cols, rng)?;
        for col in y.column_iter() {
            sum += col;
        }
        outer.gemm(1.0, &y, &y.transpose(), 1.0);
        done += cols;
    }
    let mf = m as f64;
    Ok(Moments::from_second_moment(
        sum / mf,
        symmetrize(&(outer / mf)),
    ))
}

/// Monte Carlo moments together with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub moments: Moments,
    /// Standard error of each entry of `gamma`.
    pub gamma_se: DVector<f64>,
    /// Standard error of each entry of `psi`, from the spread of the
    /// centered products `(y_i - gamma_i)(y_j - gamma_j)`.
    pub psi_se: DMatrix<f64>,
}

/// Two passes over the same random stream: the first fixes the mean, the
/// second accumulates centered products and their squares.
pub fn mc_moments_with_se(
    params: &GaussianParams,
    variant: &ProjectionVariant,
    m: usize,
    rng: &mut RngHandle,
) -> Result<McEstimate> {
    check_mc_args(params, variant, m)?;
    let replay = rng.clone();
    let first = mc_moments(params, variant, m, rng)?;
    let mut rng2 = replay;
    let n = params.dim();
    let l = cholesky_factor(params.sigma())?;
    let gamma = &first.gamma;
    let mut sq = DVector::zeros(n);
    let mut w_sum = DMatrix::zeros(n, n);
    let mut w_sq_sum = DMatrix::zeros(n, n);
    let mut done = 0;
    while done < m {
        let cols = BATCH.min(m - done);
        let mut y = projected_batch(&l, params.mu(), variant, cols, &mut rng2)?;
        for mut col in y.column_iter_mut() {
            col -= gamma;
        }
        let y2 = y.component_mul(&y);
        for col in y2.column_iter() {
            sq += col;
        }
        w_sum.gemm(1.0, &y, &y.transpose(), 1.0);
        w_sq_sum.gemm(1.0, &y2, &y2.transpose(), 1.0);
        done += cols;
    }
    let mf = m as f64;
    let gamma_se = sq.map(|s| (s / (mf - 1.0) / mf).sqrt());
    let psi = symmetrize(&(&w_sum / mf));
    let psi_se = DMatrix::from_fn(n, n, |i, j| {
        let mean = psi[(i, j)];
        let var = (w_sq_sum[(i, j)] / mf - mean * mean) * mf / (mf - 1.0);
        (var.max(0.0) / mf).sqrt()
    });
    Ok(McEstimate {
        moments: Moments::from_covariance(gamma.clone(), psi),
        gamma_se,
        psi_se,
    })
}

/// Uniform draw on the unit sphere (normalized standard Gaussian).
pub fn sample_mu(n: usize, rng: &mut RngHandle) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.normal());
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Eigenvalue distribution for random covariance matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigDist {
    /// `Exp(1) + 0.01`
    #[default]
    Exponential,
    /// `U(0.05, 1)`
    Uniform,
}

/// How `Exp(k)` in the rank-1 `b` generator is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpConvention {
    #[default]
    Mean,
    Rate,
}

/// Random rotation `exp(S)`, `S` skew-symmetric with standard normal
/// lower triangle.
pub fn random_rotation(n: usize, rng: &mut RngHandle) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = rng.normal();
            s[(i, j)] = v;
            s[(j, i)] = -v;
        }
    }
    s.exp()
}

fn sample_eigenvalue(dist: EigDist, rng: &mut RngHandle) -> f64 {
    match dist {
        EigDist::Exponential => rng.exp1() + 0.01,
        EigDist::Uniform => rng.uniform(0.05, 1.0),
    }
}

fn random_spd(n: usize, scale: f64, dist: EigDist, rng: &mut RngHandle) -> DMatrix<f64> {
    let d = DVector::from_fn(n, |_, _| sample_eigenvalue(dist, rng) * scale);
    let v = random_rotation(n, rng);
    let vd = DMatrix::from_fn(n, n, |r, c| v[(r, c)] * d[c]);
    symmetrize(&(vd * v.transpose()))
}

/// `Sigma = V D V'` with eigenvalues from `eig_dist` scaled by `s^2/n`.
pub fn sample_sigma(n: usize, s: f64, rng: &mut RngHandle, eig_dist: EigDist) -> DMatrix<f64> {
    random_spd(n, s * s / n as f64, eig_dist, rng)
}

/// `sigma2 I` with `sigma2 ~ U(0.05, 1) s^2/n`.
pub fn sample_isotropic_sigma2(n: usize, s: f64, rng: &mut RngHandle) -> f64 {
    rng.uniform(0.05, 1.0) * s * s / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BShape {
    Full,
    Rank1,
}

/// A sampled `B`; rank-1 draws keep `b` and `v` with `B = I + b v v'`.
#[derive(Debug, Clone)]
pub struct SampledB {
    pub matrix: DMatrix<f64>,
    pub rank1: Option<(f64, DVector<f64>)>,
}

/// Full mode: the covariance generator without the `s^2/n` scaling.
/// Rank-1 mode: `B = I + b v v'`, `b = 2 + Exp(4)`, `v` uniform on the sphere.
pub fn sample_b(n: usize, rng: &mut RngHandle, mode: BShape, conv: ExpConvention) -> SampledB {
    match mode {
        BShape::Full => SampledB {
            matrix: random_spd(n, 1.0, EigDist::Exponential, rng),
            rank1: None,
        },
        BShape::Rank1 => {
            let e = rng.exp1();
            let b = 2.0
                + match conv {
                    ExpConvention::Mean => 4.0 * e,
                    ExpConvention::Rate => e / 4.0,
                };
            let v = sample_mu(n, rng);
            let matrix = DMatrix::identity(n, n) + &v * v.transpose() * b;
            SampledB {
                matrix: symmetrize(&matrix),
                rank1: Some((b, v)),
            }
        }
    }
}

/// `c = c_mult E||x||^2` with `c_mult ~ Exp(1)`.
pub fn sample_c(params: &GaussianParams, rng: &mut RngHandle) -> f64 {
    let n = params.dim();
    let second = qf_mean(params, &DMatrix::identity(n, n)).expect("identity form is valid");
    loop {
        let c = rng.exp1() * second;
        if c > 0.0 {
            return c;
        }
    }
}
