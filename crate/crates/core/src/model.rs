//! Domain types shared across the crate: the latent Gaussian, the
//! denominator specification selecting one of the four projected
//! distributions, and the first/second moments of the projected variable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd;

/// Upper bound on the dimension accepted anywhere in the crate.
pub const MAX_DIM: usize = 1024;

/// Mean and covariance of the latent Gaussian `x ~ N(mu, sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian", into = "RawGaussian")]
pub struct GaussianParams {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl GaussianParams {
    /// Validates dimensions, symmetry and positive definiteness.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if n < 2 {
            return Err(Error::InvalidParams(format!(
                "dimension must be >= 2, got {n}"
            )));
        }
        if n > MAX_DIM {
            return Err(Error::InvalidParams(format!(
                "dimension {n} exceeds cap {MAX_DIM}"
            )));
        }
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: sigma.nrows(),
            });
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("mu contains non-finite values".into()));
        }
        spd::check_spd(&sigma)?;
        Ok(Self { mu, sigma })
    }

    /// Isotropic covariance `sigma2 * I`.
    pub fn isotropic(mu: DVector<f64>, sigma2: f64) -> Result<Self> {
        let n = mu.len();
        Self::new(mu, DMatrix::identity(n, n) * sigma2)
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(mu: DVector<f64>, sigma: DMatrix<f64>) -> Self {
        Self { mu, sigma }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mu, self.sigma)
    }
}

/// Which of the four distributions a [`ProjectionVariant`] selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantKind {
    /// `y = x / ||x||`
    #[serde(rename = "pn")]
    Pn,
    /// `y = x / sqrt(x'x + c)`
    #[serde(rename = "pnc")]
    PnC,
    /// `y = x / sqrt(x'Bx)`
    #[serde(rename = "pnb")]
    PnB,
    /// `y = x / sqrt(x'Bx + c)`
    #[serde(rename = "pnbc")]
    PnBc,
}

impl VariantKind {
    pub fn has_b(self) -> bool {
        matches!(self, VariantKind::PnB | VariantKind::PnBc)
    }

    pub fn has_c(self) -> bool {
        matches!(self, VariantKind::PnC | VariantKind::PnBc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Pn => "pn",
            VariantKind::PnC => "pnc",
            VariantKind::PnB => "pnb",
            VariantKind::PnBc => "pnbc",
        }
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pn" => Ok(VariantKind::Pn),
            "pnc" | "pn_c" => Ok(VariantKind::PnC),
            "pnb" | "pn_b" => Ok(VariantKind::PnB),
            "pnbc" | "pn_bc" => Ok(VariantKind::PnBc),
            other => Err(Error::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Denominator `sqrt(x'Bx + c)`; `b = None` means `B = I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVariant", into = "RawVariant")]
pub struct ProjectionVariant {
    b: Option<DMatrix<f64>>,
    c: f64,
}

impl ProjectionVariant {
    pub fn new(b: Option<DMatrix<f64>>, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidVariant(format!(
                "c must be finite and >= 0, got {c}"
            )));
        }
        if let Some(b) = &b {
            if b.nrows() != b.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: b.nrows(),
                    got: b.ncols(),
                });
            }
            spd::check_spd(b)?;
        }
        Ok(Self { b, c })
    }

    pub(crate) fn from_parts_unchecked(b: Option<DMatrix<f64>>, c: f64) -> Self {
        Self { b, c }
    }

    /// The plain projected normal.
    pub fn pn() -> Self {
        Self { b: None, c: 0.0 }
    }

    pub fn pn_c(c: f64) -> Result<Self> {
        Self::new(None, c)
    }

    pub fn pn_b(b: DMatrix<f64>) -> Result<Self> {
        Self::new(Some(b), 0.0)
    }

    pub fn pn_bc(b: DMatrix<f64>, c: f64) -> Result<Self> {
        Self::new(Some(b), c)
    }

    pub fn b(&self) -> Option<&DMatrix<f64>> {
        self.b.as_ref()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn kind(&self) -> VariantKind {
        match (self.b.is_some(), self.c > 0.0) {
            (false, false) => VariantKind::Pn,
            (false, true) => VariantKind::PnC,
            (true, false) => VariantKind::PnB,
            (true, true) => VariantKind::PnBc,
        }
    }

    /// Errors unless `B` (when present) is `n x n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        match &self.b {
            Some(b) if b.nrows() != n => Err(Error::DimensionMismatch {
                expected: n,
                got: b.nrows(),
            }),
            _ => Ok(()),
        }
    }
}

/// First moment `gamma`, second moment `E[yy']` and covariance `psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMoments", into = "RawMoments")]
pub struct Moments {
    pub gamma: DVector<f64>,
    pub second_moment: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl Moments {
    /// Builds the moments from `gamma` and `E[yy']`, deriving `psi` and
    /// symmetrizing both matrices.
    pub fn from_second_moment(gamma: DVector<f64>, second_moment: DMatrix<f64>) -> Self {
        let second_moment = spd::symmetrize(&second_moment);
        let psi = spd::symmetrize(&(&second_moment - &gamma * gamma.transpose()));
        Self {
            gamma,
            second_moment,
            psi,
        }
    }

    /// Builds the moments from `gamma` and the covariance `psi`.
    pub fn from_covariance(gamma: DVector<f64>, psi: DMatrix<f64>) -> Self {
        let psi = spd::symmetrize(&psi);
        let second_moment = spd::symmetrize(&(&psi + &gamma * gamma.transpose()));
        Self {
            gamma,
            second_moment,
            psi,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

pub(crate) fn vec_to_rows(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub(crate) fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn rows_to_mat(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != nc) {
        return Err(Error::DimensionMismatch {
            expected: nc,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct RawGaussian {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

impl TryFrom<RawGaussian> for GaussianParams {
    type Error = Error;

    fn try_from(raw: RawGaussian) -> Result<Self> {
        GaussianParams::new(DVector::from_vec(raw.mu), rows_to_mat(&raw.sigma)?)
    }
}

impl From<GaussianParams> for RawGaussian {
    fn from(p: GaussianParams) -> Self {
        RawGaussian {
            mu: vec_to_rows(&p.mu),
            sigma: mat_to_rows(&p.sigma),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawVariant {
    #[serde(default)]
    b: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    c: f64,
}

impl TryFrom<RawVariant> for ProjectionVariant {
    type Error = Error;

    fn try_from(raw: RawVariant) -> Result<Self> {
        let b = raw.b.as_deref().map(rows_to_mat).transpose()?;
        ProjectionVariant::new(b, raw.c)
    }
}

impl From<ProjectionVariant> for RawVariant {
    fn from(v: ProjectionVariant) -> Self {
        RawVariant {
            b: v.b.as_ref().map(mat_to_rows),
            c: v.c,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawMoments {
    gamma: Vec<f64>,
    second_moment: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
}

impl TryFrom<RawMoments> for Moments {
    type Error = Error;

    fn try_from(raw: RawMoments) -> Result<Self> {
        let n = raw.gamma.len();
        let second_moment = rows_to_mat(&raw.second_moment)?;
        let psi = rows_to_mat(&raw.psi)?;
        for m in [&second_moment, &psi] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        Ok(Moments {
            gamma: DVector::from_vec(raw.gamma),
            second_moment,
            psi,
        })
    }
}

impl From<Moments> for RawMoments {
    fn from(m: Moments) -> Self {
        RawMoments {
            gamma: vec_to_rows(&m.gamma),
            second_moment: mat_to_rows(&m.second_moment),
            psi: mat_to_rows(&m.psi),
        }
    }
}
