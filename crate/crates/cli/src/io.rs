//! File formats read and written by the CLI.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use projected_normal::{GaussianParams, Moments, ProjectionVariant, VariantKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Latent Gaussian plus an optional denominator.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    #[serde(default)]
    b: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    c: f64,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Builds the parameters. An explicit variant selects which of `b` and
    /// `c` are used; the ones it needs must be present.
    pub fn resolve(
        self,
        variant: Option<VariantKind>,
    ) -> Result<(GaussianParams, ProjectionVariant)> {
        let params = GaussianParams::new(DVector::from_vec(self.mu), rows_to_matrix(&self.sigma)?)?;
        let b = self.b.as_deref().map(rows_to_matrix).transpose()?;
        let kind = variant.unwrap_or(match (b.is_some(), self.c > 0.0) {
            (false, false) => VariantKind::Pn,
            (false, true) => VariantKind::PnC,
            (true, false) => VariantKind::PnB,
            (true, true) => VariantKind::PnBc,
        });
        if kind.has_b() && b.is_none() {
            bail!("variant {kind} needs `b` in the parameter file");
        }
        if kind.has_c() && !(self.c > 0.0) {
            bail!("variant {kind} needs a positive `c` in the parameter file");
        }
        let variant = ProjectionVariant::new(
            if kind.has_b() { b } else { None },
            if kind.has_c() { self.c } else { 0.0 },
        )?;
        variant.check_dim(params.dim())?;
        Ok((params, variant))
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        bail!("matrix rows have unequal lengths");
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `sigma2` when the matrix is `sigma2 * I` up to rounding.
pub fn isotropic_variance(sigma: &DMatrix<f64>) -> Option<f64> {
    let s2 = sigma.diagonal().mean();
    let dev = (sigma - DMatrix::identity(sigma.nrows(), sigma.ncols()) * s2).amax();
    (dev <= 1e-12 * s2).then_some(s2)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Header-less CSV of points, each of length `n`.
pub fn read_points(path: &Path, n: usize) -> Result<Vec<DVector<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let y = rec
            .iter()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("row {} of {}", i + 1, path.display()))?;
        if y.len() != n {
            bail!("row {} has {} values, expected {n}", i + 1, y.len());
        }
        out.push(DVector::from_vec(y));
    }
    Ok(out)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Serialize)]
struct MomentsOut<'a> {
    #[serde(flatten)]
    moments: &'a Moments,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_se: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    psi_se: Option<Vec<Vec<f64>>>,
}

pub type StdErrors = (DVector<f64>, DMatrix<f64>);

pub fn moments_json(m: &Moments, se: Option<&StdErrors>) -> Result<Vec<u8>> {
    json_bytes(&MomentsOut {
        moments: m,
        gamma_se: se.map(|(g, _)| g.iter().copied().collect()),
        psi_se: se.map(|(_, p)| matrix_rows(p)),
    })
}

/// Long format: `quantity,i,j,value[,se]`; `j` is empty for `gamma`.
pub fn moments_csv(m: &Moments, se: Option<&StdErrors>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["quantity", "i", "j", "value"];
    if se.is_some() {
        header.push("se");
    }
    w.write_record(&header)?;
    for (i, v) in m.gamma.iter().enumerate() {
        let mut row = vec![
            "gamma".to_string(),
            i.to_string(),
            String::new(),
            fmt_f64(*v),
        ];
        if let Some((g, _)) = se {
            row.push(fmt_f64(g[i]));
        }
        w.write_record(&row)?;
    }
    for (name, mat) in [("second_moment", &m.second_moment), ("psi", &m.psi)] {
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                let mut row = vec![
                    name.to_string(),
                    i.to_string(),
                    j.to_string(),
                    fmt_f64(mat[(i, j)]),
                ];
                if let Some((_, p)) = se {
                    // standard errors are tracked for psi only
                    row.push(if name == "psi" {
                        fmt_f64(p[(i, j)])
                    } else {
                        String::new()
                    });
                }
                w.write_record(&row)?;
            }
        }
    }
    Ok(w.into_inner()?)
}

pub fn column_csv(name: &str, values: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([name])?;
    for v in values {
        w.write_record([fmt_f64(*v)])?;
    }
    Ok(w.into_inner()?)
}

/// Header `y0, y1, ...`, one draw per row.
pub fn points_csv(points: &[DVector<f64>]) -> Result<Vec<u8>> {
    let n = points.first().map_or(0, |p| p.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..n).map(|i| format!("y{i}")))?;
    for p in points {
        w.write_record(p.iter().map(|v| fmt_f64(*v)))?;
    }
    Ok(w.into_inner()?)
}

/// Destination for command output.
pub struct Output(Option<PathBuf>);

impl Output {
    pub fn new(path: Option<PathBuf>) -> Self {
        Self(path)
    }

    pub fn write(&self, bytes: &[u8]) -> Result<()> {
        match &self.0 {
            Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(bytes)?;
                Ok(stdout.flush()?)
            }
        }
    }
}
