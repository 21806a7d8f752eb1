//! Python bindings. Vectors are lists of floats and matrices are lists of
//! rows; library errors surface as `ValueError`.

use nalgebra::{DMatrix, DVector};
use projected_normal::density::{pn_logpdf, pnbc_logpdf, pnc_logpdf};
use projected_normal::experiment;
use projected_normal::fit::{self, BMode, FitConfig, FitProblem, SigmaMode};
use projected_normal::sampling::{self, RngHandle};
use projected_normal::{exact, moments, VariantKind};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(err("matrix rows have unequal lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |i, j| rows[i][j]))
}

fn list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Latent Gaussian `x ~ N(mu, sigma)`.
#[pyclass(name = "GaussianParams", module = "projected_normal_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGaussianParams(projected_normal::GaussianParams);

#[pymethods]
impl PyGaussianParams {
    #[new]
    fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> PyResult<Self> {
        projected_normal::GaussianParams::new(vector(mu), matrix(sigma)?)
            .map(Self)
            .map_err(err)
    }

    /// `sigma2 * I` covariance.
    #[staticmethod]
    fn isotropic(mu: Vec<f64>, sigma2: f64) -> PyResult<Self> {
        projected_normal::GaussianParams::isotropic(vector(mu), sigma2)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        list(self.0.mu())
    }

    #[getter]
    fn sigma(&self) -> Vec<Vec<f64>> {
        rows(self.0.sigma())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __repr__(&self) -> String {
        format!("GaussianParams(dim={})", self.0.dim())
    }
}

/// Denominator `sqrt(x'Bx + c)`; `b=None` means the identity.
#[pyclass(name = "ProjectionVariant", module = "projected_normal_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyVariant(projected_normal::ProjectionVariant);

#[pymethods]
impl PyVariant {
    #[new]
    #[pyo3(signature = (b=None, c=0.0))]
    fn new(b: Option<Vec<Vec<f64>>>, c: f64) -> PyResult<Self> {
        let b = b.map(matrix).transpose()?;
        projected_normal::ProjectionVariant::new(b, c)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn b(&self) -> Option<Vec<Vec<f64>>> {
        self.0.b().map(rows)
    }

    #[getter]
    fn c(&self) -> f64 {
        self.0.c()
    }

    /// One of `pn`, `pnc`, `pnb`, `pnbc`.
    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().as_str()
    }

    fn __repr__(&self) -> String {
        format!("ProjectionVariant(kind={})", self.0.kind())
    }
}

#[pyclass(name = "Moments", module = "projected_normal_py", frozen)]
struct PyMoments(projected_normal::Moments);

#[pymethods]
impl PyMoments {
    #[getter]
    fn gamma(&self) -> Vec<f64> {
        list(&self.0.gamma)
    }

    #[getter]
    fn second_moment(&self) -> Vec<Vec<f64>> {
        rows(&self.0.second_moment)
    }

    #[getter]
    fn psi(&self) -> Vec<Vec<f64>> {
        rows(&self.0.psi)
    }
}

#[pyclass(name = "FitResult", module = "projected_normal_py", frozen)]
struct PyFitResult(fit::FitResult);

#[pymethods]
impl PyFitResult {
    #[getter]
    fn params_hat(&self) -> PyGaussianParams {
        PyGaussianParams(self.0.params_hat.clone())
    }

    #[getter]
    fn variant_hat(&self) -> PyVariant {
        PyVariant(self.0.variant_hat.clone())
    }

    /// `(b, v)` of a rank-1 `B = I + b v v'`, else `None`.
    #[getter]
    fn rank1_hat(&self) -> Option<(f64, Vec<f64>)> {
        self.0.rank1_hat.as_ref().map(|r| (r.b, r.v.clone()))
    }

    #[getter]
    fn final_loss(&self) -> f64 {
        self.0.final_loss
    }

    #[getter]
    fn loss_trace(&self) -> Vec<f64> {
        self.0.loss_trace.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }
}

fn variant_or_pn(variant: Option<&PyVariant>) -> projected_normal::ProjectionVariant {
    variant.map_or_else(projected_normal::ProjectionVariant::pn, |v| v.0.clone())
}

/// Taylor approximation of the moments.
#[pyfunction]
#[pyo3(signature = (params, variant=None))]
fn approx_moments(params: &PyGaussianParams, variant: Option<&PyVariant>) -> PyResult<PyMoments> {
    moments::approx_moments(&params.0, &variant_or_pn(variant))
        .map(PyMoments)
        .map_err(err)
}

/// Exact moments for `Sigma = sigma2 * I` and no denominator terms.
#[pyfunction]
fn exact_moments_isotropic(mu: Vec<f64>, sigma2: f64) -> PyResult<PyMoments> {
    exact::exact_moments_isotropic(&vector(mu), sigma2)
        .map(PyMoments)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (params, variant=None, samples=100_000, seed=0))]
fn mc_moments(
    py: Python<'_>,
    params: &PyGaussianParams,
    variant: Option<&PyVariant>,
    samples: usize,
    seed: u64,
) -> PyResult<PyMoments> {
    let v = variant_or_pn(variant);
    py.detach(|| sampling::mc_moments(&params.0, &v, samples, &mut RngHandle::new(seed)))
        .map(PyMoments)
        .map_err(err)
}

/// Draws `count` projected samples, one list per draw.
#[pyfunction]
#[pyo3(signature = (params, variant=None, count=1000, seed=0))]
fn sample(
    params: &PyGaussianParams,
    variant: Option<&PyVariant>,
    count: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let v = variant_or_pn(variant);
    let x = sampling::sample_gaussian(&params.0, count, &mut RngHandle::new(seed)).map_err(err)?;
    x.row_iter()
        .map(|r| {
            let y = sampling::project(&r.transpose(), &v).map_err(err)?;
            Ok(list(&y))
        })
        .collect()
}

/// Log-density at `y`; not available for the `pnb` variant.
#[pyfunction]
#[pyo3(signature = (y, params, variant=None))]
fn logpdf(y: Vec<f64>, params: &PyGaussianParams, variant: Option<&PyVariant>) -> PyResult<f64> {
    let v = variant_or_pn(variant);
    let y = vector(y);
    match v.kind() {
        VariantKind::Pn => pn_logpdf(&y, &params.0),
        VariantKind::PnC => pnc_logpdf(&y, &params.0, v.c()),
        VariantKind::PnBc => pnbc_logpdf(&y, &params.0, &v),
        VariantKind::PnB => return Err(err("no density is available for variant pnb")),
    }
    .map_err(err)
}

fn parse<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(err)
}

/// Moment-matching fit. `config` is a JSON object with optimizer settings.
#[pyfunction]
#[pyo3(signature = (
    observed_gamma,
    observed_psi,
    variant_kind="pn",
    constraint_mode="full_sigma",
    b_mode="none",
    lam=0.9,
    config=None,
))]
#[allow(clippy::too_many_arguments)]
fn fit_moments(
    py: Python<'_>,
    observed_gamma: Vec<f64>,
    observed_psi: Vec<Vec<f64>>,
    variant_kind: &str,
    constraint_mode: &str,
    b_mode: &str,
    lam: f64,
    config: Option<&str>,
) -> PyResult<PyFitResult> {
    let problem = FitProblem::new(
        vector(observed_gamma),
        matrix(observed_psi)?,
        variant_kind.parse::<VariantKind>().map_err(err)?,
        parse::<SigmaMode>(constraint_mode)?,
        parse::<BMode>(b_mode)?,
        lam,
    )
    .map_err(err)?;
    let config: FitConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(err)?,
        None => FitConfig::default(),
    };
    py.detach(|| fit::fit(&problem, &config))
        .map(PyFitResult)
        .map_err(err)
}

/// `100 ||est - truth||^2 / ||truth||^2`, flattened inputs.
#[pyfunction]
fn rel_error_pct(estimate: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    experiment::rel_error_pct(&estimate, &truth).map_err(err)
}

#[pyfunction]
fn cosine_sim(estimate: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    experiment::cosine_sim(&estimate, &truth).map_err(err)
}

#[pymodule]
fn projected_normal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGaussianParams>()?;
    m.add_class::<PyVariant>()?;
    m.add_class::<PyMoments>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(approx_moments, m)?)?;
    m.add_function(wrap_pyfunction!(exact_moments_isotropic, m)?)?;
    m.add_function(wrap_pyfunction!(mc_moments, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(fit_moments, m)?)?;
    m.add_function(wrap_pyfunction!(rel_error_pct, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_sim, m)?)?;
    Ok(())
}
