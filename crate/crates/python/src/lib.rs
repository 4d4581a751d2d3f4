//! Python bindings for the `levelset` crate.
//!
//! Long-running calls release the interpreter lock while they work. Errors
//! from the core surface as `ValueError` for bad arguments and `RuntimeError`
//! for everything else.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use levelset::cli;
use levelset::critical::{self, CriticalSearchConfig};
use levelset::entropy::{self, DensityOfStatesTable, DerivativeEstimate, GridSpec, LegendreTable};
use levelset::moments::{self, BaseDistribution, Coupling};
use levelset::sampler::ShellSamplerConfig;
use levelset::{Error, PotentialModel};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. } | Error::DimensionMismatch { .. } | Error::IndexOutOfRange { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A lattice potential.
#[pyclass(name = "Model", module = "levelset_py", frozen)]
struct PyModel {
    inner: PotentialModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn harmonic(n: usize) -> Self {
        Self {
            inner: PotentialModel::harmonic(n),
        }
    }

    #[staticmethod]
    fn coupled_rotators(n: usize) -> Self {
        Self {
            inner: PotentialModel::coupled_rotators(n),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (n, lam = 0.1))]
    fn fpu(n: usize, lam: f64) -> Self {
        Self {
            inner: PotentialModel::fpu(n, lam),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (n, r = -1.0, u = 1.0))]
    fn phi4(n: usize, r: f64, u: f64) -> Self {
        Self {
            inner: PotentialModel::phi4(n, r, u),
        }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    fn energy(&self, q: Vec<f64>) -> PyResult<f64> {
        self.inner.evaluate(&q).map_err(to_py)
    }

    fn gradient(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.gradient(&q).map_err(to_py)
    }

    /// Dense Hessian as a list of rows.
    fn hessian(&self, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let h = self.inner.hessian(&q).map_err(to_py)?.to_dense();
        Ok(h.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    fn energy_range(&self) -> (f64, f64) {
        self.inner.energy_range()
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, n={})", self.inner.kind().name(), self.inner.n())
    }
}

/// One entropy-derivative estimate.
#[pyclass(name = "Estimate", module = "levelset_py", frozen, get_all)]
struct PyEstimate {
    order: usize,
    value: f64,
    stderr: f64,
    samples: usize,
    flags: Vec<String>,
}

impl From<DerivativeEstimate> for PyEstimate {
    fn from(e: DerivativeEstimate) -> Self {
        Self {
            order: e.order,
            value: e.value,
            stderr: e.stderr,
            samples: e.samples,
            flags: e.flags,
        }
    }
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!("Estimate(order={}, value={}, stderr={})", self.order, self.value, self.stderr)
    }
}

/// ∂^k S_N/∂v̄^k for k = 1..k_max from one level-set sample. With
/// `paired=True` each value is extrapolated from runs at ε and ε/2.
#[pyfunction]
#[pyo3(signature = (model, vbar, k_max = 2, n_steps = 20_000, burn_in = 2_000, n_chains = 4, seed = 0, paired = false))]
#[allow(clippy::too_many_arguments)]
fn entropy_derivatives(
    py: Python<'_>,
    model: &PyModel,
    vbar: f64,
    k_max: usize,
    n_steps: usize,
    burn_in: usize,
    n_chains: usize,
    seed: u64,
    paired: bool,
) -> PyResult<Vec<PyEstimate>> {
    let m = &model.inner;
    let cfg = ShellSamplerConfig {
        n_steps,
        burn_in,
        n_chains,
        seed,
        order: k_max,
        ..ShellSamplerConfig::new(m.n() as f64 * vbar)
    };
    py.detach(|| {
        if paired {
            entropy::entropy_derivatives_paired(m, vbar, k_max, &cfg).map(|v| {
                v.into_iter()
                    .map(|p| PyEstimate {
                        order: p.order,
                        value: p.value,
                        stderr: p.stderr,
                        samples: p.raw.0.samples + p.raw.1.samples,
                        flags: p.flags,
                    })
                    .collect()
            })
        } else {
            entropy::entropy_derivatives(m, vbar, k_max, &cfg).map(|v| v.into_iter().map(Into::into).collect())
        }
    })
    .map_err(to_py)
}

/// Closed-form ∂^k S_N/∂v̄^k of the harmonic model.
#[pyfunction]
fn harmonic_entropy_derivative(n: usize, vbar: f64, k: usize) -> f64 {
    entropy::harmonic::entropy_derivative(n, vbar, k)
}

#[pyclass(name = "CriticalPoint", module = "levelset_py", frozen, get_all)]
struct PyCriticalPoint {
    q: Vec<f64>,
    v_c: f64,
    vbar_c: f64,
    morse_index: usize,
    degenerate: bool,
    multiplicity: usize,
    structured_family: bool,
}

#[pymethods]
impl PyCriticalPoint {
    fn __repr__(&self) -> String {
        format!(
            "CriticalPoint(v_c={}, morse_index={}, degenerate={})",
            self.v_c, self.morse_index, self.degenerate
        )
    }
}

/// Critical points of V from structured and random Newton seeds.
#[pyfunction]
#[pyo3(signature = (model, random_seeds = 10_000, seed = 0))]
fn find_critical_points(
    py: Python<'_>,
    model: &PyModel,
    random_seeds: usize,
    seed: u64,
) -> PyResult<Vec<PyCriticalPoint>> {
    let cfg = CriticalSearchConfig {
        random_seeds,
        seed,
        ..Default::default()
    };
    let found = py
        .detach(|| critical::find_critical_points(&model.inner, None, &cfg))
        .map_err(to_py)?;
    Ok(found
        .points
        .into_iter()
        .map(|p| PyCriticalPoint {
            q: p.q.to_vec(),
            v_c: p.v_c,
            vbar_c: p.vbar_c,
            morse_index: p.morse_index,
            degenerate: p.degenerate,
            multiplicity: p.multiplicity,
            structured_family: p.structured_family,
        })
        .collect())
}

/// Brute-force density of states on a configuration-space grid.
#[pyclass(name = "DensityOfStates", module = "levelset_py", frozen)]
struct PyDensityOfStates {
    inner: DensityOfStatesTable,
}

#[pymethods]
impl PyDensityOfStates {
    fn centers(&self) -> Vec<f64> {
        self.inner.centers()
    }

    #[getter]
    fn omega(&self) -> Vec<f64> {
        self.inner.omega.clone()
    }

    /// Grid estimate of ∂^k S/∂v̄^k as (value, error). The kernel bandwidth
    /// defaults to the widest one that fits the table around v̄.
    #[pyo3(signature = (vbar, k, h = None, step = 0.01))]
    fn entropy_derivative(&self, vbar: f64, k: usize, h: Option<f64>, step: f64) -> PyResult<(f64, f64)> {
        let h = h.unwrap_or_else(|| self.inner.fitting_bandwidth(vbar, k, step, 0.04));
        let d = self.inner.entropy_derivative(vbar, k, h, step).map_err(to_py)?;
        Ok((d.value, d.error))
    }
}

/// Tabulate Ω(v) on a uniform grid: the torus for angular models, the cube
/// [−half_width, half_width]^N otherwise.
#[pyfunction]
#[pyo3(signature = (model, points_per_axis, v_min, v_max, bins, half_width = None))]
fn oracle_density_of_states(
    py: Python<'_>,
    model: &PyModel,
    points_per_axis: usize,
    v_min: f64,
    v_max: f64,
    bins: usize,
    half_width: Option<f64>,
) -> PyResult<PyDensityOfStates> {
    let m = &model.inner;
    let spec = if m.is_angular() {
        GridSpec::torus(m.n(), points_per_axis, v_min, v_max, bins)
    } else {
        let w = half_width.ok_or_else(|| PyValueError::new_err("half_width is required for non-angular models"))?;
        GridSpec::cube(m.n(), w, points_per_axis, v_min, v_max, bins)
    };
    let inner = py.detach(|| entropy::oracle_density_of_states(m, &spec)).map_err(to_py)?;
    Ok(PyDensityOfStates { inner })
}

/// Discrete Legendre transform f(β) = inf_v̄ [β v̄ − s(v̄)].
#[pyclass(name = "Legendre", module = "levelset_py", frozen)]
struct PyLegendre {
    inner: LegendreTable,
}

#[pymethods]
impl PyLegendre {
    fn eval(&self, beta: f64) -> f64 {
        self.inner.eval(beta)
    }

    /// Double conjugate evaluated at v̄.
    fn inverse(&self, vbar: f64) -> f64 {
        self.inner.inverse(vbar)
    }

    #[getter]
    fn concave(&self) -> bool {
        self.inner.concave
    }
}

#[pyfunction]
fn legendre(vbar: Vec<f64>, s: Vec<f64>) -> PyResult<PyLegendre> {
    Ok(PyLegendre {
        inner: entropy::legendre(&vbar, &s).map_err(to_py)?,
    })
}

#[pyfunction]
fn helmholtz(f: f64, beta: f64) -> PyResult<f64> {
    entropy::helmholtz(f, beta).map_err(to_py)
}

fn parse_base(base: &Bound<'_, PyDict>) -> PyResult<BaseDistribution> {
    let get = |key: &str| -> PyResult<f64> {
        base.get_item(key)?
            .ok_or_else(|| PyValueError::new_err(format!("base distribution needs `{key}`")))?
            .extract()
    };
    let kind: String = base
        .get_item("kind")?
        .ok_or_else(|| PyValueError::new_err("base distribution needs `kind`"))?
        .extract()?;
    let d = match kind.as_str() {
        "uniform" => BaseDistribution::Uniform {
            lo: get("lo")?,
            hi: get("hi")?,
        },
        "gaussian" => BaseDistribution::Gaussian {
            mean: get("mean")?,
            std: get("std")?,
        },
        "exponential" => BaseDistribution::Exponential { rate: get("rate")? },
        "constant" => BaseDistribution::Constant { value: get("value")? },
        other => return Err(PyValueError::new_err(format!("unknown base kind `{other}`"))),
    };
    d.validate().map_err(to_py)?;
    Ok(d)
}

/// Moments of the mean of N i.i.d. draws across a ladder of N. Returns a
/// list of dicts, one per rung.
#[pyfunction]
#[pyo3(signature = (base, ladder, trials = 100_000, seed = 0))]
fn sum_function_moments<'py>(
    py: Python<'py>,
    base: &Bound<'py, PyDict>,
    ladder: Vec<usize>,
    trials: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let base = parse_base(base)?;
    let report = py
        .detach(|| moments::sum_function_moments(&base, &ladder, trials, seed))
        .map_err(to_py)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("n", r.n)?;
            d.set_item("b", r.b)?;
            d.set_item("c", r.c)?;
            d.set_item("d", r.d)?;
            d.set_item("k", r.k)?;
            d.set_item("nb", r.nb)?;
            d.set_item("n2c", r.n2c)?;
            d.set_item("n3k", r.n3k)?;
            d.set_item("nb_err", r.nb_err)?;
            d.set_item("n2c_err", r.n2c_err)?;
            d.set_item("n3k_err", r.n3k_err)?;
            d.set_item("ks", r.ks)?;
            Ok(d)
        })
        .collect()
}

/// ⟨X/Y⟩ − ⟨X⟩/⟨Y⟩ for sum variables over a ladder of N. Returns the rows
/// as (n, gap, gap_err) and the fitted exponent (None when unresolved).
#[pyfunction]
#[pyo3(signature = (x, y, ladder, trials = 100_000, seed = 0, identical = false))]
#[allow(clippy::type_complexity)]
fn ratio_average_check(
    py: Python<'_>,
    x: &Bound<'_, PyDict>,
    y: &Bound<'_, PyDict>,
    ladder: Vec<usize>,
    trials: usize,
    seed: u64,
    identical: bool,
) -> PyResult<(Vec<(usize, f64, f64)>, Option<f64>)> {
    let (x, y) = (parse_base(x)?, parse_base(y)?);
    let coupling = if identical {
        Coupling::Identical
    } else {
        Coupling::Independent
    };
    let r = py
        .detach(|| moments::ratio_average_check(&x, &y, coupling, &ladder, trials, seed))
        .map_err(to_py)?;
    Ok((
        r.rows.iter().map(|g| (g.n, g.gap, g.gap_err)).collect(),
        r.exponent.map(|f| f.slope),
    ))
}

/// Run one experiment from TOML text into `out_dir`. Returns the exit code
/// and the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (config, out_dir, threads = 1))]
fn run_experiment(py: Python<'_>, config: &str, out_dir: PathBuf, threads: usize) -> PyResult<(i32, String)> {
    let cfg = cli::parse_config(config).map_err(to_py)?;
    let outcome = py.detach(|| cli::run(&cfg, &out_dir, threads)).map_err(to_py)?;
    let manifest = serde_json::to_string(&outcome.manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((outcome.exit_code, manifest))
}

#[pymodule]
fn levelset_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyCriticalPoint>()?;
    m.add_class::<PyDensityOfStates>()?;
    m.add_class::<PyLegendre>()?;
    m.add_function(wrap_pyfunction!(entropy_derivatives, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_entropy_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(find_critical_points, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_density_of_states, m)?)?;
    m.add_function(wrap_pyfunction!(legendre, m)?)?;
    m.add_function(wrap_pyfunction!(helmholtz, m)?)?;
    m.add_function(wrap_pyfunction!(sum_function_moments, m)?)?;
    m.add_function(wrap_pyfunction!(ratio_average_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
