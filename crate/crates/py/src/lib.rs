//! Python bindings: layouts, run configuration, trap analysis, Monte Carlo loading and decay fits.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use surftrap::cli_io::{self, CliError, LoaderArg, RunConfig, ShotSeries};
use surftrap::geometry::{default_layout, TrapLayout};
use surftrap::loading_mc::{self, with_workers, LoadResult};
use surftrap::trap_analysis::{analyze, DepthSearch, PseudoField, TrapAnalysis};

fn err(e: CliError) -> PyErr {
    match e {
        CliError::Config(_) => PyValueError::new_err(e.line()),
        _ => PyRuntimeError::new_err(e.line()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Electrode layout (polygons in metres).
#[pyclass(name = "Layout", module = "surftrap_py")]
struct PyLayout {
    inner: TrapLayout,
}

#[pymethods]
impl PyLayout {
    #[staticmethod]
    fn default() -> Self {
        Self { inner: default_layout() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        TrapLayout::from_json(text).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn names(&self) -> Vec<String> {
        self.inner.names().into_iter().map(String::from).collect()
    }

    /// Validation findings as strings; empty when the layout is valid.
    fn violations(&self) -> Vec<String> {
        self.inner.validate().iter().map(ToString::to_string).collect()
    }

    fn __repr__(&self) -> String {
        format!("Layout({:?}, {} electrodes)", self.inner.name, self.inner.electrodes.len())
    }
}

/// Run configuration, same schema as the CLI TOML file.
#[pyclass(name = "Config", module = "surftrap_py")]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => RunConfig::from_toml(t).map_err(err)?,
            None => RunConfig::default(),
        };
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn rf_amplitude(&self) -> f64 {
        self.inner.drive.rf_amplitude
    }

    #[setter]
    fn set_rf_amplitude(&mut self, v: f64) {
        self.inner.drive.rf_amplitude = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.load.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.load.seed = v;
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.load.trials
    }

    #[setter]
    fn set_trials(&mut self, v: usize) {
        self.inner.load.trials = v;
    }
}

#[pyclass(name = "Analysis", module = "surftrap_py", get_all)]
struct PyAnalysis {
    rf_amplitude: f64,
    minimum: [f64; 3],
    height: f64,
    depth_ev: f64,
    secular_hz: [f64; 3],
    mathieu_q: [f64; 3],
    stable: bool,
    escape: Option<[f64; 3]>,
}

impl PyAnalysis {
    fn new(a: &TrapAnalysis, rf_amplitude: f64) -> Self {
        Self {
            rf_amplitude,
            minimum: a.minimum_position,
            height: a.height(),
            depth_ev: a.depth_ev,
            secular_hz: a.secular.frequencies,
            mathieu_q: a.mathieu_q,
            stable: a.stable,
            escape: a.escape_position,
        }
    }
}

#[pymethods]
impl PyAnalysis {
    fn __repr__(&self) -> String {
        format!("Analysis(rf_amplitude={}, height={:.4e}, depth_ev={:.4})", self.rf_amplitude, self.height, self.depth_ev)
    }
}

/// Solved layout with its pseudopotential.
#[pyclass(name = "Trap", module = "surftrap_py")]
struct PyTrap {
    cfg: RunConfig,
    field: PseudoField,
}

#[pymethods]
impl PyTrap {
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<PyRef<'_, PyConfig>>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        let layout = cli_io::layout_for(&cfg).map_err(err)?;
        let (basis, _) = cli_io::basis_for(&cfg, &layout).map_err(err)?;
        let field = PseudoField::for_layout(&layout, &basis, &cfg.drive(), cfg.species().map_err(err)?).map_err(value_err)?;
        Ok(Self { cfg, field })
    }

    #[pyo3(signature = (rf_amplitude = None))]
    fn analyze(&self, rf_amplitude: Option<f64>) -> PyResult<PyAnalysis> {
        let v = rf_amplitude.unwrap_or(self.cfg.drive.rf_amplitude);
        let a = analyze(&self.field.with_rf_amplitude(v), self.cfg.analysis.guess, &DepthSearch::default()).map_err(value_err)?;
        Ok(PyAnalysis::new(&a, v))
    }

    /// Pseudopotential in eV at a point, metres.
    fn pseudopotential_ev(&self, x: f64, y: f64, z: f64) -> f64 {
        self.field.psi_ev([x, y, z])
    }
}

#[pyclass(name = "LoadResult", module = "surftrap_py")]
struct PyLoadResult {
    inner: LoadResult,
}

#[pymethods]
impl PyLoadResult {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        LoadResult::from_csv(text).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv("")
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    /// `(rf_amplitude, depth_ev, trials, captured, p_hat, ci_lo, ci_hi)` per depth.
    fn rows(&self) -> Vec<(f64, f64, u64, u64, f64, f64, f64)> {
        self.inner
            .rows
            .iter()
            .map(|r| {
                let (lo, hi) = r.ci();
                (r.rf_amplitude, r.depth_ev, r.trials, r.captured, r.p_hat(), lo, hi)
            })
            .collect()
    }

    fn min_loadable_depth(&self, p_min: f64) -> Option<f64> {
        loading_mc::min_loadable_depth(&self.inner, p_min)
    }
}

/// Monte Carlo loading table for `kind` = "ablation" or "eimpact".
#[pyfunction]
#[pyo3(signature = (config, kind, workers = None))]
fn load(config: &PyConfig, kind: &str, workers: Option<usize>) -> PyResult<PyLoadResult> {
    let k = match kind {
        "ablation" => LoaderArg::Ablation,
        "eimpact" => LoaderArg::Eimpact,
        _ => return Err(PyValueError::new_err(format!("kind must be 'ablation' or 'eimpact', got '{kind}'"))),
    };
    let inner = with_workers(workers, || cli_io::run_load(&config.inner, k)).map_err(err)?;
    Ok(PyLoadResult { inner })
}

#[pyfunction]
fn threshold_ratio(ablation: &PyLoadResult, eimpact: &PyLoadResult, p_min: f64) -> PyResult<f64> {
    loading_mc::threshold_ratio(&ablation.inner, &eimpact.inner, p_min).map_err(value_err)
}

#[pyclass(name = "DecayFit", module = "surftrap_py", get_all)]
struct PyDecayFit {
    amplitude: f64,
    durability: f64,
    baseline: f64,
    residual_rms: f64,
    non_decaying: bool,
}

#[pymethods]
impl PyDecayFit {
    fn __repr__(&self) -> String {
        format!("DecayFit(amplitude={}, durability={}, baseline={})", self.amplitude, self.durability, self.baseline)
    }
}

/// Fits `A exp(-n / n0) + C` to a signal per shot.
#[pyfunction]
#[pyo3(signature = (shots, signal, label = ""))]
fn fit_decay(shots: Vec<u64>, signal: Vec<f64>, label: &str) -> PyResult<PyDecayFit> {
    let s = ShotSeries::new(label, shots, signal).map_err(value_err)?;
    let f = cli_io::fit_target_decay(&s).map_err(value_err)?;
    Ok(PyDecayFit { amplitude: f.amplitude, durability: f.durability, baseline: f.baseline, residual_rms: f.residual_rms, non_decaying: f.non_decaying })
}

#[pymodule]
fn surftrap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLayout>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrap>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_class::<PyLoadResult>()?;
    m.add_class::<PyDecayFit>()?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay, m)?)?;
    Ok(())
}
