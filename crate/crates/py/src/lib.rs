//! Python bindings for `vqi-core`.
//!
//! Structured results (fits, coverage, scans) cross the boundary as plain
//! dicts and lists with the same field names as the JSON the CLI writes.

use chrono::{DateTime, Utc};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyList;
use serde::Serialize;

use vqi_core::fringe::{self, CoverageReport, PeriodMode, SlidingScan};
use vqi_core::kinematics::{self, BaselineGeometry, RotationClock};
use vqi_core::metrology::{self, DispersionSpec, FiberPath, SiteCoordinates};
use vqi_core::photon_sim::{self, CoincidenceSeries, PhaseScan, SourceModel};
use vqi_core::relativity::{self, FrameVelocity, PrivilegedFrame, SpacetimeEvent};
use vqi_core::scan::{self, ScanRequest, Sweep, ViolationEvidence};
use vqi_core::Error;

create_exception!(vqi, PrerequisiteError, PyRuntimeError);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Prerequisite(_) => PrerequisiteError::new_err(e.to_string()),
        Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for vqi_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Serialize through JSON so Python sees the same shapes as the CLI output.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_instant(s: &str) -> PyResult<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| PyValueError::new_err(format!("invalid timestamp {s:?}: {e}")))
}

#[pyclass(name = "BaselineGeometry", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyGeometry(BaselineGeometry);

#[pymethods]
impl PyGeometry {
    #[new]
    fn new(r_ab: f64, alpha_deg: f64, rho_bar: f64) -> PyResult<Self> {
        BaselineGeometry::new(r_ab, alpha_deg, rho_bar).py().map(Self)
    }

    /// The 18 km Geneva baseline.
    #[staticmethod]
    fn geneva() -> Self {
        Self(BaselineGeometry::geneva())
    }

    /// Baseline between two sites given as `(lat_deg, lon_deg, alt_m)`.
    #[staticmethod]
    fn from_sites(a: (f64, f64, f64), b: (f64, f64, f64), rho_bar: f64) -> PyResult<Self> {
        let a = SiteCoordinates::new(a.0, a.1, a.2).py()?;
        let b = SiteCoordinates::new(b.0, b.1, b.2).py()?;
        metrology::baseline_from_sites(&a, &b)
            .and_then(|s| s.with_rho_bar(rho_bar))
            .py()
            .map(Self)
    }

    #[getter]
    fn r_ab(&self) -> f64 {
        self.0.r_ab()
    }

    #[getter]
    fn alpha_deg(&self) -> f64 {
        self.0.alpha_deg()
    }

    #[getter]
    fn rho_bar(&self) -> f64 {
        self.0.rho_bar()
    }

    fn __repr__(&self) -> String {
        format!(
            "BaselineGeometry(r_ab={}, alpha_deg={}, rho_bar={})",
            self.0.r_ab(),
            self.0.alpha_deg(),
            self.0.rho_bar()
        )
    }
}

#[pyclass(name = "PrivilegedFrame", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyFrame(PrivilegedFrame);

#[pymethods]
impl PyFrame {
    #[new]
    fn new(beta: f64, chi_deg: f64) -> PyResult<Self> {
        PrivilegedFrame::new(beta, chi_deg).py().map(Self)
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }

    #[getter]
    fn chi_deg(&self) -> f64 {
        self.0.chi_deg()
    }

    fn __repr__(&self) -> String {
        format!("PrivilegedFrame(beta={}, chi_deg={})", self.0.beta(), self.0.chi_deg())
    }
}

#[pyclass(name = "RotationClock", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyClock(RotationClock);

#[pymethods]
impl PyClock {
    /// Window length `window_t` in seconds; sidereal rotation by default.
    #[new]
    #[pyo3(signature = (window_t, omega = vqi_core::EARTH_OMEGA))]
    fn new(window_t: f64, omega: f64) -> PyResult<Self> {
        RotationClock::new(omega, window_t).py().map(Self)
    }

    #[getter]
    fn window_t(&self) -> f64 {
        self.0.window_t
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.0.omega
    }

    #[getter]
    fn c_t(&self) -> f64 {
        self.0.c_t()
    }

    fn __repr__(&self) -> String {
        format!("RotationClock(window_t={}, omega={})", self.0.window_t, self.0.omega)
    }
}

/// Binned coincidence counts of one run.
#[pyclass(name = "CoincidenceSeries", frozen)]
struct PySeries(CoincidenceSeries);

#[pymethods]
impl PySeries {
    #[staticmethod]
    #[pyo3(signature = (path, bin_width_hint = None))]
    fn read_csv(path: &str, bin_width_hint: Option<f64>) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| py_err(e.into()))?;
        CoincidenceSeries::read_csv(file, bin_width_hint)
            .map_err(|e| PyValueError::new_err(format!("{path}: {e}")))
            .map(Self)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| py_err(e.into()))?;
        self.0.write_csv(file).py()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn bin_width(&self) -> f64 {
        self.0.bin_width
    }

    #[getter]
    fn anchor(&self) -> String {
        self.0.anchor.to_rfc3339()
    }

    #[getter]
    fn start_s(&self) -> Vec<f64> {
        self.0.bins.iter().map(|b| b.start_s).collect()
    }

    #[getter]
    fn coincidences(&self) -> Vec<u64> {
        self.0.bins.iter().map(|b| b.coincidences).collect()
    }

    #[getter]
    fn singles_a(&self) -> Vec<u64> {
        self.0.bins.iter().map(|b| b.singles_a).collect()
    }

    #[getter]
    fn singles_b(&self) -> Vec<u64> {
        self.0.bins.iter().map(|b| b.singles_b).collect()
    }

    #[getter]
    fn scan_active(&self) -> Vec<bool> {
        self.0.bins.iter().map(|b| b.scan_active).collect()
    }
}

#[pyfunction]
fn vqi_bound_exact(rho: f64, beta: f64, beta_parallel: f64) -> PyResult<f64> {
    relativity::vqi_bound_exact(rho, beta, beta_parallel).py().map(|b| b.value())
}

#[pyfunction]
fn vqi_bound_worstcase(rho_bar: f64, beta: f64, beta_parallel_abs_bound: f64) -> PyResult<f64> {
    relativity::vqi_bound_worstcase(rho_bar, beta, beta_parallel_abs_bound)
        .py()
        .map(|b| b.value())
}

/// V_QI / c from two Earth-frame events `(position_m, time_s)` and the
/// Earth's velocity `beta` relative to the privileged frame.
#[pyfunction]
fn vqi_from_events(
    a: ([f64; 3], f64),
    b: ([f64; 3], f64),
    beta: [f64; 3],
) -> PyResult<f64> {
    let ea = SpacetimeEvent::new(a.0, a.1).py()?;
    let eb = SpacetimeEvent::new(b.0, b.1).py()?;
    let v = FrameVelocity::new(beta).py()?;
    relativity::vqi_from_events(&ea, &eb, &v).py().map(|b| b.value())
}

#[pyfunction]
fn beta_parallel_at(frame: PyFrame, geometry: PyGeometry, clock: PyClock, t: f64) -> f64 {
    kinematics::beta_parallel_at(&frame.0, &geometry.0, &clock.0, t)
}

/// `"i"` when `beta_par` can cross zero inside a window, `"ii"` otherwise.
#[pyfunction]
fn classify_case(frame: PyFrame, geometry: PyGeometry, clock: PyClock) -> &'static str {
    kinematics::classify_case(&frame.0, &geometry.0, &clock.0).tag()
}

#[pyfunction]
fn bound_beta_parallel<'py>(
    py: Python<'py>,
    frame: PyFrame,
    geometry: PyGeometry,
    clock: PyClock,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &kinematics::bound_beta_parallel(&frame.0, &geometry.0, &clock.0))
}

#[pyfunction]
#[pyo3(signature = (frame, geometry, clock, samples_per_period = 1_000_000))]
fn brute_force_window_bound(
    py: Python<'_>,
    frame: PyFrame,
    geometry: PyGeometry,
    clock: PyClock,
    samples_per_period: usize,
) -> PyResult<f64> {
    py.detach(|| {
        kinematics::brute_force_window_bound(&frame.0, &geometry.0, &clock.0, samples_per_period)
    })
    .py()
}

/// Alignment budget from fiber lengths (m), their uncertainties (m) and the
/// dispersion of the source (ps/(nm km), nm, km).
#[pyfunction]
#[pyo3(signature = (
    length_a, length_b, uncertainty_a, uncertainty_b,
    dispersion_coefficient, spectral_half_width_nm, fiber_length_km, r_ab,
    group_index = 1.468,
))]
#[allow(clippy::too_many_arguments)]
fn alignment_budget<'py>(
    py: Python<'py>,
    length_a: f64,
    length_b: f64,
    uncertainty_a: f64,
    uncertainty_b: f64,
    dispersion_coefficient: f64,
    spectral_half_width_nm: f64,
    fiber_length_km: f64,
    r_ab: f64,
    group_index: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let a = FiberPath::new(length_a, group_index, uncertainty_a).py()?;
    let b = FiberPath::new(length_b, group_index, uncertainty_b).py()?;
    let d = DispersionSpec::new(dispersion_coefficient, spectral_half_width_nm, fiber_length_km).py()?;
    to_py(py, &metrology::alignment_budget(&a, &b, &d, r_ab).py()?)
}

/// One simulated run. Source rates are per minute and default to the Geneva
/// source; `gaps` are `(start_s, end_s)` intervals with the scan halted.
#[pyfunction]
#[pyo3(signature = (
    duration_s, fringe_period_s, seed,
    bin_width_s = 60.0, initial_phase = 0.0, gaps = Vec::new(),
    start = "2008-06-01T00:00:00Z",
    true_coincidence_rate = 30.5, accidental_rate = 2.5, source_visibility = 0.948,
))]
#[allow(clippy::too_many_arguments)]
fn simulate_series(
    py: Python<'_>,
    duration_s: f64,
    fringe_period_s: f64,
    seed: u64,
    bin_width_s: f64,
    initial_phase: f64,
    gaps: Vec<(f64, f64)>,
    start: &str,
    true_coincidence_rate: f64,
    accidental_rate: f64,
    source_visibility: f64,
) -> PyResult<PySeries> {
    let geneva = SourceModel::geneva();
    let model = SourceModel::new(
        true_coincidence_rate,
        accidental_rate,
        source_visibility,
        geneva.singles_rate_a,
        geneva.singles_rate_b,
    )
    .py()?;
    let scan = PhaseScan::with_gaps(fringe_period_s, initial_phase, duration_s, &gaps).py()?;
    let anchor = parse_instant(start)?;
    py.detach(|| photon_sim::simulate_series(&model, &scan, duration_s, bin_width_s, anchor, seed))
        .py()
        .map(PySeries)
}

fn period_mode(period_s: f64, fit_period: bool) -> PeriodMode {
    if fit_period {
        PeriodMode::Fitted(period_s)
    } else {
        PeriodMode::Fixed(period_s)
    }
}

#[pyfunction]
#[pyo3(signature = (series, period_s, fit_period = false))]
fn fit_full_span<'py>(
    py: Python<'py>,
    series: &PySeries,
    period_s: f64,
    fit_period: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let fit = fringe::fit_full_span(&series.0, period_mode(period_s, fit_period));
    to_py(py, &fit)
}

/// Visibility after subtracting `accidentals_per_bin` from the fitted mean.
#[pyfunction]
fn net_visibility(fit: &Bound<'_, PyAny>, accidentals_per_bin: f64) -> PyResult<f64> {
    fringe::net_visibility(&from_py(fit)?, accidentals_per_bin).py()
}

#[pyfunction]
#[pyo3(signature = (
    series, period_s, window_length_s = None, step_s = None,
    threshold = vqi_core::CHSH_VISIBILITY_THRESHOLD, fit_period = false,
))]
fn sliding_scan<'py>(
    py: Python<'py>,
    series: &PySeries,
    period_s: f64,
    window_length_s: Option<f64>,
    step_s: Option<f64>,
    threshold: f64,
    fit_period: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = SlidingScan {
        period: period_mode(period_s, fit_period),
        window_length: window_length_s,
        step: step_s,
        threshold,
    };
    to_py(py, &fringe::sliding_scan(&series.0, &cfg).py()?)
}

/// Combine traces returned by [`sliding_scan`] into a day-coverage report.
#[pyfunction]
#[pyo3(signature = (traces, resolution_s = 300.0, required_multiplicity = 2))]
fn coverage_report<'py>(
    py: Python<'py>,
    traces: &Bound<'py, PyList>,
    resolution_s: f64,
    required_multiplicity: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let traces = traces
        .iter()
        .map(|t| from_py(&t))
        .collect::<PyResult<Vec<_>>>()?;
    to_py(py, &fringe::coverage_report(&traces, resolution_s, required_multiplicity).py()?)
}

/// Bounds are only meaningful once a Bell violation has been established:
/// pass either the coverage report of the data or `assume_violation=True`.
fn with_evidence<T>(
    coverage: Option<&Bound<'_, PyAny>>,
    assume_violation: bool,
    f: impl FnOnce(ViolationEvidence<'_>) -> vqi_core::Result<T>,
) -> PyResult<T> {
    match (coverage, assume_violation) {
        (Some(_), true) => Err(PyValueError::new_err(
            "pass either coverage or assume_violation, not both",
        )),
        (Some(c), false) => {
            let report: CoverageReport = from_py(c)?;
            f(ViolationEvidence::Coverage(&report)).py()
        }
        (None, true) => f(ViolationEvidence::Waived).py(),
        (None, false) => Err(PrerequisiteError::new_err(
            "no evidence of a Bell violation: pass coverage or assume_violation=True",
        )),
    }
}

fn curve<'py>(
    py: Python<'py>,
    req: ScanRequest,
    coverage: Option<&Bound<'py, PyAny>>,
    assume_violation: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let out = with_evidence(coverage, assume_violation, |ev| {
        py.detach(|| scan::run_scan(&req, ev))
    })?;
    to_py(py, &out)
}

#[pyfunction]
#[pyo3(signature = (
    geometry, clock, beta, points = scan::DEFAULT_CHI_POINTS,
    coverage = None, assume_violation = false, exact_rho = None,
))]
#[allow(clippy::too_many_arguments)]
fn chi_scan<'py>(
    py: Python<'py>,
    geometry: PyGeometry,
    clock: PyClock,
    beta: f64,
    points: usize,
    coverage: Option<&Bound<'py, PyAny>>,
    assume_violation: bool,
    exact_rho: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let sweep = Sweep::Chi {
        beta,
        start_deg: 0.0,
        end_deg: 180.0,
        points,
    };
    let req = ScanRequest {
        geometry: geometry.0,
        clock: clock.0,
        sweep,
        exact_rho,
    };
    curve(py, req, coverage, assume_violation)
}

#[pyfunction]
#[pyo3(signature = (
    geometry, clock, chi_deg, min = 1e-6, max = 1.0 - 1e-6, points = scan::DEFAULT_BETA_POINTS,
    coverage = None, assume_violation = false, exact_rho = None,
))]
#[allow(clippy::too_many_arguments)]
fn beta_scan<'py>(
    py: Python<'py>,
    geometry: PyGeometry,
    clock: PyClock,
    chi_deg: f64,
    min: f64,
    max: f64,
    points: usize,
    coverage: Option<&Bound<'py, PyAny>>,
    assume_violation: bool,
    exact_rho: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let sweep = Sweep::Beta {
        chi_deg,
        min,
        max,
        points,
    };
    let req = ScanRequest {
        geometry: geometry.0,
        clock: clock.0,
        sweep,
        exact_rho,
    };
    curve(py, req, coverage, assume_violation)
}

/// Least favourable `chi` at speed `beta`.
#[pyfunction]
#[pyo3(signature = (
    geometry, clock, beta, chi_points = scan::DEFAULT_CHI_POINTS,
    coverage = None, assume_violation = false,
))]
fn worst_case<'py>(
    py: Python<'py>,
    geometry: PyGeometry,
    clock: PyClock,
    beta: f64,
    chi_points: usize,
    coverage: Option<&Bound<'py, PyAny>>,
    assume_violation: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let report = with_evidence(coverage, assume_violation, |ev| {
        scan::worst_case_report(&geometry.0, &clock.0, beta, chi_points, ev)
    })?;
    to_py(py, &report)
}

#[pymodule]
fn vqi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SPEED_OF_LIGHT", vqi_core::SPEED_OF_LIGHT)?;
    m.add("SIDEREAL_DAY_S", vqi_core::SIDEREAL_DAY_S)?;
    m.add("EARTH_OMEGA", vqi_core::EARTH_OMEGA)?;
    m.add("CHSH_VISIBILITY_THRESHOLD", vqi_core::CHSH_VISIBILITY_THRESHOLD)?;
    m.add("PrerequisiteError", m.py().get_type::<PrerequisiteError>())?;
    m.add_class::<PyGeometry>()?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PyClock>()?;
    m.add_class::<PySeries>()?;
    m.add_function(wrap_pyfunction!(vqi_bound_exact, m)?)?;
    m.add_function(wrap_pyfunction!(vqi_bound_worstcase, m)?)?;
    m.add_function(wrap_pyfunction!(vqi_from_events, m)?)?;
    m.add_function(wrap_pyfunction!(beta_parallel_at, m)?)?;
    m.add_function(wrap_pyfunction!(classify_case, m)?)?;
    m.add_function(wrap_pyfunction!(bound_beta_parallel, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_window_bound, m)?)?;
    m.add_function(wrap_pyfunction!(alignment_budget, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_series, m)?)?;
    m.add_function(wrap_pyfunction!(fit_full_span, m)?)?;
    m.add_function(wrap_pyfunction!(net_visibility, m)?)?;
    m.add_function(wrap_pyfunction!(sliding_scan, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_report, m)?)?;
    m.add_function(wrap_pyfunction!(chi_scan, m)?)?;
    m.add_function(wrap_pyfunction!(beta_scan, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case, m)?)?;
    Ok(())
}
