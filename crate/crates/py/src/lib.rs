//! Python bindings: price series ingestion, Markov training, value-function
//! computation and backtesting, mirroring the CLI pipeline.
//!
//! Timestamps cross the boundary as naive ISO-8601 strings
//! (`YYYY-MM-DDTHH:MM`); efficiency curves as dicts like
//! `{"kind": "constant", "value": 0.9}` or
//! `{"kind": "step", "breaks": [0.2, 0.9], "values": [0.8, 0.9, 0.7]}`.

use chrono::{NaiveDate, NaiveDateTime};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use esarb_core::markov::{train_transitions, GridKind, NodeGrid, TransitionModel};
use esarb_core::pricedata::{self, CalendarScheme, PriceSeries};
use esarb_core::simulate::{self, SimOptions, SimOutput};
use esarb_core::storage::{EfficiencyCurve, StorageSpec};
use esarb_core::valuation::{backward_pass, DayChain, ValueCube};

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M";

fn to_py_err(err: esarb_core::Error) -> PyErr {
    if err.is_validation() {
        PyValueError::new_err(err.to_string())
    } else {
        PyIOError::new_err(err.to_string())
    }
}

fn parse_ts(s: &str) -> PyResult<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TS_FORMAT)
        .map_err(|e| PyValueError::new_err(format!("bad timestamp `{s}`: {e}")))
}

fn parse_date(s: &str) -> PyResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| PyValueError::new_err(format!("bad date `{s}`: {e}")))
}

fn parse_grid_kind(s: &str) -> PyResult<GridKind> {
    match s {
        "rtp" => Ok(GridKind::Rtp),
        "bias" => Ok(GridKind::Bias),
        other => Err(PyValueError::new_err(format!("unknown grid kind `{other}`"))),
    }
}

fn parse_scheme(s: &str) -> PyResult<CalendarScheme> {
    match s {
        "none" => Ok(CalendarScheme::None),
        "seasonal" => Ok(CalendarScheme::Seasonal),
        "weekly" => Ok(CalendarScheme::Weekly),
        other => Err(PyValueError::new_err(format!("unknown scheme `{other}`"))),
    }
}

fn parse_efficiency(d: &Bound<'_, PyDict>) -> PyResult<EfficiencyCurve> {
    let kind: String = d
        .get_item("kind")?
        .ok_or_else(|| PyValueError::new_err("efficiency dict needs a `kind`"))?
        .extract()?;
    let curve = match kind.as_str() {
        "constant" => {
            let value: f64 = d
                .get_item("value")?
                .ok_or_else(|| PyValueError::new_err("constant efficiency needs `value`"))?
                .extract()?;
            EfficiencyCurve::Constant { value }
        }
        "affine" => {
            let slope: f64 = d
                .get_item("slope")?
                .ok_or_else(|| PyValueError::new_err("affine efficiency needs `slope`"))?
                .extract()?;
            let intercept: f64 = d
                .get_item("intercept")?
                .ok_or_else(|| PyValueError::new_err("affine efficiency needs `intercept`"))?
                .extract()?;
            EfficiencyCurve::Affine { slope, intercept }
        }
        "step" => {
            let breaks: Vec<f64> = d
                .get_item("breaks")?
                .ok_or_else(|| PyValueError::new_err("step efficiency needs `breaks`"))?
                .extract()?;
            let values: Vec<f64> = d
                .get_item("values")?
                .ok_or_else(|| PyValueError::new_err("step efficiency needs `values`"))?
                .extract()?;
            EfficiencyCurve::Step { breaks, values }
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown efficiency kind `{other}`"
            )))
        }
    };
    curve.validate().map_err(to_py_err)?;
    Ok(curve)
}

/// Timestamped prices on a fixed 5- or 60-minute lattice.
#[pyclass(name = "PriceSeries")]
struct PyPriceSeries {
    inner: PriceSeries,
}

#[pymethods]
impl PyPriceSeries {
    /// Build from (timestamp, price) pairs.
    #[new]
    fn new(zone: &str, interval_min: u32, points: Vec<(String, f64)>) -> PyResult<Self> {
        let parsed: PyResult<Vec<(NaiveDateTime, f64)>> = points
            .into_iter()
            .map(|(ts, p)| Ok((parse_ts(&ts)?, p)))
            .collect();
        Ok(Self {
            inner: PriceSeries::new(zone, interval_min, parsed?).map_err(to_py_err)?,
        })
    }

    /// Load the canonical `timestamp,price` CSV.
    #[staticmethod]
    fn load_csv(path: &str, interval_min: u32, zone: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PriceSeries::load_csv_path(path, interval_min, zone).map_err(to_py_err)?,
        })
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.inner
            .save_csv(std::io::BufWriter::new(file))
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn zone(&self) -> String {
        self.inner.zone().to_string()
    }

    #[getter]
    fn interval_min(&self) -> u32 {
        self.inner.interval_min()
    }

    fn n_observed(&self) -> usize {
        self.inner.n_observed()
    }

    fn mean(&self) -> f64 {
        self.inner.observed_mean()
    }

    fn std(&self) -> f64 {
        self.inner.observed_std()
    }

    fn points(&self) -> Vec<(String, f64)> {
        self.inner
            .observed()
            .map(|(ts, p)| (ts.format(TS_FORMAT).to_string(), p))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n_observed()
    }

    fn __repr__(&self) -> String {
        format!(
            "PriceSeries(zone='{}', interval={}min, observed={})",
            self.inner.zone(),
            self.inner.interval_min(),
            self.inner.n_observed()
        )
    }
}

/// RTP minus the containing hour's DAP, on the RTP lattice.
#[pyfunction]
fn compute_bias(rtp: &PyPriceSeries, dap: &PyPriceSeries) -> PyResult<PyPriceSeries> {
    Ok(PyPriceSeries {
        inner: pricedata::compute_bias(&rtp.inner, &dap.inner)
            .map_err(to_py_err)?
            .into_series(),
    })
}

/// Replicate an hourly series onto the 5-minute lattice.
#[pyfunction]
fn broadcast_dap(dap: &PyPriceSeries) -> PyResult<PyPriceSeries> {
    Ok(PyPriceSeries {
        inner: pricedata::broadcast_dap(&dap.inner).map_err(to_py_err)?,
    })
}

/// Battery ratings; power is a MW rating converted to MWh per interval.
#[pyclass(name = "StorageSpec")]
struct PyStorageSpec {
    inner: StorageSpec,
}

#[pymethods]
impl PyStorageSpec {
    #[new]
    #[pyo3(signature = (p_mw, e_mwh, cost_per_mwh, efficiency, e_f_mwh=0.0, interval_min=5, efficiency_discharge=None))]
    fn new(
        p_mw: f64,
        e_mwh: f64,
        cost_per_mwh: f64,
        efficiency: &Bound<'_, PyDict>,
        e_f_mwh: f64,
        interval_min: u32,
        efficiency_discharge: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let eta_charge = parse_efficiency(efficiency)?;
        let eta_discharge = match efficiency_discharge {
            Some(d) => parse_efficiency(d)?,
            None => eta_charge.clone(),
        };
        let spec = StorageSpec {
            power: p_mw * f64::from(interval_min) / 60.0,
            capacity: e_mwh,
            marginal_cost: cost_per_mwh,
            terminal_floor: e_f_mwh,
            eta_charge,
            eta_discharge,
            interval_min,
        };
        spec.validate().map_err(to_py_err)?;
        Ok(Self { inner: spec })
    }

    #[getter]
    fn capacity(&self) -> f64 {
        self.inner.capacity
    }

    /// MWh per dispatch interval.
    #[getter]
    fn power_per_interval(&self) -> f64 {
        self.inner.power
    }

    fn __repr__(&self) -> String {
        format!(
            "StorageSpec(P={:.4} MWh/interval, E={} MWh, c={}, e_f={})",
            self.inner.power,
            self.inner.capacity,
            self.inner.marginal_cost,
            self.inner.terminal_floor
        )
    }
}

/// Hourly Markov transition model over a price-node grid.
#[pyclass(name = "TransitionModel")]
struct PyTransitionModel {
    inner: TransitionModel,
}

#[pymethods]
impl PyTransitionModel {
    /// Discretize the training series and estimate hourly transitions.
    #[staticmethod]
    #[pyo3(signature = (training, kind, interior, low, high, scheme="none", stage_independent=false))]
    fn train(
        training: &PyPriceSeries,
        kind: &str,
        interior: usize,
        low: f64,
        high: f64,
        scheme: &str,
        stage_independent: bool,
    ) -> PyResult<Self> {
        let grid = NodeGrid::build(parse_grid_kind(kind)?, interior, low, high, &training.inner)
            .map_err(to_py_err)?;
        let model = train_transitions(
            &training.inner,
            grid,
            parse_scheme(scheme)?,
            stage_independent,
        )
        .map_err(to_py_err)?;
        Ok(Self { inner: model })
    }

    #[staticmethod]
    fn load_json(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            inner: TransitionModel::load_json(std::io::BufReader::new(file)).map_err(to_py_err)?,
        })
    }

    fn save_json(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.inner
            .save_json(std::io::BufWriter::new(file))
            .map_err(to_py_err)
    }

    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    fn row_coverage(&self) -> f64 {
        self.inner.row_coverage()
    }

    fn __repr__(&self) -> String {
        format!(
            "TransitionModel(nodes={}, coverage={:.1}%)",
            self.inner.n_nodes(),
            self.inner.row_coverage() * 100.0
        )
    }
}

/// Discretized marginal-value cube for one operating day.
#[pyclass(name = "ValueCube")]
struct PyValueCube {
    inner: ValueCube,
    spec: StorageSpec,
}

#[pymethods]
impl PyValueCube {
    /// (stages, nodes, SoC samples).
    fn dims(&self) -> (usize, usize, usize) {
        (
            self.inner.t_stages,
            self.inner.n_nodes,
            self.inner.m_segments,
        )
    }

    /// Dispatch decision (discharge, charge) in MWh per interval.
    fn act(&self, stage: usize, price: f64, soc: f64) -> PyResult<(f64, f64)> {
        esarb_core::policy::act(&self.inner, stage, price, soc, &self.spec).map_err(to_py_err)
    }

    /// Marginal-value slice at (stage, node).
    fn slice(&self, stage: usize, node: usize) -> PyResult<Vec<f64>> {
        if stage >= self.inner.t_stages || node >= self.inner.n_nodes {
            return Err(PyValueError::new_err("stage or node out of range"));
        }
        Ok(self.inner.slice(stage, node).to_vec())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.inner
            .save_binary(std::io::BufWriter::new(file))
            .map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str, spec: &PyStorageSpec) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            inner: ValueCube::load_binary(std::io::BufReader::new(file)).map_err(to_py_err)?,
            spec: spec.inner.clone(),
        })
    }
}

/// Materialize the value cube for one operating day under a trained model.
#[pyfunction]
#[pyo3(signature = (model, spec, date, dap=None, soc_segments=1000))]
fn value_cube(
    model: &PyTransitionModel,
    spec: &PyStorageSpec,
    date: &str,
    dap: Option<&PyPriceSeries>,
    soc_segments: usize,
) -> PyResult<PyValueCube> {
    let date = parse_date(date)?;
    let interval = spec.inner.interval_min;
    let t_stages = simulate::stages_per_day(interval);
    let class = model.inner.scheme.class_of_date(date);
    let chain = DayChain::from_model(
        &model.inner,
        class,
        dap.map(|d| &d.inner),
        date,
        t_stages,
        interval,
    )
    .map_err(to_py_err)?;
    let cube = backward_pass(&chain, &spec.inner, soc_segments).map_err(to_py_err)?;
    Ok(PyValueCube {
        inner: cube,
        spec: spec.inner.clone(),
    })
}

/// Outcome of a backtest run.
#[pyclass(name = "DispatchResult")]
struct PyDispatchResult {
    output: SimOutput,
    spec: StorageSpec,
}

#[pymethods]
impl PyDispatchResult {
    #[getter]
    fn revenue(&self) -> f64 {
        self.output.trace.revenue()
    }

    #[getter]
    fn discharged_mwh(&self) -> f64 {
        self.output.trace.discharged()
    }

    #[getter]
    fn valuation_seconds(&self) -> f64 {
        self.output.valuation_seconds
    }

    #[getter]
    fn skipped_days(&self) -> Vec<(String, String)> {
        self.output
            .skipped_days
            .iter()
            .map(|(d, r)| (d.to_string(), r.clone()))
            .collect()
    }

    /// Rows as (timestamp, price, discharge, charge, soc, cashflow).
    fn rows(&self) -> Vec<(String, f64, f64, f64, f64, f64)> {
        self.output
            .trace
            .rows
            .iter()
            .map(|r| {
                (
                    r.ts.format(TS_FORMAT).to_string(),
                    r.price,
                    r.discharge,
                    r.charge,
                    r.soc,
                    r.cashflow,
                )
            })
            .collect()
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.output
            .trace
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Re-check every trace invariant.
    fn validate(&self) -> PyResult<()> {
        self.output.trace.validate(&self.spec).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "DispatchResult(revenue={:.2}, discharged={:.3} MWh, intervals={})",
            self.output.trace.revenue(),
            self.output.trace.discharged(),
            self.output.trace.rows.len()
        )
    }
}

fn sim_options(soc_segments: usize, initial_soc: Option<f64>, horizon: Option<usize>) -> SimOptions {
    SimOptions {
        soc_segments,
        initial_soc,
        horizon,
    }
}

/// Backtest a trained Markov model against realized prices.
#[pyfunction]
#[pyo3(signature = (model, rtp_test, spec, dap_test=None, soc_segments=1000, initial_soc=None))]
fn run_sdp(
    model: &PyTransitionModel,
    rtp_test: &PyPriceSeries,
    spec: &PyStorageSpec,
    dap_test: Option<&PyPriceSeries>,
    soc_segments: usize,
    initial_soc: Option<f64>,
) -> PyResult<PyDispatchResult> {
    let output = simulate::run_sdp(
        &model.inner,
        &rtp_test.inner,
        dap_test.map(|d| &d.inner),
        &spec.inner,
        &sim_options(soc_segments, initial_soc, None),
    )
    .map_err(to_py_err)?;
    Ok(PyDispatchResult {
        output,
        spec: spec.inner.clone(),
    })
}

/// Perfect-forecast benchmark (deterministic optimum per day).
#[pyfunction]
#[pyo3(signature = (rtp_test, spec, soc_segments=1000, initial_soc=None))]
fn run_perfect_forecast(
    rtp_test: &PyPriceSeries,
    spec: &PyStorageSpec,
    soc_segments: usize,
    initial_soc: Option<f64>,
) -> PyResult<PyDispatchResult> {
    let output = simulate::run_perfect_forecast(
        &rtp_test.inner,
        &spec.inner,
        &sim_options(soc_segments, initial_soc, None),
    )
    .map_err(to_py_err)?;
    Ok(PyDispatchResult {
        output,
        spec: spec.inner.clone(),
    })
}

/// Day-ahead MPC benchmark (DAP as the price forecast).
#[pyfunction]
#[pyo3(signature = (rtp_test, dap_test, spec, soc_segments=1000, initial_soc=None, horizon=None))]
fn run_mpc_dap(
    rtp_test: &PyPriceSeries,
    dap_test: &PyPriceSeries,
    spec: &PyStorageSpec,
    soc_segments: usize,
    initial_soc: Option<f64>,
    horizon: Option<usize>,
) -> PyResult<PyDispatchResult> {
    let output = simulate::run_mpc_dap(
        &rtp_test.inner,
        &dap_test.inner,
        &spec.inner,
        &sim_options(soc_segments, initial_soc, horizon),
    )
    .map_err(to_py_err)?;
    Ok(PyDispatchResult {
        output,
        spec: spec.inner.clone(),
    })
}

#[pymodule]
fn esarb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPriceSeries>()?;
    m.add_class::<PyStorageSpec>()?;
    m.add_class::<PyTransitionModel>()?;
    m.add_class::<PyValueCube>()?;
    m.add_class::<PyDispatchResult>()?;
    m.add_function(wrap_pyfunction!(compute_bias, m)?)?;
    m.add_function(wrap_pyfunction!(broadcast_dap, m)?)?;
    m.add_function(wrap_pyfunction!(value_cube, m)?)?;
    m.add_function(wrap_pyfunction!(run_sdp, m)?)?;
    m.add_function(wrap_pyfunction!(run_perfect_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(run_mpc_dap, m)?)?;
    Ok(())
}
