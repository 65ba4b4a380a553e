//! Python bindings for `ghzverify`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ghzverify::adversary::{self, make_strategy};
use ghzverify::analytics::{self, TrustModel};
use ghzverify::error::Error;
use ghzverify::protocol::{self, PassStats, ProtocolKind};
use ghzverify::qstate::{fidelity, ghz_state};
use ghzverify::simnet::{run_session, SessionConfig};
use ghzverify::sources::{self, prepare, SourceModel};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kind(s: &str) -> PyResult<ProtocolKind> {
    s.parse().map_err(py_err)
}

fn trust(s: &str) -> PyResult<TrustModel> {
    s.parse().map_err(py_err)
}

/// A parsed source model such as `dephased-ghz:p=0.2`.
#[pyclass(name = "Source", frozen)]
struct PySource(SourceModel);

#[pymethods]
impl PySource {
    #[new]
    #[pyo3(signature = (key, n = 3))]
    fn new(key: &str, n: usize) -> PyResult<Self> {
        SourceModel::parse(key, n).map(Self).map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    /// Fidelity with the ideal GHZ state.
    fn ghz_fidelity(&self) -> PyResult<f64> {
        let rho = prepare(&self.0).map_err(py_err)?;
        let g = ghz_state(self.0.n(), 0.0).and_then(|g| g.to_density()).map_err(py_err)?;
        fidelity(&rho, &g).map_err(py_err)
    }

    /// Exact honest pass probability under the given protocol.
    #[pyo3(signature = (protocol = "theta"))]
    fn exact_pass_probability(&self, protocol: &str) -> PyResult<f64> {
        let rho = prepare(&self.0).map_err(py_err)?;
        protocol::exact_pass_probability(&rho, kind(protocol)?).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Source('{}')", self.0)
    }
}

#[pyclass(name = "PassStats", frozen, get_all)]
struct PyPassStats {
    rounds: u64,
    valid_rounds: u64,
    passes: u64,
    estimate: f64,
    stderr: f64,
    loss_rates: Vec<f64>,
}

impl From<PassStats> for PyPassStats {
    fn from(s: PassStats) -> Self {
        Self {
            rounds: s.rounds,
            valid_rounds: s.valid_rounds,
            passes: s.passes,
            estimate: s.estimate,
            stderr: s.stderr,
            loss_rates: s.loss_rates,
        }
    }
}

#[pymethods]
impl PyPassStats {
    fn __repr__(&self) -> String {
        format!("PassStats(estimate={}, stderr={}, valid_rounds={})", self.estimate, self.stderr, self.valid_rounds)
    }
}

#[pyclass(name = "Verdict", frozen, get_all)]
struct PyVerdict {
    decision: String,
    margin: f64,
    threshold: f64,
    sigma: f64,
    estimate: f64,
    stderr: f64,
    lambda_: f64,
}

#[pymethods]
impl PyVerdict {
    #[getter]
    fn verified(&self) -> bool {
        self.decision == "GME-VERIFIED"
    }

    fn __repr__(&self) -> String {
        format!("Verdict('{}', margin={})", self.decision, self.margin)
    }
}

#[allow(clippy::too_many_arguments)]
fn session_config(
    n: usize,
    protocol: &str,
    source: Option<&str>,
    strategy: Option<&str>,
    rounds: u64,
    seed: u64,
    lambda_max: Option<f64>,
    honest_loss: f64,
) -> PyResult<SessionConfig> {
    let kind = kind(protocol)?;
    let source = source.map(|k| SourceModel::parse(k, n)).transpose().map_err(py_err)?;
    let mut cfg = match strategy {
        Some(key) => {
            let mut c = SessionConfig::cheating(n, kind, make_strategy(key).map_err(py_err)?, rounds, seed);
            c.source = source;
            c
        }
        None => SessionConfig::honest(n, kind, source, rounds, seed),
    };
    if let Some(l) = lambda_max {
        cfg.lambda_max = l;
    }
    cfg.honest_loss = honest_loss;
    Ok(cfg)
}

/// Monte Carlo pass statistics for a source, optionally with a cheating coalition.
#[pyfunction]
#[pyo3(signature = (n = 3, protocol = "theta", source = None, strategy = None, rounds = 6000, seed = 0, honest_loss = 0.0))]
fn estimate(
    py: Python<'_>,
    n: usize,
    protocol: &str,
    source: Option<&str>,
    strategy: Option<&str>,
    rounds: u64,
    seed: u64,
    honest_loss: f64,
) -> PyResult<PyPassStats> {
    let cfg = session_config(n, protocol, source, strategy, rounds, seed, None, honest_loss)?;
    let t = py.detach(|| run_session(&cfg)).map_err(py_err)?;
    t.stats.map(Into::into).ok_or_else(|| py_err(Error::UndefinedEstimate))
}

/// Full session; returns the summary document as a JSON string.
#[pyfunction]
#[pyo3(signature = (n = 3, protocol = "theta", source = None, strategy = None, rounds = 6000, seed = 0, lambda_max = None, honest_loss = 0.0))]
#[allow(clippy::too_many_arguments)]
fn session_summary(
    py: Python<'_>,
    n: usize,
    protocol: &str,
    source: Option<&str>,
    strategy: Option<&str>,
    rounds: u64,
    seed: u64,
    lambda_max: Option<f64>,
    honest_loss: f64,
) -> PyResult<String> {
    let cfg = session_config(n, protocol, source, strategy, rounds, seed, lambda_max, honest_loss)?;
    let t = py.detach(|| run_session(&cfg)).map_err(py_err)?;
    serde_json::to_string(&t.summary()).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (estimate, stderr, protocol = "theta", trust = "dishonest-allowed", lam = 0.0, sigma = 3.0))]
fn verdict(estimate: f64, stderr: f64, protocol: &str, trust: &str, lam: f64, sigma: f64) -> PyResult<PyVerdict> {
    let v = analytics::verdict_from_estimate(estimate, stderr, kind(protocol)?, self::trust(trust)?, lam, sigma)
        .map_err(py_err)?;
    Ok(PyVerdict {
        decision: v.decision.to_string(),
        margin: v.margin,
        threshold: v.threshold,
        sigma: v.sigma,
        estimate: v.estimate,
        stderr: v.stderr,
        lambda_: v.lambda,
    })
}

#[pyfunction]
#[pyo3(signature = (protocol = "theta", trust = "dishonest-allowed", lam = 0.0))]
fn gme_threshold(protocol: &str, trust: &str, lam: f64) -> PyResult<f64> {
    analytics::gme_threshold(kind(protocol)?, self::trust(trust)?, lam).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (p_obs, protocol = "theta", trust = "dishonest-allowed"))]
fn max_tolerable_loss(p_obs: f64, protocol: &str, trust: &str) -> PyResult<f64> {
    analytics::max_tolerable_loss(p_obs, kind(protocol)?, self::trust(trust)?).map_err(py_err)
}

/// Optimal cheating pass probability at loss rate `lam`, as `(theta, xy)`; xy is None above ½.
#[pyfunction]
fn cheat_curves(lam: f64) -> PyResult<(f64, Option<f64>)> {
    let theta = adversary::theta_cheat_pass_curve(lam).map_err(py_err)?;
    Ok((theta, adversary::xy_cheat_pass_curve(lam).ok()))
}

#[pyfunction]
fn honest_fidelity_bound(p: f64) -> f64 {
    analytics::honest_fidelity_bound(p)
}

#[pyfunction]
fn dishonest_fidelity_bound(p: f64) -> f64 {
    analytics::dishonest_fidelity_bound(p)
}

#[pyfunction]
fn higher_order_fidelity(n: usize, alpha: f64) -> PyResult<f64> {
    sources::higher_order_fidelity(n, alpha).map_err(py_err)
}

#[pyfunction]
fn strategy_keys() -> Vec<&'static str> {
    adversary::STRATEGY_KEYS.to_vec()
}

#[pyfunction]
fn source_keys() -> Vec<&'static str> {
    sources::SOURCE_KEYS.to_vec()
}

#[pymodule]
fn pyghzverify(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySource>()?;
    m.add_class::<PyPassStats>()?;
    m.add_class::<PyVerdict>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(session_summary, m)?)?;
    m.add_function(wrap_pyfunction!(verdict, m)?)?;
    m.add_function(wrap_pyfunction!(gme_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(max_tolerable_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cheat_curves, m)?)?;
    m.add_function(wrap_pyfunction!(honest_fidelity_bound, m)?)?;
    m.add_function(wrap_pyfunction!(dishonest_fidelity_bound, m)?)?;
    m.add_function(wrap_pyfunction!(higher_order_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(strategy_keys, m)?)?;
    m.add_function(wrap_pyfunction!(source_keys, m)?)?;
    Ok(())
}
