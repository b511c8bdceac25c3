//! Python bindings for the decentralized adaptive gradient laboratory.
//!
//! The module exposes the main entry points: run a simulation from the same
//! TOML text the CLI accepts, inspect mixing-matrix spectra, replay the
//! two-node counterexample, and evaluate the stationarity-bound quantities.
//! Everything returns plain Python scalars, lists, and dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use dadopt_core::analysis;
use dadopt_core::graph::{GraphKind, MixingKind, MixingMatrix, Topology};
use dadopt_core::optimizers::{AdaptiveRule, Method, UTildeSchedule};
use dadopt_core::simulator::{
    counterexample_config, run, run_config_from_toml, RunSummary, SimError, Trace, TraceRecord,
};

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::NonFinite { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn analysis_err(e: analysis::AnalysisError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn summary_dict<'py>(py: Python<'py>, s: &RunSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", &s.method)?;
    d.set_item("rounds", s.rounds)?;
    d.set_item("lambda", s.lambda)?;
    d.set_item("final_xbar", &s.final_xbar)?;
    d.set_item("final_loss", s.final_loss)?;
    d.set_item("final_grad_norm_sq", s.final_grad_norm_sq)?;
    d.set_item("avg_scaled_grad", s.avg_scaled_grad)?;
    d.set_item("last_half_avg_scaled_grad", s.last_half_avg_scaled_grad)?;
    d.set_item("avg_grad_norm_sq", s.avg_grad_norm_sq)?;
    d.set_item("max_consensus_err", s.max_consensus_err)?;
    d.set_item("max_grad_inf", s.max_grad_inf)?;
    d.set_item("vt_total", s.vt_total)?;
    d.set_item("warnings", &s.warnings)?;
    Ok(d)
}

fn record_dict<'py>(py: Python<'py>, r: &TraceRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", r.t)?;
    d.set_item("mean_loss", r.mean_loss)?;
    d.set_item("grad_norm_sq", r.grad_norm_sq)?;
    d.set_item("scaled_grad_metric", r.scaled_grad_metric)?;
    d.set_item("consensus_err", r.consensus_err)?;
    d.set_item("u_spread", r.u_spread)?;
    d.set_item("vt_cumulative", r.vt_cumulative)?;
    d.set_item("xbar", &r.xbar)?;
    Ok(d)
}

fn trace_dict<'py>(py: Python<'py>, trace: &Trace) -> PyResult<Bound<'py, PyDict>> {
    let records = PyList::empty(py);
    for r in &trace.records {
        records.append(record_dict(py, r)?)?;
    }
    let d = PyDict::new(py);
    d.set_item("summary", summary_dict(py, &trace.summary)?)?;
    d.set_item("records", records)?;
    Ok(d)
}

/// Run one simulation from TOML config text (the same schema the `dadopt`
/// CLI documents under --help) and return {"summary": ..., "records": [...]}.
#[pyfunction]
fn run_toml<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = run_config_from_toml(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let trace = py.detach(|| run(&cfg)).map_err(sim_err)?;
    trace_dict(py, &trace)
}

fn parse_mixing(mixing: &str, gamma: Option<f64>) -> PyResult<MixingKind> {
    match mixing {
        "uniform" => {
            if gamma.is_some() {
                return Err(PyValueError::new_err(
                    "gamma is only meaningful for mdm mixing",
                ));
            }
            Ok(MixingKind::UniformNeighbor)
        }
        "mdm" => Ok(MixingKind::Mdm {
            gamma: gamma.unwrap_or(0.0),
        }),
        other => Err(PyValueError::new_err(format!(
            "unknown mixing {other:?}; expected \"uniform\" or \"mdm\""
        ))),
    }
}

/// Spectral diagnostics of a mixing matrix: (lambda, 1 - lambda, spectrum).
///
/// `graph` is "cycle", "hypercube", "complete", "star", or "custom" with an
/// `edges` list of (u, v) pairs; `lambda` is the contraction factor
/// max(|eigenvalue|) over the non-principal spectrum.
#[pyfunction]
#[pyo3(signature = (graph, nodes=None, mixing="uniform", gamma=None, edges=None))]
fn spectral(
    graph: &str,
    nodes: Option<usize>,
    mixing: &str,
    gamma: Option<f64>,
    edges: Option<Vec<(usize, usize)>>,
) -> PyResult<(f64, f64, Vec<f64>)> {
    let mixing = parse_mixing(mixing, gamma)?;
    let topo = match graph {
        "custom" => {
            let edges =
                edges.ok_or_else(|| PyValueError::new_err("custom graphs need an edges list"))?;
            let inferred = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
            Topology::new(nodes.unwrap_or(inferred).max(inferred), &edges)
        }
        builtin => {
            if edges.is_some() {
                return Err(PyValueError::new_err("edges only apply to custom graphs"));
            }
            let kind = match builtin {
                "cycle" => GraphKind::Cycle,
                "hypercube" => GraphKind::Hypercube,
                "complete" => GraphKind::Complete,
                "star" => GraphKind::Star,
                other => {
                    return Err(PyValueError::new_err(format!(
                    "unknown graph {other:?}; expected cycle, hypercube, complete, star, or custom"
                )))
                }
            };
            let n = nodes.ok_or_else(|| PyValueError::new_err("builtin graphs need nodes"))?;
            Topology::build(kind, n)
        }
    }
    .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let w = MixingMatrix::build(&topo, mixing).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((w.lambda(), 1.0 - w.lambda(), w.eigenvalues().to_vec()))
}

/// Replay the fixed two-node construction for DADAM and decentralized
/// AMSGrad side by side and report each method's limit.
///
/// Returns {"dadam": {"xbar", "grad_abs"}, "damsgrad": {...}, "tolerance",
/// "pass"}; `pass` asserts DADAM lands near the non-stationary 1/2 and
/// AMSGrad near the stationary 1/3.
#[pyfunction]
#[pyo3(signature = (alpha=0.1, horizon=100_000))]
fn counterexample<'py>(py: Python<'py>, alpha: f64, horizon: u64) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    let mut finals = Vec::new();
    for (name, method) in [
        ("dadam", Method::Dadam),
        (
            "damsgrad",
            Method::Framework {
                rule: AdaptiveRule::AmsGrad,
                schedule: UTildeSchedule::Lagged,
            },
        ),
    ] {
        let cfg = counterexample_config(method, alpha, horizon);
        let summary = py.detach(|| run(&cfg)).map_err(sim_err)?.summary;
        let side = PyDict::new(py);
        side.set_item("xbar", summary.final_xbar[0])?;
        side.set_item("grad_abs", summary.final_grad_norm_sq.sqrt())?;
        out.set_item(name, side)?;
        finals.push(summary.final_xbar[0]);
    }
    // Same tolerance rule as the CLI: the gossiped-rate bias shifts the
    // AMSGrad limit off 1/3 by an offset that scales with the stepsize.
    let tol = 1e-2 + 0.2 * alpha;
    out.set_item("alpha", alpha)?;
    out.set_item("horizon", horizon)?;
    out.set_item("tolerance", tol)?;
    out.set_item(
        "pass",
        (finals[0] - 0.5).abs() <= tol && (finals[1] - 1.0 / 3.0).abs() <= tol,
    )?;
    Ok(out)
}

/// The five constants of the stationarity bound for the given problem
/// smoothness, gradient bound, rate floor, momentum, and contraction factor.
#[pyfunction]
fn bound_constants<'py>(
    py: Python<'py>,
    l: f64,
    g_inf: f64,
    epsilon: f64,
    beta1: f64,
    lam: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let c = analysis::bound_constants(l, g_inf, epsilon, beta1, lam).map_err(analysis_err)?;
    let d = PyDict::new(py);
    d.set_item("c1", c.c1)?;
    d.set_item("c2", c.c2)?;
    d.set_item("c3", c.c3)?;
    d.set_item("c4", c.c4)?;
    d.set_item("c5", c.c5)?;
    Ok(d)
}

/// Right-hand side of the stationarity bound on the time-averaged scaled
/// gradient metric, with every constant evaluated from the given parameters.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn stationarity_bound(
    l: f64,
    g_inf: f64,
    epsilon: f64,
    beta1: f64,
    lam: f64,
    alpha: f64,
    horizon: u64,
    dim: usize,
    nodes: usize,
    f_gap: f64,
    sigma: f64,
    vt: f64,
) -> PyResult<f64> {
    let c = analysis::bound_constants(l, g_inf, epsilon, beta1, lam).map_err(analysis_err)?;
    Ok(analysis::stationarity_bound(
        &c, alpha, horizon, dim, nodes, f_gap, sigma, vt,
    ))
}

/// L1 spread of `a` after flooring every entry at `r`; non-increasing in `r`.
#[pyfunction]
fn clipped_spread(a: Vec<f64>, r: f64) -> PyResult<f64> {
    analysis::clipped_spread(&a, r).map_err(analysis_err)
}

/// Least-squares slope of log(metric) against log(T): the empirical
/// convergence exponent of (T, metric) points.
#[pyfunction]
fn rate_fit(points: Vec<(f64, f64)>) -> PyResult<f64> {
    analysis::rate_fit(&points).map_err(analysis_err)
}

#[pymodule]
fn dadopt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run_toml, m)?)?;
    m.add_function(wrap_pyfunction!(spectral, m)?)?;
    m.add_function(wrap_pyfunction!(counterexample, m)?)?;
    m.add_function(wrap_pyfunction!(bound_constants, m)?)?;
    m.add_function(wrap_pyfunction!(stationarity_bound, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_spread, m)?)?;
    m.add_function(wrap_pyfunction!(rate_fit, m)?)?;
    Ok(())
}
