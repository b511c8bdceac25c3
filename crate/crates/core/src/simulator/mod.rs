//! Synchronous run orchestration: gradient sampling, optimizer stepping,
//! metric extraction, and parameter sweeps.
//!
//! A run is fully described by a [`RunConfig`]; identical configs produce
//! byte-identical traces because every random draw comes from a counter
//! stream keyed on `(seed, purpose, node, round)` and never from shared
//! state. Metrics are always evaluated with exact gradients, even when the
//! optimizer consumes noisy ones, so bound-shaped assertions are not
//! contaminated by Monte-Carlo error.

pub mod config;
mod trace;

pub use config::{run_config_from_toml, ConfigError, ConfigFile};
pub use trace::{RunSummary, Trace, TraceRecord, CSV_HEADER};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{GraphError, GraphKind, MixingKind, MixingMatrix, Topology};
use crate::optimizers::{HyperParams, Method, NodeState, OptimizerError};
use crate::problems::{
    counterexample_problem, quadratic_problem, softmax_problem, stochastic_gradient,
    HeterogeneityPlan, NoiseModel, Problem, ProblemError,
};
use crate::rng::{Purpose, RngStreams};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("non-finite {what} at round {round}, node {node}, coordinate {coord}")]
    NonFinite {
        round: u64,
        node: usize,
        coord: usize,
        what: &'static str,
    },
    #[error("{key}: {why}")]
    BadConfig { key: &'static str, why: String },
}

fn bad_config(key: &'static str, why: impl Into<String>) -> SimError {
    SimError::BadConfig {
        key,
        why: why.into(),
    }
}

/// Which objective family to instantiate; construction is deferred to the
/// run so configs stay cheap to clone and sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSpec {
    /// The fixed two-node scalar problem.
    Counterexample,
    Quadratic {
        dim: usize,
        condition: f64,
        hetero: f64,
    },
    Softmax {
        dim: usize,
        num_classes: usize,
        /// `Some(c)`: node `i` holds classes `{c·i, …, c·i+c−1}` (label
        /// skew); `None`: every node samples all classes.
        classes_per_node: Option<usize>,
        samples_per_node: usize,
    },
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Counterexample => 1,
            ProblemSpec::Quadratic { dim, .. } | ProblemSpec::Softmax { dim, .. } => *dim,
        }
    }

    pub fn build(&self, node_count: usize, seed: u64) -> Result<Problem, SimError> {
        match *self {
            ProblemSpec::Counterexample => {
                if node_count != 2 {
                    return Err(bad_config(
                        "graph.nodes",
                        format!(
                            "the counterexample is defined on exactly 2 nodes, got {node_count}"
                        ),
                    ));
                }
                Ok(counterexample_problem())
            }
            ProblemSpec::Quadratic {
                dim,
                condition,
                hetero,
            } => Ok(quadratic_problem(dim, node_count, condition, hetero, seed)?),
            ProblemSpec::Softmax {
                dim,
                num_classes,
                classes_per_node,
                samples_per_node,
            } => {
                let plan = match classes_per_node {
                    Some(c) => HeterogeneityPlan::disjoint(num_classes, node_count, c)?,
                    None => HeterogeneityPlan::homogeneous(num_classes, node_count)?,
                };
                Ok(softmax_problem(
                    dim,
                    num_classes,
                    node_count,
                    &plan,
                    samples_per_node,
                    seed,
                )?)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GraphShape {
    Builtin(GraphKind),
    Custom { edges: Vec<(usize, usize)> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSpec {
    pub shape: GraphShape,
    pub nodes: usize,
    pub mixing: MixingKind,
    /// Extra `γI + (1−γ)W` blending applied after construction; used by
    /// lambda sweeps to dial the contraction factor.
    pub extra_blend: Option<f64>,
}

impl GraphSpec {
    pub fn build(&self) -> Result<MixingMatrix, SimError> {
        if self.nodes == 1 {
            if let GraphShape::Custom { ref edges } = self.shape {
                if !edges.is_empty() {
                    return Err(bad_config("graph.edge_list", "a single node has no edges"));
                }
            }
            return Ok(MixingMatrix::solo());
        }
        let topo = match &self.shape {
            GraphShape::Builtin(kind) => Topology::build(*kind, self.nodes)?,
            GraphShape::Custom { edges } => Topology::new(self.nodes, edges)?,
        };
        let mut w = MixingMatrix::build(&topo, self.mixing)?;
        if let Some(gamma) = self.extra_blend {
            w = w.blend_identity(gamma)?;
        }
        Ok(w)
    }
}

/// The shared starting point `x₁` for every node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitKind {
    Constant(f64),
    /// One draw, shared by all nodes: each coordinate uniform on [−1, 1].
    SharedRandom,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub graph: GraphSpec,
    pub method: Method,
    pub hp: HyperParams,
    pub noise: NoiseModel,
    pub horizon: u64,
    pub seed: u64,
    pub record_every: u64,
    pub init: InitKind,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.hp.validate()?;
        self.noise.validate()?;
        if self.horizon < 1 {
            return Err(bad_config("run.horizon", "must be at least 1"));
        }
        if self.record_every < 1 || self.record_every > self.horizon {
            return Err(bad_config(
                "run.record_every",
                format!("must lie in [1, horizon = {}]", self.horizon),
            ));
        }
        Ok(())
    }

    fn initial_point(&self, dim: usize) -> Vec<f64> {
        match self.init {
            InitKind::Constant(v) => vec![v; dim],
            InitKind::SharedRandom => {
                let mut rng = RngStreams::new(self.seed, Purpose::SharedInit).at(0, 0);
                (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
            }
        }
    }
}

/// Everything a per-round probe can see: the states entering round `t`, the
/// (noisy) gradients the optimizer consumed, and the states after the step.
pub struct RoundEvent<'a> {
    pub t: u64,
    pub before: &'a [NodeState],
    pub grads: &'a [Vec<f64>],
    pub after: &'a [NodeState],
}

pub fn run(cfg: &RunConfig) -> Result<Trace, SimError> {
    run_with_observer(cfg, |_| {})
}

/// Run the configured simulation, invoking `observer` once per round.
///
/// Per round `t`: the loss/gradient/consensus metrics describe the mean
/// iterate `X̄_t` entering the round, the rate metrics (`u_spread`, the
/// average inside the scaled gradient metric) use the `u_t` the round
/// applied, and the cumulative rate drift adds `Σ_i ‖v̂_{t−1,i} − v̂_{t−2,i}‖₁`
/// (zero at `t = 1` by the `v̂_{−1} = v̂₀` convention). Records are kept at
/// `t = 1`, every `record_every`-th round, and `t = T`; the summary
/// averages run over every round regardless.
pub fn run_with_observer<F>(cfg: &RunConfig, mut observer: F) -> Result<Trace, SimError>
where
    F: FnMut(&RoundEvent),
{
    cfg.validate()?;
    let mixing = cfg.graph.build()?;
    let n = mixing.n();
    let problem = cfg.problem.build(n, cfg.seed)?;
    let dim = problem.dim();

    let mut warnings = Vec::new();
    let premise = cfg.hp.epsilon.sqrt() / (16.0 * problem.l_smooth());
    if cfg.hp.alpha > premise {
        warnings.push(format!(
            "alpha = {} exceeds the stepsize premise sqrt(epsilon)/(16 L) = {premise}; \
             the stationarity guarantees need not hold",
            cfg.hp.alpha
        ));
    }

    let x0 = cfg.initial_point(dim);
    let mut states = cfg.method.init_states(n, &x0, &cfg.hp);
    let noise_streams = RngStreams::new(cfg.seed, Purpose::GradientNoise);

    let inv_n = 1.0 / n as f64;
    let mut records = Vec::new();
    let mut vt_cumulative = 0.0;
    let mut sum_scaled = 0.0;
    let mut sum_scaled_last_half = 0.0;
    let mut sum_grad_norm_sq = 0.0;
    let mut max_consensus_err = 0.0f64;
    let mut max_grad_inf = 0.0f64;
    let last_half_start = cfg.horizon / 2 + 1;

    for t in 1..=cfg.horizon {
        // Metrics of the entering iterate.
        let mut xbar = vec![0.0; dim];
        for s in &states {
            for (acc, &xj) in xbar.iter_mut().zip(s.x.iter()) {
                *acc += xj;
            }
        }
        for acc in xbar.iter_mut() {
            *acc *= inv_n;
        }

        let consensus_err = inv_n
            * states
                .iter()
                .map(|s| {
                    s.x.iter()
                        .zip(xbar.iter())
                        .map(|(&xj, &bj)| (xj - bj) * (xj - bj))
                        .sum::<f64>()
                })
                .sum::<f64>();

        for s in &states {
            vt_cumulative += s
                .v_hat
                .iter()
                .zip(s.v_hat_prev.iter())
                .map(|(&a, &b)| (a - b).abs())
                .sum::<f64>();
        }

        let mean_loss = problem.mean_loss(&xbar);
        let grad = problem.mean_grad(&xbar);
        let grad_norm_sq: f64 = grad.iter().map(|g| g * g).sum();

        // The gradients the optimizer consumes (noise included).
        let grads: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut rng = noise_streams.at(i, t);
                stochastic_gradient(&problem, i, &states[i].x, &cfg.noise, &mut rng)
            })
            .collect();
        for g in &grads {
            for gj in g {
                max_grad_inf = max_grad_inf.max(gj.abs());
            }
        }

        let before = states.clone();
        cfg.method
            .step(&mut states, &grads, &mixing, &cfg.hp, t)
            .map_err(|e| match e {
                OptimizerError::NonFinite { node, coord, what } => SimError::NonFinite {
                    round: t,
                    node,
                    coord,
                    what,
                },
                other => SimError::Optimizer(other),
            })?;
        observer(&RoundEvent {
            t,
            before: &before,
            grads: &grads,
            after: &states,
        });

        // Rate metrics from the rate this round applied.
        let mut u_bar = vec![0.0; dim];
        for s in &states {
            for (acc, &uj) in u_bar.iter_mut().zip(s.u.iter()) {
                *acc += uj;
            }
        }
        for acc in u_bar.iter_mut() {
            *acc *= inv_n;
        }
        let scaled_grad_metric: f64 = grad
            .iter()
            .zip(u_bar.iter())
            .map(|(&gj, &uj)| gj * gj / uj.sqrt())
            .sum();
        let u_spread = inv_n
            * states
                .iter()
                .map(|s| {
                    s.u.iter()
                        .zip(u_bar.iter())
                        .map(|(&uj, &bj)| (uj - bj).abs())
                        .sum::<f64>()
                })
                .sum::<f64>();

        sum_scaled += scaled_grad_metric;
        if t >= last_half_start {
            sum_scaled_last_half += scaled_grad_metric;
        }
        sum_grad_norm_sq += grad_norm_sq;
        max_consensus_err = max_consensus_err.max(consensus_err);

        if t == 1 || t == cfg.horizon || t % cfg.record_every == 0 {
            let already = records.last().map(|r: &TraceRecord| r.t) == Some(t);
            if !already {
                records.push(TraceRecord {
                    t,
                    mean_loss,
                    grad_norm_sq,
                    scaled_grad_metric,
                    consensus_err,
                    u_spread,
                    vt_cumulative,
                    xbar: xbar.clone(),
                });
            }
        }
    }

    let mut final_xbar = vec![0.0; dim];
    for s in &states {
        for (acc, &xj) in final_xbar.iter_mut().zip(s.x.iter()) {
            *acc += xj;
        }
    }
    for acc in final_xbar.iter_mut() {
        *acc *= inv_n;
    }
    let final_loss = problem.mean_loss(&final_xbar);
    let final_grad_norm_sq: f64 = problem.mean_grad(&final_xbar).iter().map(|g| g * g).sum();

    let rounds = cfg.horizon as f64;
    let last_half_rounds = (cfg.horizon - cfg.horizon / 2) as f64;
    let summary = RunSummary {
        method: cfg.method.name().to_string(),
        rounds: cfg.horizon,
        lambda: mixing.lambda(),
        final_xbar,
        final_loss,
        final_grad_norm_sq,
        avg_scaled_grad: sum_scaled / rounds,
        last_half_avg_scaled_grad: sum_scaled_last_half / last_half_rounds,
        avg_grad_norm_sq: sum_grad_norm_sq / rounds,
        max_consensus_err,
        max_grad_inf,
        vt_total: vt_cumulative,
        warnings,
    };
    Ok(Trace { records, summary })
}

/// Which scalar a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    /// The horizon `T`; values must be positive integers.
    Horizon,
    /// The node count `N`; values must be positive integers.
    Nodes,
    /// Target contraction factor, reached by blending the base matrix with
    /// the identity. Values must lie in `[λ_base, 1)`; the blend cannot
    /// lower `lambda` below the base matrix's.
    Lambda,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Option<SweepAxis> {
        match name {
            "alpha" => Some(SweepAxis::Alpha),
            "T" => Some(SweepAxis::Horizon),
            "N" => Some(SweepAxis::Nodes),
            "lambda" => Some(SweepAxis::Lambda),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: Result<RunSummary, SimError>,
}

/// Independent runs of `base` with one knob swept across `values`. Cells
/// run in parallel on the global thread pool; a failing cell reports its
/// error in place without aborting the others.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepPoint>, SimError> {
    if values.is_empty() {
        return Err(bad_config("sweep.values", "need at least one value"));
    }
    Ok(values
        .par_iter()
        .map(|&value| SweepPoint {
            value,
            outcome: sweep_cell(base, axis, value),
        })
        .collect())
}

fn positive_integer(value: f64, key: &'static str) -> Result<u64, SimError> {
    if !value.is_finite() || value < 1.0 || value.fract() != 0.0 || value > u64::MAX as f64 {
        return Err(bad_config(
            key,
            format!("must be a positive integer, got {value}"),
        ));
    }
    Ok(value as u64)
}

fn sweep_cell(base: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunSummary, SimError> {
    run(&cell_config(base, axis, value)?).map(|trace| trace.summary)
}

/// The configuration a sweep cell actually runs: `base` with `axis` set to
/// `value`. Public so front ends can rerun or trace individual cells.
pub fn cell_config(base: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunConfig, SimError> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Alpha => cfg.hp.alpha = value,
        SweepAxis::Horizon => {
            let horizon = positive_integer(value, "sweep.T")?;
            cfg.horizon = horizon;
            cfg.record_every = cfg.record_every.min(horizon);
        }
        SweepAxis::Nodes => {
            cfg.graph.nodes = positive_integer(value, "sweep.N")? as usize;
        }
        SweepAxis::Lambda => {
            if !(0.0..1.0).contains(&value) {
                return Err(bad_config("sweep.lambda", "targets must lie in [0, 1)"));
            }
            let base_w = cfg.graph.build()?;
            if base_w.n() < 2 {
                return Err(bad_config("sweep.lambda", "needs at least 2 nodes"));
            }
            // Solve γ + (1−γ)·λ₂ = target on the top of the remainder
            // spectrum, then confirm the blend actually landed there (it
            // will not if the bottom eigenvalue still dominates).
            let second = base_w.eigenvalues()[1];
            let gamma = (value - second) / (1.0 - second);
            if !(0.0..1.0).contains(&gamma) {
                return Err(bad_config(
                    "sweep.lambda",
                    format!(
                        "target {value} is below the base matrix's second eigenvalue {second}; \
                         identity blending can only increase lambda"
                    ),
                ));
            }
            let blended = base_w.blend_identity(gamma)?;
            if (blended.lambda() - value).abs() > 1e-6 {
                return Err(bad_config(
                    "sweep.lambda",
                    format!(
                        "blending reached lambda = {} instead of {value}; the base \
                         matrix's negative spectrum dominates at this target",
                        blended.lambda()
                    ),
                ));
            }
            cfg.graph.extra_blend = Some(gamma);
        }
    }
    Ok(cfg)
}

/// The fixed two-node divergence construction: complete two-node gossip
/// (`W = [[1/2, 1/2], [1/2, 1/2]]`), all betas zero, `epsilon = 1`, exact
/// gradients, every node starting at `-1`. Only the method, stepsize, and
/// horizon vary; only the final round is recorded.
pub fn counterexample_config(method: Method, alpha: f64, horizon: u64) -> RunConfig {
    RunConfig {
        problem: ProblemSpec::Counterexample,
        graph: GraphSpec {
            shape: GraphShape::Builtin(GraphKind::Complete),
            nodes: 2,
            mixing: MixingKind::UniformNeighbor,
            extra_blend: None,
        },
        method,
        hp: HyperParams {
            alpha,
            beta1: 0.0,
            beta2: 0.0,
            beta3: 0.0,
            epsilon: 1.0,
        },
        noise: NoiseModel::None,
        horizon,
        seed: 0,
        record_every: horizon.max(1),
        init: InitKind::Constant(-1.0),
    }
}
