//! Objectives assigned to nodes, gradient oracles, and gradient noise.
//!
//! A [`Problem`] is immutable after construction and shared read-only by all
//! nodes; the global objective is always the exact mean of the node losses.
//! Three constructors are provided: the fixed two-node piecewise scalar
//! problem whose adaptive-rate dynamics separate the optimizers, synthetic
//! quadratics with controlled conditioning and heterogeneity, and a
//! softmax-regression testbed with label-skew partitions.

mod quadratic;
mod softmax;

pub use quadratic::quadratic_problem;
pub use softmax::{softmax_problem, HeterogeneityPlan};

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension must be at least 1, got {dim}")]
    BadDim { dim: usize },
    #[error("node count must be at least 1, got {n}")]
    BadNodeCount { n: usize },
    #[error("condition number must be finite and >= 1, got {condition}")]
    BadCondition { condition: f64 },
    #[error("heterogeneity must be finite and >= 0, got {hetero}")]
    BadHetero { hetero: f64 },
    #[error("need at least 2 classes, got {classes}")]
    BadClasses { classes: usize },
    #[error("dimension {dim} is not divisible by the class count {classes}")]
    DimNotDivisible { dim: usize, classes: usize },
    #[error("samples per node must be at least 1")]
    NoSamples,
    #[error("plan assigns {plan_nodes} nodes but the problem has {node_count}")]
    PlanMismatch {
        plan_nodes: usize,
        node_count: usize,
    },
    #[error("plan references class {class} but there are only {num_classes} classes")]
    PlanClassOutOfRange { class: usize, num_classes: usize },
    #[error("plan leaves node {node} with no classes")]
    PlanEmptyNode { node: usize },
    #[error(
        "disjoint plan needs classes_per_node * node_count == num_classes \
         ({classes_per_node} * {node_count} != {num_classes})"
    )]
    PlanNotPartition {
        classes_per_node: usize,
        node_count: usize,
        num_classes: usize,
    },
    #[error("noise sigma must be finite and >= 0, got {sigma}")]
    BadSigma { sigma: f64 },
}

/// One node's local objective.
#[derive(Clone, Debug)]
pub(crate) enum LocalObjective {
    /// `curvature·z²` for `|z| ≤ 1`, `curvature·(2|z| − 1)` outside, with
    /// `z = x − center`. The gradient at `|z| = 1` takes the inner-piece
    /// value; the pieces agree there in value and slope.
    Huber1D { center: f64, curvature: f64 },
    /// `½ (x−b)ᵀ A (x−b)` with positive definite `A`.
    Quadratic { a: DMatrix<f64>, b: DVector<f64> },
    /// Mean cross-entropy of multinomial logistic regression over the node's
    /// samples; the parameter is the row-major `classes × feat_dim` matrix.
    Softmax {
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        classes: usize,
        feat_dim: usize,
    },
}

impl LocalObjective {
    fn loss(&self, x: &[f64]) -> f64 {
        match self {
            LocalObjective::Huber1D { center, curvature } => {
                let z = x[0] - center;
                if z.abs() <= 1.0 {
                    curvature * z * z
                } else {
                    curvature * (2.0 * z.abs() - 1.0)
                }
            }
            LocalObjective::Quadratic { a, b } => {
                let diff = DVector::from_column_slice(x) - b;
                0.5 * (a * &diff).dot(&diff)
            }
            LocalObjective::Softmax {
                features,
                labels,
                classes,
                feat_dim,
            } => {
                let mut total = 0.0;
                for (phi, &y) in features.iter().zip(labels.iter()) {
                    let logits = logits(x, phi, *classes, *feat_dim);
                    total += log_sum_exp(&logits) - logits[y];
                }
                total / features.len() as f64
            }
        }
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        match self {
            LocalObjective::Huber1D { center, curvature } => {
                let z = x[0] - center;
                out[0] = if z.abs() <= 1.0 {
                    2.0 * curvature * z
                } else {
                    2.0 * curvature * z.signum()
                };
            }
            LocalObjective::Quadratic { a, b } => {
                let diff = DVector::from_column_slice(x) - b;
                let g = a * diff;
                out.copy_from_slice(g.as_slice());
            }
            LocalObjective::Softmax {
                features,
                labels,
                classes,
                feat_dim,
            } => {
                out.fill(0.0);
                for (phi, &y) in features.iter().zip(labels.iter()) {
                    let logits = logits(x, phi, *classes, *feat_dim);
                    let probs = softmax(&logits);
                    for c in 0..*classes {
                        let residual = probs[c] - if c == y { 1.0 } else { 0.0 };
                        let row = &mut out[c * feat_dim..(c + 1) * feat_dim];
                        for (o, &f) in row.iter_mut().zip(phi.iter()) {
                            *o += residual * f;
                        }
                    }
                }
                let inv = 1.0 / features.len() as f64;
                for o in out.iter_mut() {
                    *o *= inv;
                }
            }
        }
    }
}

fn logits(x: &[f64], phi: &[f64], classes: usize, feat_dim: usize) -> Vec<f64> {
    (0..classes)
        .map(|c| {
            x[c * feat_dim..(c + 1) * feat_dim]
                .iter()
                .zip(phi.iter())
                .map(|(w, f)| w * f)
                .sum()
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// A collection of per-node objectives plus the constants the stationarity
/// bounds need: the smoothness constant `L` and the gradient bound `G∞`.
#[derive(Clone, Debug)]
pub struct Problem {
    dim: usize,
    node_count: usize,
    l_smooth: f64,
    g_inf: f64,
    x_star: Option<Vec<f64>>,
    f_star: Option<f64>,
    locals: Vec<LocalObjective>,
    name: &'static str,
}

impl Problem {
    pub(crate) fn assemble(
        dim: usize,
        l_smooth: f64,
        g_inf: f64,
        x_star: Option<Vec<f64>>,
        locals: Vec<LocalObjective>,
        name: &'static str,
    ) -> Self {
        let mut p = Problem {
            dim,
            node_count: locals.len(),
            l_smooth,
            g_inf,
            x_star,
            f_star: None,
            locals,
            name,
        };
        p.f_star = p.x_star.clone().map(|xs| p.mean_loss(&xs));
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Smoothness constant of every local objective.
    pub fn l_smooth(&self) -> f64 {
        self.l_smooth
    }

    /// Per-coordinate gradient bound; for quadratics this holds on the
    /// documented box around `x_star`, elsewhere globally.
    pub fn g_inf(&self) -> f64 {
        self.g_inf
    }

    /// Minimizer of the mean objective, when known in closed form.
    pub fn x_star(&self) -> Option<&[f64]> {
        self.x_star.as_deref()
    }

    /// `f(x_star)`, when the minimizer is known.
    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn local_loss(&self, node: usize, x: &[f64]) -> f64 {
        assert!(node < self.node_count, "node {node} out of range");
        assert_eq!(x.len(), self.dim, "point has wrong dimension");
        self.locals[node].loss(x)
    }

    pub fn local_grad(&self, node: usize, x: &[f64]) -> Vec<f64> {
        assert!(node < self.node_count, "node {node} out of range");
        assert_eq!(x.len(), self.dim, "point has wrong dimension");
        let mut out = vec![0.0; self.dim];
        self.locals[node].grad(x, &mut out);
        out
    }

    /// `f(x) = (1/N) Σ_i f_i(x)`, summed once then divided once.
    pub fn mean_loss(&self, x: &[f64]) -> f64 {
        let total: f64 = (0..self.node_count).map(|i| self.local_loss(i, x)).sum();
        total / self.node_count as f64
    }

    /// `∇f(x) = (1/N) Σ_i ∇f_i(x)`, exact (no sampling, no noise).
    pub fn mean_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        for i in 0..self.node_count {
            self.locals[i].grad(x, &mut buf);
            for (a, g) in acc.iter_mut().zip(buf.iter()) {
                *a += g;
            }
        }
        let inv = 1.0 / self.node_count as f64;
        for a in acc.iter_mut() {
            *a *= inv;
        }
        acc
    }

    /// Test accessor: the quadratic node's `(A_i, b_i)`.
    pub fn quadratic_parts(&self, node: usize) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match &self.locals[node] {
            LocalObjective::Quadratic { a, b } => Some((a, b)),
            _ => None,
        }
    }

    /// Test accessor: the softmax node's `(features, labels)`.
    pub fn softmax_samples(&self, node: usize) -> Option<(&[Vec<f64>], &[usize])> {
        match &self.locals[node] {
            LocalObjective::Softmax {
                features, labels, ..
            } => Some((features, labels)),
            _ => None,
        }
    }
}

/// The fixed two-node scalar problem separating DADAM from the framework.
///
/// Node 0 owns `f₀(x) = 2x²` inside `|x| ≤ 1` and `4|x| − 2` outside; node 1
/// owns `f₁(x) = (x−1)²` inside `|x−1| ≤ 1` and `2|x−1| − 1` outside. The mean
/// objective has its unique stationary point at `x* = 1/3`; the stationary
/// point of the (1/4, 1/2)-rescaled gradients sits at `0.5`, where
/// `∇f(0.5) = 0.5`.
pub fn counterexample_problem() -> Problem {
    Problem::assemble(
        1,
        4.0,
        4.0,
        Some(vec![1.0 / 3.0]),
        vec![
            LocalObjective::Huber1D {
                center: 0.0,
                curvature: 2.0,
            },
            LocalObjective::Huber1D {
                center: 1.0,
                curvature: 1.0,
            },
        ],
        "counterexample",
    )
}

/// Additive gradient noise. The bounded model draws each coordinate
/// uniformly from `[−σ√3, σ√3]`: variance exactly σ², support bounded so the
/// noisy gradient stays within a finite `G∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    None,
    UniformBounded { sigma: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), ProblemError> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::UniformBounded { sigma } => {
                if sigma.is_finite() && sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(ProblemError::BadSigma { sigma })
                }
            }
        }
    }

    /// Largest possible `|ξ|` per coordinate.
    pub fn bound(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::UniformBounded { sigma } => sigma * 3f64.sqrt(),
        }
    }

    /// Noise variance per coordinate.
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::UniformBounded { sigma } => sigma * sigma,
        }
    }
}

/// `g = ∇f_i(x) + ξ`, the gradient the optimizers consume.
pub fn stochastic_gradient(
    problem: &Problem,
    node: usize,
    x: &[f64],
    noise: &NoiseModel,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let mut g = problem.local_grad(node, x);
    match *noise {
        NoiseModel::None => {}
        NoiseModel::UniformBounded { sigma } => {
            if sigma > 0.0 {
                let half_width = sigma * 3f64.sqrt();
                let dist = Uniform::new_inclusive(-half_width, half_width);
                for gi in g.iter_mut() {
                    *gi += dist.sample(rng);
                }
            }
        }
    }
    g
}
