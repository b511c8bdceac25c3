//! Per-round update rules for the three method families.
//!
//! Every round function is a pure synchronous step: it consumes the
//! gradients already evaluated at the current (pre-mix) iterates, mutates the
//! node states in place, and leaves all cross-node communication to one
//! gossip application per mixed quantity. The caller owns gradient
//! evaluation, noise, and scheduling.
//!
//! The framework family tracks a gossiped second-moment field `ũ` next to
//! the usual `m`, `v`, `v̂`. Its half-step update "absorb the new `v̂`,
//! retire the old one" is stored lazily: after round `t` a node keeps
//! `ũ_t` together with `v̂_t` and `v̂_{t−1}`, and the next round reconstructs
//! the half-step value `ũ_t − v̂_old + v̂_new` on entry. When the two `v̂`
//! snapshots are equal the reconstruction is skipped outright, which keeps
//! frozen-rate runs free of `(x − a) + a` rounding drift and makes the
//! degenerate configurations (constant rule, single node) reduce to their
//! references bit for bit.

use thiserror::Error;

use crate::graph::MixingMatrix;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("hyperparameter {name} = {value} out of range: {requirement}")]
    BadHyper {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("node {node} produced a non-finite {what} at coordinate {coord}")]
    NonFinite {
        node: usize,
        coord: usize,
        what: &'static str,
    },
    #[error("gradient for node {node} has dimension {got}, state has {want}")]
    DimMismatch {
        node: usize,
        got: usize,
        want: usize,
    },
    #[error("{states} node states but the mixing matrix couples {matrix}")]
    NodeCountMismatch { states: usize, matrix: usize },
}

/// Scalar knobs shared by all families. Fields a family ignores (for
/// example `beta2` under `dpsgd`) are simply unused.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub epsilon: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let momentum_range = "must lie in [0, 1)";
        let checks = [
            ("alpha", self.alpha, self.alpha > 0.0, "must be positive"),
            (
                "beta1",
                self.beta1,
                (0.0..1.0).contains(&self.beta1),
                momentum_range,
            ),
            (
                "beta2",
                self.beta2,
                (0.0..1.0).contains(&self.beta2),
                momentum_range,
            ),
            (
                "beta3",
                self.beta3,
                (0.0..1.0).contains(&self.beta3),
                momentum_range,
            ),
            (
                "epsilon",
                self.epsilon,
                self.epsilon > 0.0,
                "must be positive",
            ),
        ];
        for (name, value, ok, requirement) in checks {
            if !ok || !value.is_finite() {
                return Err(OptimizerError::BadHyper {
                    name,
                    value,
                    requirement,
                });
            }
        }
        Ok(())
    }
}

/// How a node turns its gradient history into the raw rate `v̂`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptiveRule {
    /// `v ← β₂v + (1−β₂)g²`, `v̂ ← max(v̂, v)`; `v̂` never decreases.
    AmsGrad,
    /// `v̂_t = ((t−1)/t)·v̂_{t−1} + g²_t/t`, the running mean of `g²`.
    AdaGrad,
    /// Plain exponential moving average `v̂ ← β₂v̂ + (1−β₂)g²`, no max.
    /// Exposed for experiments; the shipped configurations do not use it
    /// because nothing keeps `v̂` from collapsing.
    AdamStyle,
    /// `v̂ ≡ 1`: adaptivity disabled, the framework degenerates to `dpsgd`.
    None,
}

impl AdaptiveRule {
    pub fn name(&self) -> &'static str {
        match self {
            AdaptiveRule::AmsGrad => "amsgrad",
            AdaptiveRule::AdaGrad => "adagrad",
            AdaptiveRule::AdamStyle => "adam-style",
            AdaptiveRule::None => "none",
        }
    }

    /// `v̂₀` per coordinate: `ε` for real rules so early rates are floored,
    /// exactly 1 for the disabled rule so `ũ` stays the all-ones field.
    pub fn initial_v_hat(&self, epsilon: f64) -> f64 {
        match self {
            AdaptiveRule::None => 1.0,
            _ => epsilon,
        }
    }

    /// Advance `(v, v̂)` with the round-`t` gradient (`t` is 1-based).
    pub fn update(&self, t: u64, hp: &HyperParams, v: &mut [f64], v_hat: &mut [f64], g: &[f64]) {
        debug_assert!(t >= 1);
        match self {
            AdaptiveRule::AmsGrad => {
                for j in 0..g.len() {
                    v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g[j] * g[j];
                    v_hat[j] = v_hat[j].max(v[j]);
                }
            }
            AdaptiveRule::AdaGrad => {
                // At t = 1 the old value gets weight 0, so the ε seed is
                // dropped exactly and v̂ is a pure mean of squares.
                let tf = t as f64;
                let keep = (tf - 1.0) / tf;
                let add = 1.0 / tf;
                for j in 0..g.len() {
                    v_hat[j] = keep * v_hat[j] + add * g[j] * g[j];
                    v[j] = v_hat[j];
                }
            }
            AdaptiveRule::AdamStyle => {
                for j in 0..g.len() {
                    v_hat[j] = hp.beta2 * v_hat[j] + (1.0 - hp.beta2) * g[j] * g[j];
                    v[j] = v_hat[j];
                }
            }
            AdaptiveRule::None => {}
        }
    }
}

/// When the lazily stored half-step `ũ − v̂_old + v̂_new` is reconstructed
/// relative to the rule update of the entering round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UTildeSchedule {
    /// Reconstruct before the rule update: the gossiped field carries the
    /// previous round's `v̂`, matching the one-round-delayed analysis.
    #[default]
    Lagged,
    /// Reconstruct after the rule update: the freshly computed `v̂` enters
    /// the same round's gossip.
    Premix,
}

/// Everything one node carries between rounds. All families fill every
/// field so traces and probes can read them uniformly: `u` is the rate
/// actually applied in the last step (`max(ũ, ε)` for the framework, `v̂`
/// for `dadam`, all ones for `dpsgd`), and `v_hat_prev` is the previous
/// round's `v̂` for measuring rate drift.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub v_hat_prev: Vec<f64>,
    pub u_tilde: Vec<f64>,
    pub u: Vec<f64>,
}

impl NodeState {
    fn with_rate(x0: &[f64], v_hat0: f64, u0: f64) -> NodeState {
        let dim = x0.len();
        NodeState {
            x: x0.to_vec(),
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            v_hat: vec![v_hat0; dim],
            v_hat_prev: vec![v_hat0; dim],
            u_tilde: vec![v_hat0; dim],
            u: vec![u0; dim],
        }
    }

    pub fn framework_init(x0: &[f64], rule: AdaptiveRule, epsilon: f64) -> NodeState {
        let v0 = rule.initial_v_hat(epsilon);
        NodeState::with_rate(x0, v0, v0.max(epsilon))
    }

    pub fn dadam_init(x0: &[f64], epsilon: f64) -> NodeState {
        NodeState::with_rate(x0, epsilon, epsilon)
    }

    pub fn dpsgd_init(x0: &[f64]) -> NodeState {
        NodeState::with_rate(x0, 1.0, 1.0)
    }
}

/// Which update family drives a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Gossip on both `x` and the second-moment field `ũ`, rate
    /// `max(ũ, ε)` shared in the limit across nodes.
    Framework {
        rule: AdaptiveRule,
        schedule: UTildeSchedule,
    },
    /// Per-node adaptive rates, gossip on `x` only.
    Dadam,
    /// Constant unit rate.
    Dpsgd,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Framework {
                rule: AdaptiveRule::AmsGrad,
                ..
            } => "damsgrad",
            Method::Framework {
                rule: AdaptiveRule::AdaGrad,
                ..
            } => "dadagrad",
            Method::Framework {
                rule: AdaptiveRule::AdamStyle,
                ..
            } => "framework-adam",
            Method::Framework {
                rule: AdaptiveRule::None,
                ..
            } => "framework-none",
            Method::Dadam => "dadam",
            Method::Dpsgd => "dpsgd",
        }
    }

    pub fn init_states(&self, node_count: usize, x0: &[f64], hp: &HyperParams) -> Vec<NodeState> {
        let one = |_: usize| match self {
            Method::Framework { rule, .. } => NodeState::framework_init(x0, *rule, hp.epsilon),
            Method::Dadam => NodeState::dadam_init(x0, hp.epsilon),
            Method::Dpsgd => NodeState::dpsgd_init(x0),
        };
        (0..node_count).map(one).collect()
    }

    /// One synchronous round; `t` is 1-based.
    pub fn step(
        &self,
        states: &mut [NodeState],
        grads: &[Vec<f64>],
        mixing: &MixingMatrix,
        hp: &HyperParams,
        t: u64,
    ) -> Result<(), OptimizerError> {
        match self {
            Method::Framework { rule, schedule } => {
                framework_round(states, grads, mixing, *rule, *schedule, hp, t)
            }
            Method::Dadam => dadam_round(states, grads, mixing, hp),
            Method::Dpsgd => dpsgd_round(states, grads, mixing, hp),
        }
    }
}

fn check_shapes(
    states: &[NodeState],
    grads: &[Vec<f64>],
    mixing: &MixingMatrix,
) -> Result<usize, OptimizerError> {
    if states.len() != mixing.n() || grads.len() != states.len() {
        return Err(OptimizerError::NodeCountMismatch {
            states: states.len().min(grads.len()),
            matrix: mixing.n(),
        });
    }
    let dim = states[0].x.len();
    for (node, g) in grads.iter().enumerate() {
        if g.len() != dim {
            return Err(OptimizerError::DimMismatch {
                node,
                got: g.len(),
                want: dim,
            });
        }
        for (coord, gj) in g.iter().enumerate() {
            if !gj.is_finite() {
                return Err(OptimizerError::NonFinite {
                    node,
                    coord,
                    what: "gradient",
                });
            }
        }
    }
    Ok(dim)
}

fn check_iterate(states: &[NodeState]) -> Result<(), OptimizerError> {
    for (node, s) in states.iter().enumerate() {
        for (coord, xj) in s.x.iter().enumerate() {
            if !xj.is_finite() {
                return Err(OptimizerError::NonFinite {
                    node,
                    coord,
                    what: "iterate",
                });
            }
        }
    }
    Ok(())
}

/// `ũ − v̂_old + v̂_new`, skipped entirely when the two snapshots coincide.
fn half_step_u(state: &NodeState) -> Vec<f64> {
    if state.v_hat_prev == state.v_hat {
        return state.u_tilde.clone();
    }
    state
        .u_tilde
        .iter()
        .zip(state.v_hat_prev.iter().zip(state.v_hat.iter()))
        .map(|(u, (old, new))| u - old + new)
        .collect()
}

/// One round of the adaptive-consensus family: momentum and rule updates on
/// local gradients, one gossip application each for `x` and the half-step
/// `ũ`, then the descent step `x ← x_mixed − α·m/√max(ũ, ε)`.
pub fn framework_round(
    states: &mut [NodeState],
    grads: &[Vec<f64>],
    mixing: &MixingMatrix,
    rule: AdaptiveRule,
    schedule: UTildeSchedule,
    hp: &HyperParams,
    t: u64,
) -> Result<(), OptimizerError> {
    let dim = check_shapes(states, grads, mixing)?;
    let n = states.len();

    let mut u_half: Vec<Vec<f64>> = Vec::with_capacity(n);
    if schedule == UTildeSchedule::Lagged {
        u_half.extend(states.iter().map(half_step_u));
    }

    for (state, g) in states.iter_mut().zip(grads) {
        for (m, &gj) in state.m.iter_mut().zip(g) {
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * gj;
        }
        state.v_hat_prev.copy_from_slice(&state.v_hat);
        rule.update(t, hp, &mut state.v, &mut state.v_hat, g);
    }

    if schedule == UTildeSchedule::Premix {
        u_half.extend(states.iter().map(half_step_u));
    }

    let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let x_mixed = mixing.mix_vectors(&xs);
    let u_mixed = mixing.mix_vectors(&u_half);

    for (i, (xm, um)) in x_mixed.into_iter().zip(u_mixed).enumerate() {
        let state = &mut states[i];
        for j in 0..dim {
            state.u[j] = um[j].max(hp.epsilon);
            state.x[j] = xm[j] - hp.alpha * (state.m[j] / state.u[j].sqrt());
        }
        state.u_tilde = um;
    }
    check_iterate(states)
}

/// One round of `dadam`: the same momentum and second-moment updates, but
/// the rate `v̂` stays strictly local. The recursion
/// `v̂ ← β₃·v̂ + (1−β₃)·max(v̂, v)` keeps `v̂` nondecreasing, so it never
/// falls below its ε seed and needs no extra floor.
pub fn dadam_round(
    states: &mut [NodeState],
    grads: &[Vec<f64>],
    mixing: &MixingMatrix,
    hp: &HyperParams,
) -> Result<(), OptimizerError> {
    check_shapes(states, grads, mixing)?;

    let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let x_mixed = mixing.mix_vectors(&xs);

    for (i, xm) in x_mixed.into_iter().enumerate() {
        let state = &mut states[i];
        let g = &grads[i];
        for ((m, v), &gj) in state.m.iter_mut().zip(state.v.iter_mut()).zip(g) {
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * gj;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * gj * gj;
        }
        state.v_hat_prev.copy_from_slice(&state.v_hat);
        for (j, &xmj) in xm.iter().enumerate() {
            let old = state.v_hat_prev[j];
            state.v_hat[j] = hp.beta3 * old + (1.0 - hp.beta3) * old.max(state.v[j]);
            state.u[j] = state.v_hat[j];
            state.u_tilde[j] = state.v_hat[j];
            state.x[j] = xmj - hp.alpha * (state.m[j] / state.u[j].sqrt());
        }
    }
    check_iterate(states)
}

/// One round of decentralized SGD: `x ← x_mixed − α·g`. The rate fields
/// stay at their all-ones seed; `m` records the applied step direction.
pub fn dpsgd_round(
    states: &mut [NodeState],
    grads: &[Vec<f64>],
    mixing: &MixingMatrix,
    hp: &HyperParams,
) -> Result<(), OptimizerError> {
    let dim = check_shapes(states, grads, mixing)?;

    let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let x_mixed = mixing.mix_vectors(&xs);

    for (i, xm) in x_mixed.into_iter().enumerate() {
        let state = &mut states[i];
        let g = &grads[i];
        for j in 0..dim {
            state.m[j] = g[j];
            state.x[j] = xm[j] - hp.alpha * g[j];
        }
    }
    check_iterate(states)
}
