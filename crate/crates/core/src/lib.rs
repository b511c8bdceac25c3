//! Simulation laboratory for decentralized adaptive gradient methods.
//!
//! Nodes sit on a gossip graph, exchange iterates (and auxiliary consensus
//! state) through a symmetric doubly stochastic mixing matrix, and run
//! per-node adaptive updates. The crate provides:
//!
//! - [`graph`]: topologies, mixing matrices, spectral diagnostics;
//! - [`problems`]: the two-node piecewise counterexample, synthetic quadratics,
//!   a softmax-regression testbed with label-skew partitions, gradient noise;
//! - [`optimizers`]: per-round update operators (DADAM, the adaptive-consensus
//!   framework with pluggable rules, momentum D-PSGD);
//! - [`simulator`]: deterministic multi-round runs, metric traces, sweeps;
//! - [`analysis`]: stationarity-bound constants, lemma verifiers, rate fits.
//!
//! Everything is deterministic given a `u64` seed: RNG streams are derived
//! per (purpose, node, round), so traces are bit-identical across repeats
//! and thread counts.

pub mod analysis;
pub mod graph;
pub mod optimizers;
pub mod problems;
pub mod rng;
pub mod simulator;

#[cfg(test)]
pub(crate) mod test_support;

pub use graph::{GraphKind, MixingKind, MixingMatrix, Topology};
pub use optimizers::{AdaptiveRule, HyperParams, Method, NodeState, UTildeSchedule};
pub use problems::{HeterogeneityPlan, NoiseModel, Problem};
pub use simulator::{RunConfig, RunSummary, Trace, TraceRecord};
