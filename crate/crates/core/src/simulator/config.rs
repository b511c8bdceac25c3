//! The TOML configuration schema and its translation into a validated
//! [`RunConfig`](super::RunConfig).
//!
//! Unknown keys are rejected everywhere so typos fail loudly. Section
//! defaults: `beta1 = 0.9`, `beta2 = 0.999`, `beta3 = 0.0`,
//! `epsilon = 1e-6`, `u_premix = false`, `mixing = "uniform"`,
//! `noise.kind = "none"`, `seed = 0`, `record_every = 1`,
//! `init = "constant"` at `init_value = 0.0`.

use serde::Deserialize;
use thiserror::Error;

use crate::graph::{GraphKind, MixingKind};
use crate::optimizers::{AdaptiveRule, HyperParams, Method, UTildeSchedule};
use crate::problems::NoiseModel;

use super::{GraphShape, GraphSpec, InitKind, ProblemSpec, RunConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("missing key {key}")]
    MissingKey { key: &'static str },
    #[error("{key}: {why}")]
    BadValue { key: &'static str, why: String },
}

fn bad(key: &'static str, why: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key,
        why: why.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    problem: ProblemSection,
    graph: GraphSection,
    optimizer: OptimizerSection,
    #[serde(default)]
    noise: NoiseSection,
    run: RunSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSection {
    kind: ProblemKindTag,
    dim: Option<usize>,
    condition: Option<f64>,
    hetero: Option<f64>,
    num_classes: Option<usize>,
    classes_per_node: Option<usize>,
    samples_per_node: Option<usize>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum ProblemKindTag {
    Counterexample,
    Quadratic,
    Softmax,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphSection {
    kind: GraphKindTag,
    nodes: Option<usize>,
    /// Inline edge list for `kind = "custom"`, one `u v` pair per line.
    edge_list: Option<String>,
    #[serde(default)]
    mixing: MixingTag,
    gamma: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum GraphKindTag {
    Cycle,
    Hypercube,
    Complete,
    Star,
    Custom,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum MixingTag {
    #[default]
    Uniform,
    Mdm,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerSection {
    kind: OptimizerKindTag,
    alpha: f64,
    #[serde(default = "default_beta1")]
    beta1: f64,
    #[serde(default = "default_beta2")]
    beta2: f64,
    #[serde(default)]
    beta3: f64,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default)]
    u_premix: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-6
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum OptimizerKindTag {
    Damsgrad,
    Dadagrad,
    Dadam,
    Dpsgd,
    FrameworkNone,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    #[serde(default)]
    kind: NoiseTag,
    sigma: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum NoiseTag {
    #[default]
    None,
    UniformBounded,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    horizon: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_record_every")]
    record_every: u64,
    #[serde(default)]
    init: InitTag,
    init_value: Option<f64>,
}

fn default_record_every() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum InitTag {
    #[default]
    Constant,
    SharedRandom,
}

impl ConfigFile {
    pub fn from_toml_str(text: &str) -> Result<ConfigFile, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Translate into a validated runtime configuration. Problem and graph
    /// construction happen later, inside the run, so a config describing an
    /// expensive problem stays cheap to pass around.
    pub fn build(&self) -> Result<RunConfig, ConfigError> {
        let problem = self.problem_spec()?;
        let graph = self.graph_spec()?;
        let (method, hp) = self.optimizer_parts()?;
        let noise = self.noise_model()?;
        let init = self.init_kind()?;

        if self.run.horizon < 1 {
            return Err(bad("run.horizon", "must be at least 1"));
        }
        if self.run.record_every < 1 || self.run.record_every > self.run.horizon {
            return Err(bad(
                "run.record_every",
                format!(
                    "must lie in [1, horizon = {}], got {}",
                    self.run.horizon, self.run.record_every
                ),
            ));
        }

        Ok(RunConfig {
            problem,
            graph,
            method,
            hp,
            noise,
            horizon: self.run.horizon,
            seed: self.run.seed,
            record_every: self.run.record_every,
            init,
        })
    }

    fn problem_spec(&self) -> Result<ProblemSpec, ConfigError> {
        let p = &self.problem;
        let forbid = |cond: bool, key: &'static str, kind: &str| -> Result<(), ConfigError> {
            if cond {
                Err(bad(key, format!("not a {kind} parameter")))
            } else {
                Ok(())
            }
        };
        match p.kind {
            ProblemKindTag::Counterexample => {
                forbid(p.dim.is_some(), "problem.dim", "counterexample")?;
                forbid(p.condition.is_some(), "problem.condition", "counterexample")?;
                forbid(p.hetero.is_some(), "problem.hetero", "counterexample")?;
                forbid(
                    p.num_classes.is_some(),
                    "problem.num_classes",
                    "counterexample",
                )?;
                forbid(
                    p.classes_per_node.is_some(),
                    "problem.classes_per_node",
                    "counterexample",
                )?;
                forbid(
                    p.samples_per_node.is_some(),
                    "problem.samples_per_node",
                    "counterexample",
                )?;
                Ok(ProblemSpec::Counterexample)
            }
            ProblemKindTag::Quadratic => {
                forbid(p.num_classes.is_some(), "problem.num_classes", "quadratic")?;
                forbid(
                    p.classes_per_node.is_some(),
                    "problem.classes_per_node",
                    "quadratic",
                )?;
                forbid(
                    p.samples_per_node.is_some(),
                    "problem.samples_per_node",
                    "quadratic",
                )?;
                Ok(ProblemSpec::Quadratic {
                    dim: p
                        .dim
                        .ok_or(ConfigError::MissingKey { key: "problem.dim" })?,
                    condition: p.condition.unwrap_or(10.0),
                    hetero: p.hetero.unwrap_or(1.0),
                })
            }
            ProblemKindTag::Softmax => {
                forbid(p.condition.is_some(), "problem.condition", "softmax")?;
                forbid(p.hetero.is_some(), "problem.hetero", "softmax")?;
                Ok(ProblemSpec::Softmax {
                    dim: p
                        .dim
                        .ok_or(ConfigError::MissingKey { key: "problem.dim" })?,
                    num_classes: p.num_classes.ok_or(ConfigError::MissingKey {
                        key: "problem.num_classes",
                    })?,
                    classes_per_node: p.classes_per_node,
                    samples_per_node: p.samples_per_node.ok_or(ConfigError::MissingKey {
                        key: "problem.samples_per_node",
                    })?,
                })
            }
        }
    }

    fn graph_spec(&self) -> Result<GraphSpec, ConfigError> {
        let g = &self.graph;
        let mixing = match g.mixing {
            MixingTag::Uniform => {
                if g.gamma.is_some() {
                    return Err(bad("graph.gamma", "only meaningful for mixing = \"mdm\""));
                }
                MixingKind::UniformNeighbor
            }
            MixingTag::Mdm => MixingKind::Mdm {
                gamma: g.gamma.unwrap_or(0.0),
            },
        };
        let (shape, nodes) = match g.kind {
            GraphKindTag::Custom => {
                let text = g.edge_list.as_deref().ok_or(ConfigError::MissingKey {
                    key: "graph.edge_list",
                })?;
                let topo = crate::graph::Topology::from_edge_list_str(text, g.nodes)
                    .map_err(|e| bad("graph.edge_list", e.to_string()))?;
                let nodes = topo.n();
                (
                    GraphShape::Custom {
                        edges: topo.edges().to_vec(),
                    },
                    nodes,
                )
            }
            builtin => {
                if g.edge_list.is_some() {
                    return Err(bad(
                        "graph.edge_list",
                        "only meaningful for kind = \"custom\"",
                    ));
                }
                let kind = match builtin {
                    GraphKindTag::Cycle => GraphKind::Cycle,
                    GraphKindTag::Hypercube => GraphKind::Hypercube,
                    GraphKindTag::Complete => GraphKind::Complete,
                    GraphKindTag::Star => GraphKind::Star,
                    GraphKindTag::Custom => unreachable!(),
                };
                let nodes = g
                    .nodes
                    .ok_or(ConfigError::MissingKey { key: "graph.nodes" })?;
                (GraphShape::Builtin(kind), nodes)
            }
        };
        Ok(GraphSpec {
            shape,
            nodes,
            mixing,
            extra_blend: None,
        })
    }

    fn optimizer_parts(&self) -> Result<(Method, HyperParams), ConfigError> {
        let o = &self.optimizer;
        let schedule = if o.u_premix {
            UTildeSchedule::Premix
        } else {
            UTildeSchedule::Lagged
        };
        let method = match o.kind {
            OptimizerKindTag::Damsgrad => Method::Framework {
                rule: AdaptiveRule::AmsGrad,
                schedule,
            },
            OptimizerKindTag::Dadagrad => Method::Framework {
                rule: AdaptiveRule::AdaGrad,
                schedule,
            },
            OptimizerKindTag::FrameworkNone => Method::Framework {
                rule: AdaptiveRule::None,
                schedule,
            },
            OptimizerKindTag::Dadam | OptimizerKindTag::Dpsgd => {
                if o.u_premix {
                    return Err(bad(
                        "optimizer.u_premix",
                        "only the framework optimizers gossip a second-moment field",
                    ));
                }
                if o.kind == OptimizerKindTag::Dadam {
                    Method::Dadam
                } else {
                    Method::Dpsgd
                }
            }
        };
        let hp = HyperParams {
            alpha: o.alpha,
            beta1: o.beta1,
            beta2: o.beta2,
            beta3: o.beta3,
            epsilon: o.epsilon,
        };
        hp.validate().map_err(|e| bad("optimizer", e.to_string()))?;
        Ok((method, hp))
    }

    fn noise_model(&self) -> Result<NoiseModel, ConfigError> {
        match self.noise.kind {
            NoiseTag::None => {
                if self.noise.sigma.is_some() {
                    return Err(bad(
                        "noise.sigma",
                        "set kind = \"uniform-bounded\" to use it",
                    ));
                }
                Ok(NoiseModel::None)
            }
            NoiseTag::UniformBounded => {
                let sigma = self
                    .noise
                    .sigma
                    .ok_or(ConfigError::MissingKey { key: "noise.sigma" })?;
                let model = NoiseModel::UniformBounded { sigma };
                model
                    .validate()
                    .map_err(|e| bad("noise.sigma", e.to_string()))?;
                Ok(model)
            }
        }
    }

    fn init_kind(&self) -> Result<InitKind, ConfigError> {
        match self.run.init {
            InitTag::Constant => Ok(InitKind::Constant(self.run.init_value.unwrap_or(0.0))),
            InitTag::SharedRandom => {
                if self.run.init_value.is_some() {
                    return Err(bad(
                        "run.init_value",
                        "only meaningful for init = \"constant\"",
                    ));
                }
                Ok(InitKind::SharedRandom)
            }
        }
    }
}

/// Parse and translate in one step.
pub fn run_config_from_toml(text: &str) -> Result<RunConfig, ConfigError> {
    ConfigFile::from_toml_str(text)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
        [problem]
        kind = "quadratic"
        dim = 8
        condition = 25.0
        hetero = 0.5

        [graph]
        kind = "cycle"
        nodes = 5
        mixing = "mdm"
        gamma = 0.2

        [optimizer]
        kind = "damsgrad"
        alpha = 0.05
        beta1 = 0.8
        epsilon = 1.0
        u_premix = true

        [noise]
        kind = "uniform-bounded"
        sigma = 0.1

        [run]
        horizon = 100
        seed = 7
        record_every = 10
        init = "constant"
        init_value = -1.0
    "#;

    #[test]
    fn full_config_round_trips() {
        let cfg = run_config_from_toml(FULL).unwrap();
        assert!(matches!(cfg.problem, ProblemSpec::Quadratic { dim: 8, .. }));
        assert_eq!(cfg.graph.nodes, 5);
        assert_eq!(cfg.graph.mixing, MixingKind::Mdm { gamma: 0.2 });
        assert_eq!(
            cfg.method,
            Method::Framework {
                rule: AdaptiveRule::AmsGrad,
                schedule: UTildeSchedule::Premix,
            }
        );
        assert_eq!(cfg.hp.alpha, 0.05);
        assert_eq!(cfg.hp.beta1, 0.8);
        assert_eq!(cfg.hp.beta2, 0.999);
        assert_eq!(cfg.hp.epsilon, 1.0);
        assert_eq!(cfg.noise, NoiseModel::UniformBounded { sigma: 0.1 });
        assert_eq!(cfg.horizon, 100);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.record_every, 10);
        assert_eq!(cfg.init, InitKind::Constant(-1.0));
    }

    #[test]
    fn minimal_config_applies_defaults() {
        let cfg = run_config_from_toml(
            r#"
            [problem]
            kind = "counterexample"
            [graph]
            kind = "complete"
            nodes = 2
            [optimizer]
            kind = "dadam"
            alpha = 0.1
            [run]
            horizon = 10
            "#,
        )
        .unwrap();
        assert!(matches!(cfg.problem, ProblemSpec::Counterexample));
        assert_eq!(cfg.method, Method::Dadam);
        assert_eq!(cfg.hp.beta1, 0.9);
        assert_eq!(cfg.hp.beta2, 0.999);
        assert_eq!(cfg.hp.beta3, 0.0);
        assert_eq!(cfg.hp.epsilon, 1e-6);
        assert_eq!(cfg.noise, NoiseModel::None);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.record_every, 1);
        assert_eq!(cfg.init, InitKind::Constant(0.0));
    }

    #[test]
    fn missing_alpha_is_named() {
        let err = run_config_from_toml(
            r#"
            [problem]
            kind = "counterexample"
            [graph]
            kind = "complete"
            nodes = 2
            [optimizer]
            kind = "dadam"
            [run]
            horizon = 10
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn unknown_keys_and_kinds_are_rejected() {
        let err = ConfigFile::from_toml_str(
            r#"
            [problem]
            kind = "counterexample"
            typo_key = 1
            [graph]
            kind = "complete"
            nodes = 2
            [optimizer]
            kind = "dadam"
            alpha = 0.1
            [run]
            horizon = 10
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");

        let err = ConfigFile::from_toml_str(
            r#"
            [problem]
            kind = "cubic"
            [graph]
            kind = "complete"
            nodes = 2
            [optimizer]
            kind = "dadam"
            alpha = 0.1
            [run]
            horizon = 10
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("cubic"), "{err}");
    }

    #[test]
    fn custom_graph_takes_an_inline_edge_list() {
        let cfg = run_config_from_toml(
            r#"
            [problem]
            kind = "quadratic"
            dim = 2
            [graph]
            kind = "custom"
            edge_list = """
            0 1
            1 2
            2 0
            """
            [optimizer]
            kind = "dpsgd"
            alpha = 0.01
            [run]
            horizon = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.graph.nodes, 3);
        assert!(matches!(cfg.graph.shape, GraphShape::Custom { ref edges } if edges.len() == 3));
    }

    #[test]
    fn cross_field_misuse_is_rejected() {
        // gamma without mdm
        let err = run_config_from_toml(
            r#"
            [problem]
            kind = "counterexample"
            [graph]
            kind = "complete"
            nodes = 2
            gamma = 0.5
            [optimizer]
            kind = "dadam"
            alpha = 0.1
            [run]
            horizon = 10
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");

        // u_premix on a non-framework optimizer
        let err = run_config_from_toml(
            r#"
            [problem]
            kind = "counterexample"
            [graph]
            kind = "complete"
            nodes = 2
            [optimizer]
            kind = "dpsgd"
            alpha = 0.1
            u_premix = true
            [run]
            horizon = 10
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("u_premix"), "{err}");

        // record_every beyond the horizon
        let err = run_config_from_toml(
            r#"
            [problem]
            kind = "counterexample"
            [graph]
            kind = "complete"
            nodes = 2
            [optimizer]
            kind = "dadam"
            alpha = 0.1
            [run]
            horizon = 10
            record_every = 11
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("record_every"), "{err}");
    }

    #[test]
    fn softmax_requires_its_shape_keys() {
        let err = run_config_from_toml(
            r#"
            [problem]
            kind = "softmax"
            dim = 40
            num_classes = 10
            [graph]
            kind = "cycle"
            nodes = 5
            [optimizer]
            kind = "dadagrad"
            alpha = 0.01
            [run]
            horizon = 10
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("samples_per_node"), "{err}");
    }
}
