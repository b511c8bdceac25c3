//! The `verify` batteries: rerun the per-round identities and the
//! bound-shaped inequalities on live simulations and report residuals and
//! margins. Both suites are deterministic given `--seed`.
//!
//! `lemmas` checks exact algebra (residual near machine precision or the
//! check fails); `bounds` checks inequalities whose right-hand sides are
//! evaluated with the realized gradient bound, so a margin above 1 is a
//! genuine violation, not Monte-Carlo noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use dadopt_core::analysis::{
    bound_constants, clipped_spread, clipped_spread_pair, stationarity_bound, ZSequenceProbe,
};
use dadopt_core::graph::{GraphKind, MixingKind};
use dadopt_core::optimizers::{AdaptiveRule, HyperParams, Method, UTildeSchedule};
use dadopt_core::problems::NoiseModel;
use dadopt_core::simulator::{
    run, run_with_observer, GraphShape, GraphSpec, InitKind, ProblemSpec, RoundEvent, RunConfig,
    SimError,
};

#[derive(Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    /// Largest absolute deviation of an identity check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    /// measured / bound of an inequality check; above 1 is a violation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Serialize)]
pub struct Report {
    pub suite: &'static str,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl Report {
    fn from_checks(suite: &'static str, checks: Vec<Check>) -> Report {
        Report {
            suite,
            pass: checks.iter().all(|c| c.pass),
            checks,
        }
    }

    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }
}

fn residual_check(name: &'static str, residual: f64, tolerance: f64, what: &str) -> Check {
    Check {
        name,
        pass: residual <= tolerance,
        residual: Some(residual),
        margin: None,
        tolerance,
        detail: format!("{what}: residual {residual:.3e} (tolerance {tolerance:.1e})"),
    }
}

fn margin_check(name: &'static str, measured: f64, bound: f64, what: &str) -> Check {
    let margin = measured / bound;
    Check {
        name,
        pass: margin <= 1.0,
        residual: None,
        margin: Some(margin),
        tolerance: 1.0,
        detail: format!(
            "{what}: measured {measured:.3e} against bound {bound:.3e} (margin {margin:.3})"
        ),
    }
}

fn cycle5(mixing: MixingKind) -> GraphSpec {
    GraphSpec {
        shape: GraphShape::Builtin(GraphKind::Cycle),
        nodes: 5,
        mixing,
        extra_blend: None,
    }
}

fn quad8() -> ProblemSpec {
    ProblemSpec::Quadratic {
        dim: 8,
        condition: 10.0,
        hetero: 1.0,
    }
}

/// Per-node mean of the gossiped rate field against the per-node mean of
/// what the schedule injected; gossip must conserve it exactly.
fn conservation_residual(event: &RoundEvent<'_>, schedule: UTildeSchedule) -> f64 {
    let n = event.after.len() as f64;
    let dim = event.after[0].u_tilde.len();
    let mut worst = 0.0f64;
    for j in 0..dim {
        let mut tilde = 0.0;
        let mut injected = 0.0;
        for state in event.after {
            tilde += state.u_tilde[j];
            injected += match schedule {
                UTildeSchedule::Lagged => state.v_hat_prev[j],
                UTildeSchedule::Premix => state.v_hat[j],
            };
        }
        worst = worst.max(((tilde - injected) / n).abs());
    }
    worst
}

/// Neumaier-compensated sum for the spread-identity reference; a naive sum
/// drifts past 1e-12 on 64 values of size 10.
fn compensated_sum<I: Iterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn probe_config(rule: AdaptiveRule, schedule: UTildeSchedule, beta1: f64, seed: u64) -> RunConfig {
    RunConfig {
        problem: ProblemSpec::Quadratic {
            dim: 4,
            condition: 10.0,
            hetero: 1.0,
        },
        graph: cycle5(MixingKind::Mdm { gamma: 0.2 }),
        method: Method::Framework { rule, schedule },
        // A floor below the gradient scale keeps the rates moving, so the
        // identity checks see a nonzero rate-variation term.
        hp: HyperParams {
            alpha: 0.01,
            beta1,
            beta2: 0.99,
            beta3: 0.0,
            epsilon: 0.01,
        },
        noise: NoiseModel::UniformBounded { sigma: 0.2 },
        horizon: 60,
        seed,
        record_every: 60,
        init: InitKind::SharedRandom,
    }
}

pub fn lemmas(seed: u64) -> Result<Report, SimError> {
    let mut checks = Vec::new();

    for (rule, name) in [
        (AdaptiveRule::None, "z-identity-none"),
        (AdaptiveRule::AmsGrad, "z-identity-amsgrad"),
        (AdaptiveRule::AdaGrad, "z-identity-adagrad"),
    ] {
        let mut worst = 0.0f64;
        for (k, &beta1) in [0.0, 0.5, 0.9].iter().enumerate() {
            let cfg = probe_config(
                rule,
                UTildeSchedule::Lagged,
                beta1,
                seed.wrapping_add(k as u64),
            );
            let mut probe = ZSequenceProbe::new(&cfg.hp);
            run_with_observer(&cfg, |event| probe.observe(event))?;
            worst = worst.max(probe.max_residual());
        }
        checks.push(residual_check(
            name,
            worst,
            1e-10,
            "per-round descent identity of the momentum-corrected mean iterate, beta1 in {0, 0.5, 0.9}",
        ));
    }

    for (schedule, name) in [
        (UTildeSchedule::Lagged, "u-tilde-conservation-lagged"),
        (UTildeSchedule::Premix, "u-tilde-conservation-premix"),
    ] {
        let cfg = probe_config(AdaptiveRule::AmsGrad, schedule, 0.9, seed.wrapping_add(9));
        let mut worst = 0.0f64;
        run_with_observer(&cfg, |event| {
            worst = worst.max(conservation_residual(event, schedule));
        })?;
        checks.push(residual_check(
            name,
            worst,
            1e-10,
            "gossip conserves the node-mean of the rate field it spreads",
        ));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst_mono = 0.0f64;
    let mut worst_eq = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let r = rng.gen_range(-12.0..12.0);
        let r_prime = r + rng.gen_range(0.0..8.0);
        let (h_r, h_rp) = clipped_spread_pair(&a, r, r_prime).expect("a nonempty, r' >= r");
        worst_mono = worst_mono.max(h_rp - h_r);

        let below = a.iter().copied().fold(f64::INFINITY, f64::min) - rng.gen_range(0.1..4.0);
        let h = clipped_spread(&a, below).expect("a is nonempty");
        let plain = compensated_sum(
            a.iter()
                .map(|&x| (x - compensated_sum(a.iter().copied()) / n as f64).abs()),
        );
        worst_eq = worst_eq.max((h - plain).abs());
    }
    checks.push(residual_check(
        "clipped-spread-monotone",
        worst_mono.max(0.0),
        1e-12,
        "flooring at a larger threshold never increases the L1 spread, 1000 random instances",
    ));
    checks.push(residual_check(
        "clipped-spread-identity",
        worst_eq,
        1e-12,
        "a floor below min(a) leaves the spread untouched, 1000 random instances",
    ));

    Ok(Report::from_checks("lemmas", checks))
}

pub fn bounds(seed: u64) -> Result<Report, SimError> {
    let mut checks = Vec::new();

    // Deviation-from-consensus ceiling, with the stepsize inside the premise
    // alpha <= sqrt(epsilon)/(16 L) so the guarantee applies.
    let consensus_cfg = RunConfig {
        problem: quad8(),
        graph: cycle5(MixingKind::UniformNeighbor),
        method: Method::Framework {
            rule: AdaptiveRule::AmsGrad,
            schedule: UTildeSchedule::Lagged,
        },
        hp: HyperParams {
            alpha: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            beta3: 0.0,
            epsilon: 1.0,
        },
        noise: NoiseModel::UniformBounded { sigma: 0.1 },
        horizon: 4000,
        seed: seed.wrapping_add(7),
        record_every: 1,
        init: InitKind::Constant(0.5),
    };
    let trace = run(&consensus_cfg)?;
    let summary = &trace.summary;
    let dim = consensus_cfg.problem.dim();
    let g_inf = summary.max_grad_inf;
    let hp = &consensus_cfg.hp;
    let ceiling = 1.01
        * hp.alpha.powi(2)
        * (1.0 / (1.0 - summary.lambda)).powi(2)
        * dim as f64
        * g_inf
        * g_inf
        / hp.epsilon;
    checks.push(margin_check(
        "consensus-bound",
        summary.max_consensus_err,
        ceiling,
        "worst per-round deviation from the mean iterate",
    ));

    // Stationarity bound on the same run, every constant evaluated from the
    // realized trajectory (gradient bound, contraction factor, rate drift).
    let problem = consensus_cfg
        .problem
        .build(consensus_cfg.graph.nodes, consensus_cfg.seed)?;
    let x1 = vec![0.5; dim];
    let f_gap = problem.mean_loss(&x1) - problem.f_star().expect("quadratics know their optimum");
    let constants = bound_constants(
        problem.l_smooth(),
        g_inf,
        hp.epsilon,
        hp.beta1,
        summary.lambda,
    )
    .expect("run parameters are inside the constants' domain");
    let sigma = match consensus_cfg.noise {
        NoiseModel::UniformBounded { sigma } => sigma,
        NoiseModel::None => 0.0,
    };
    let rhs = stationarity_bound(
        &constants,
        hp.alpha,
        consensus_cfg.horizon,
        dim,
        consensus_cfg.graph.nodes,
        f_gap,
        sigma,
        summary.vt_total,
    );
    checks.push(margin_check(
        "stationarity-bound",
        summary.avg_scaled_grad,
        rhs,
        "time-averaged scaled gradient metric",
    ));

    // Rate-drift ceilings. A small floor keeps epsilon below the realized
    // gradient bound, the regime in which the ceilings are meaningful.
    for (rule, name) in [
        (AdaptiveRule::AmsGrad, "rate-drift-cap-amsgrad"),
        (AdaptiveRule::AdaGrad, "rate-drift-cap-adagrad"),
    ] {
        let cfg = RunConfig {
            problem: quad8(),
            graph: cycle5(MixingKind::UniformNeighbor),
            method: Method::Framework {
                rule,
                schedule: UTildeSchedule::Lagged,
            },
            hp: HyperParams {
                alpha: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                beta3: 0.0,
                epsilon: 1e-6,
            },
            noise: NoiseModel::UniformBounded { sigma: 0.1 },
            horizon: 2000,
            seed: seed.wrapping_add(11),
            record_every: 2000,
            init: InitKind::SharedRandom,
        };
        let summary = run(&cfg)?.summary;
        let g_inf = summary.max_grad_inf;
        let base = (cfg.graph.nodes * cfg.problem.dim()) as f64 * g_inf * g_inf;
        let cap = match rule {
            AdaptiveRule::AdaGrad => base * (1.0 + (cfg.horizon as f64).ln()),
            _ => base,
        };
        checks.push(margin_check(
            name,
            summary.vt_total,
            cap,
            "cumulative rate drift V_T",
        ));
    }

    Ok(Report::from_checks("bounds", checks))
}
