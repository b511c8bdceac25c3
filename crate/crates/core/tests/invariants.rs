//! Property tests for the structural invariants: doubly stochastic
//! contractions, monotone rate statistics, rate-mean conservation, metric
//! well-formedness, and bit-level determinism.

use dadopt_core::analysis::clipped_spread_pair;
use dadopt_core::graph::{GraphKind, MixingKind, MixingMatrix, Topology};
use dadopt_core::optimizers::{AdaptiveRule, HyperParams, Method, UTildeSchedule};
use dadopt_core::problems::NoiseModel;
use dadopt_core::simulator::{
    run, run_with_observer, GraphShape, GraphSpec, InitKind, ProblemSpec, RunConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeSet;

fn random_connected_edges(rng: &mut ChaCha12Rng, n: usize) -> Vec<(usize, usize)> {
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for v in 1..n {
        edges.insert((rng.gen_range(0..v), v));
    }
    for _ in 0..n / 2 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    edges.into_iter().collect()
}

fn rule_from(idx: usize) -> AdaptiveRule {
    [
        AdaptiveRule::AmsGrad,
        AdaptiveRule::AdaGrad,
        AdaptiveRule::None,
    ][idx % 3]
}

fn small_run_config(
    seed: u64,
    method: Method,
    beta1: f64,
    epsilon: f64,
    horizon: u64,
) -> RunConfig {
    RunConfig {
        problem: ProblemSpec::Quadratic {
            dim: 3,
            condition: 4.0,
            hetero: 1.0,
        },
        graph: GraphSpec {
            shape: GraphShape::Builtin(GraphKind::Cycle),
            nodes: 5,
            mixing: MixingKind::UniformNeighbor,
            extra_blend: None,
        },
        method,
        hp: HyperParams {
            alpha: 0.02,
            beta1,
            beta2: 0.99,
            beta3: 0.0,
            epsilon,
        },
        noise: NoiseModel::UniformBounded { sigma: 0.2 },
        horizon,
        seed,
        record_every: 1,
        init: InitKind::SharedRandom,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Max-degree mixing on any connected graph with a positive blend is a
    /// symmetric doubly stochastic matrix supported on the edge set, with
    /// contraction factor strictly below 1, and one application preserves
    /// the mean while never widening the value range.
    #[test]
    fn mixing_matrices_are_doubly_stochastic_contractions(
        seed in any::<u64>(),
        n in 3usize..10,
        gamma in 0.05f64..0.6,
    ) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let edges = random_connected_edges(&mut rng, n);
        let topo = Topology::new(n, &edges).unwrap();
        let w = MixingMatrix::mdm(&topo, gamma).unwrap();

        let m = w.as_matrix();
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let e = m[(i, j)];
                prop_assert!(e >= 0.0);
                prop_assert!((e - m[(j, i)]).abs() <= 1e-15);
                if i != j && e != 0.0 {
                    prop_assert!(topo.neighbors(i).contains(&j));
                }
                row += e;
            }
            prop_assert!((row - 1.0).abs() <= 1e-12);
        }
        prop_assert!(w.lambda() < 1.0);
        prop_assert!((w.eigenvalues()[0] - 1.0).abs() <= 1e-12);

        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mixed = w.mix_scalars(&vals);
        let before: f64 = vals.iter().sum::<f64>() / n as f64;
        let after: f64 = mixed.iter().sum::<f64>() / n as f64;
        prop_assert!((before - after).abs() <= 1e-12);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in &mixed {
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    /// The max-of-averages statistic never decreases and never exceeds the
    /// larger of its seed and the largest squared gradient seen.
    #[test]
    fn amsgrad_statistic_is_monotone_and_bounded(
        grads in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..40),
        beta2 in 0.0f64..0.999,
    ) {
        let hp = HyperParams { alpha: 0.1, beta1: 0.0, beta2, beta3: 0.0, epsilon: 1e-4 };
        let rule = AdaptiveRule::AmsGrad;
        let mut v = vec![0.0; 3];
        let mut v_hat = vec![rule.initial_v_hat(hp.epsilon); 3];
        let mut g_sq_max = [0.0f64; 3];
        for (t, g) in grads.iter().enumerate() {
            let prev = v_hat.clone();
            rule.update(t as u64 + 1, &hp, &mut v, &mut v_hat, g);
            for j in 0..3 {
                g_sq_max[j] = g_sq_max[j].max(g[j] * g[j]);
                prop_assert!(v_hat[j] >= prev[j]);
                prop_assert!(v_hat[j] <= hp.epsilon.max(g_sq_max[j]) * (1.0 + 1e-15));
            }
        }
    }

    /// The averaging statistic equals the plain running mean of squared
    /// gradients, recomputed from scratch each round.
    #[test]
    fn adagrad_statistic_is_the_running_mean(
        grads in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..30),
    ) {
        let hp = HyperParams { alpha: 0.1, beta1: 0.0, beta2: 0.9, beta3: 0.0, epsilon: 1e-4 };
        let rule = AdaptiveRule::AdaGrad;
        let mut v = vec![0.0; 2];
        let mut v_hat = vec![rule.initial_v_hat(hp.epsilon); 2];
        for (t, g) in grads.iter().enumerate() {
            rule.update(t as u64 + 1, &hp, &mut v, &mut v_hat, g);
            for j in 0..2 {
                let mean: f64 = grads[..=t].iter().map(|h| h[j] * h[j]).sum::<f64>()
                    / (t as f64 + 1.0);
                prop_assert!((v_hat[j] - mean).abs() <= 1e-12 * (1.0 + mean));
            }
        }
    }

    /// Raising the floor never increases the clipped spread.
    #[test]
    fn clipped_spread_is_monotone(
        a in prop::collection::vec(-50.0f64..50.0, 1..40),
        r in -60.0f64..60.0,
        dr in 0.0f64..30.0,
    ) {
        let (h, h_prime) = clipped_spread_pair(&a, r, r + dr).unwrap();
        prop_assert!(h_prime <= h + 1e-11);
    }

    /// Along any framework run: the applied rate is the gossiped field
    /// floored at epsilon (exactly), the floor holds, and the network mean
    /// of the gossiped field tracks the rule statistic's mean.
    #[test]
    fn framework_runs_conserve_the_rate_mean_and_floor(
        seed in any::<u64>(),
        rule_idx in 0usize..3,
        premix in any::<bool>(),
        beta1 in 0.0f64..0.95,
        horizon in 1u64..25,
    ) {
        let schedule = if premix { UTildeSchedule::Premix } else { UTildeSchedule::Lagged };
        let method = Method::Framework { rule: rule_from(rule_idx), schedule };
        let cfg = small_run_config(seed, method, beta1, 1e-3, horizon);
        let mut ok = Ok(());
        run_with_observer(&cfg, |ev| {
            if ok.is_err() {
                return;
            }
            let n = ev.after.len() as f64;
            for j in 0..3 {
                let mean_u_tilde: f64 = ev.after.iter().map(|s| s.u_tilde[j]).sum::<f64>() / n;
                let mean_ref: f64 = match schedule {
                    UTildeSchedule::Lagged => ev.after.iter().map(|s| s.v_hat_prev[j]).sum::<f64>() / n,
                    UTildeSchedule::Premix => ev.after.iter().map(|s| s.v_hat[j]).sum::<f64>() / n,
                };
                if (mean_u_tilde - mean_ref).abs() > 1e-10 {
                    ok = Err(format!("conservation broke at t = {}", ev.t));
                    return;
                }
                for s in ev.after {
                    if s.u[j] < cfg.hp.epsilon || s.u[j] != s.u_tilde[j].max(cfg.hp.epsilon) {
                        ok = Err(format!("rate floor broke at t = {}", ev.t));
                        return;
                    }
                }
            }
        }).unwrap();
        prop_assert!(ok.is_ok(), "{}", ok.unwrap_err());
    }

    /// The locally kept dadam statistic never decreases, for any blend
    /// weight, because it blends the old value with something at least as
    /// large.
    #[test]
    fn dadam_rates_never_decrease(
        seed in any::<u64>(),
        beta3 in 0.0f64..0.95,
        horizon in 1u64..30,
    ) {
        let mut cfg = small_run_config(seed, Method::Dadam, 0.9, 1e-3, horizon);
        cfg.hp.beta3 = beta3;
        let mut ok = true;
        run_with_observer(&cfg, |ev| {
            for (b, a) in ev.before.iter().zip(ev.after.iter()) {
                for j in 0..3 {
                    ok &= a.v_hat[j] >= b.v_hat[j] * (1.0 - 1e-15);
                }
            }
        }).unwrap();
        prop_assert!(ok);
    }

    /// Recorded metrics are well formed: rounds strictly increase from 1
    /// to the horizon, nonnegative where they must be, and the cumulative
    /// drift never decreases.
    #[test]
    fn run_metrics_are_well_formed(
        seed in any::<u64>(),
        method_idx in 0usize..4,
        horizon in 1u64..40,
    ) {
        let method = match method_idx {
            0 => Method::Framework { rule: AdaptiveRule::AmsGrad, schedule: UTildeSchedule::Lagged },
            1 => Method::Framework { rule: AdaptiveRule::AdaGrad, schedule: UTildeSchedule::Lagged },
            2 => Method::Dadam,
            _ => Method::Dpsgd,
        };
        let cfg = small_run_config(seed, method, 0.9, 1e-3, horizon);
        let trace = run(&cfg).unwrap();
        prop_assert_eq!(trace.records.first().unwrap().t, 1);
        prop_assert_eq!(trace.records.last().unwrap().t, horizon);
        let mut prev_t = 0;
        let mut prev_vt = -1.0;
        for r in &trace.records {
            prop_assert!(r.t > prev_t);
            prop_assert!(r.grad_norm_sq >= 0.0);
            prop_assert!(r.scaled_grad_metric >= 0.0);
            prop_assert!(r.consensus_err >= 0.0);
            prop_assert!(r.u_spread >= 0.0);
            prop_assert!(r.vt_cumulative >= prev_vt);
            prop_assert_eq!(r.xbar.len(), 3);
            prev_t = r.t;
            prev_vt = r.vt_cumulative;
        }
        prop_assert_eq!(trace.summary.rounds, horizon);
        prop_assert!(trace.summary.max_grad_inf >= 0.0);
    }

    /// The same configuration always produces byte-identical CSV and JSONL
    /// output, whatever the method or seed.
    #[test]
    fn traces_are_deterministic(seed in any::<u64>(), method_idx in 0usize..4) {
        let method = match method_idx {
            0 => Method::Framework { rule: AdaptiveRule::AmsGrad, schedule: UTildeSchedule::Lagged },
            1 => Method::Framework { rule: AdaptiveRule::None, schedule: UTildeSchedule::Premix },
            2 => Method::Dadam,
            _ => Method::Dpsgd,
        };
        let cfg = small_run_config(seed, method, 0.9, 1e-6, 20);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        prop_assert_eq!(a.csv_string(), b.csv_string());
        let mut ja = Vec::new();
        let mut jb = Vec::new();
        a.write_jsonl(&mut ja).unwrap();
        b.write_jsonl(&mut jb).unwrap();
        prop_assert_eq!(ja, jb);
    }
}
