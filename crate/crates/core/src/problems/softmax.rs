//! Softmax-regression testbed on a synthetic Gaussian mixture, with
//! label-skew partitions across nodes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{Purpose, RngStreams};

use super::{LocalObjective, Problem, ProblemError};

const CLASS_MEAN_SPREAD: f64 = 2.0;
const FEATURE_NOISE: f64 = 0.5;

/// Which classes each node draws its samples from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeterogeneityPlan {
    num_classes: usize,
    assignment: Vec<Vec<usize>>,
}

impl HeterogeneityPlan {
    /// Every node sees every class: the shuffled-and-split regime.
    pub fn homogeneous(num_classes: usize, node_count: usize) -> Result<Self, ProblemError> {
        if num_classes < 2 {
            return Err(ProblemError::BadClasses {
                classes: num_classes,
            });
        }
        if node_count < 1 {
            return Err(ProblemError::BadNodeCount { n: node_count });
        }
        let all: Vec<usize> = (0..num_classes).collect();
        Ok(HeterogeneityPlan {
            num_classes,
            assignment: vec![all; node_count],
        })
    }

    /// Node `i` holds exactly classes `{cpn·i, …, cpn·i + cpn − 1}`; requires
    /// `classes_per_node · node_count == num_classes` so the subsets form a
    /// true partition with no overlap.
    pub fn disjoint(
        num_classes: usize,
        node_count: usize,
        classes_per_node: usize,
    ) -> Result<Self, ProblemError> {
        if num_classes < 2 {
            return Err(ProblemError::BadClasses {
                classes: num_classes,
            });
        }
        if node_count < 1 {
            return Err(ProblemError::BadNodeCount { n: node_count });
        }
        if classes_per_node == 0 || classes_per_node * node_count != num_classes {
            return Err(ProblemError::PlanNotPartition {
                classes_per_node,
                node_count,
                num_classes,
            });
        }
        let assignment = (0..node_count)
            .map(|i| (classes_per_node * i..classes_per_node * (i + 1)).collect())
            .collect();
        Ok(HeterogeneityPlan {
            num_classes,
            assignment,
        })
    }

    /// Arbitrary assignment; every node needs at least one valid class.
    pub fn custom(num_classes: usize, assignment: Vec<Vec<usize>>) -> Result<Self, ProblemError> {
        if num_classes < 2 {
            return Err(ProblemError::BadClasses {
                classes: num_classes,
            });
        }
        for (node, classes) in assignment.iter().enumerate() {
            if classes.is_empty() {
                return Err(ProblemError::PlanEmptyNode { node });
            }
            for &class in classes {
                if class >= num_classes {
                    return Err(ProblemError::PlanClassOutOfRange { class, num_classes });
                }
            }
        }
        Ok(HeterogeneityPlan {
            num_classes,
            assignment,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn classes(&self, node: usize) -> &[usize] {
        &self.assignment[node]
    }
}

/// Multinomial logistic regression on a seeded Gaussian mixture.
///
/// The parameter is the row-major `num_classes × (dim/num_classes)` weight
/// matrix, so `dim` must be divisible by `num_classes`. Class `c` has mean
/// `μ_c ~ 2·N(0, I)`; features are `μ_c + 0.5·N(0, I)`. Within a node,
/// classes are assigned round-robin from its plan subset, so the empirical
/// class distribution is exactly uniform whenever `samples_per_node` is a
/// multiple of the subset size.
///
/// `L` is the standard upper bound `max_i (1/(2 n_i)) Σ_s ‖φ_s‖²` (the
/// softmax logit Hessian is at most ½·I in the PSD order), and `g_inf` the
/// exact global bound `max_i max_k (1/n_i) Σ_s |φ_{s,k}|` (softmax residuals
/// have magnitude at most 1).
pub fn softmax_problem(
    dim: usize,
    num_classes: usize,
    node_count: usize,
    plan: &HeterogeneityPlan,
    samples_per_node: usize,
    seed: u64,
) -> Result<Problem, ProblemError> {
    if dim < 1 {
        return Err(ProblemError::BadDim { dim });
    }
    if num_classes < 2 {
        return Err(ProblemError::BadClasses {
            classes: num_classes,
        });
    }
    if !dim.is_multiple_of(num_classes) {
        return Err(ProblemError::DimNotDivisible {
            dim,
            classes: num_classes,
        });
    }
    if node_count < 1 {
        return Err(ProblemError::BadNodeCount { n: node_count });
    }
    if samples_per_node == 0 {
        return Err(ProblemError::NoSamples);
    }
    if plan.num_classes() != num_classes || plan.node_count() != node_count {
        return Err(ProblemError::PlanMismatch {
            plan_nodes: plan.node_count(),
            node_count,
        });
    }
    let feat_dim = dim / num_classes;

    let mean_streams = RngStreams::new(seed, Purpose::ClassMeans);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            let mut rng = mean_streams.at(c, 0);
            (0..feat_dim)
                .map(|_| CLASS_MEAN_SPREAD * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let feature_streams = RngStreams::new(seed, Purpose::Features);
    let mut locals = Vec::with_capacity(node_count);
    for node in 0..node_count {
        let subset = plan.classes(node);
        let mut features = Vec::with_capacity(samples_per_node);
        let mut labels = Vec::with_capacity(samples_per_node);
        for s in 0..samples_per_node {
            let class = subset[s % subset.len()];
            let mut rng = feature_streams.at(node, s as u64);
            let phi: Vec<f64> = means[class]
                .iter()
                .map(|&m| m + FEATURE_NOISE * rng.sample::<f64, _>(StandardNormal))
                .collect();
            features.push(phi);
            labels.push(class);
        }
        locals.push(LocalObjective::Softmax {
            features,
            labels,
            classes: num_classes,
            feat_dim,
        });
    }

    let mut l_smooth = 0.0f64;
    let mut g_inf = 0.0f64;
    for local in &locals {
        if let LocalObjective::Softmax { features, .. } = local {
            let n = features.len() as f64;
            let mean_sq_norm: f64 = features
                .iter()
                .map(|phi| phi.iter().map(|f| f * f).sum::<f64>())
                .sum::<f64>()
                / n;
            l_smooth = l_smooth.max(0.5 * mean_sq_norm);
            for k in 0..feat_dim {
                let mean_abs: f64 = features.iter().map(|phi| phi[k].abs()).sum::<f64>() / n;
                g_inf = g_inf.max(mean_abs);
            }
        }
    }

    Ok(Problem::assemble(
        dim, l_smooth, g_inf, None, locals, "softmax",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::finite_diff_grad;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn plans_partition_and_cover() {
        let plan = HeterogeneityPlan::disjoint(10, 5, 2).unwrap();
        for node in 0..5 {
            assert_eq!(plan.classes(node), &[2 * node, 2 * node + 1]);
        }
        let homo = HeterogeneityPlan::homogeneous(10, 5).unwrap();
        for node in 0..5 {
            assert_eq!(homo.classes(node).len(), 10);
        }
        assert!(matches!(
            HeterogeneityPlan::disjoint(10, 4, 2),
            Err(ProblemError::PlanNotPartition { .. })
        ));
        assert!(matches!(
            HeterogeneityPlan::custom(4, vec![vec![0], vec![]]),
            Err(ProblemError::PlanEmptyNode { node: 1 })
        ));
        assert!(matches!(
            HeterogeneityPlan::custom(4, vec![vec![0], vec![7]]),
            Err(ProblemError::PlanClassOutOfRange { class: 7, .. })
        ));
    }

    #[test]
    fn gradient_at_zero_matches_residual_formula() {
        // One sample per class per node; at x = 0 the softmax is uniform, so
        // the gradient row for class c must be (1/n)Σ_s (1/C − [y_s = c])·φ_s.
        let classes = 4;
        let plan = HeterogeneityPlan::homogeneous(classes, 2).unwrap();
        let p = softmax_problem(4 * 3, classes, 2, &plan, classes, 31).unwrap();
        let x = vec![0.0; p.dim()];
        for node in 0..2 {
            let (features, labels) = p.softmax_samples(node).unwrap();
            assert_eq!(features.len(), classes);
            let n = features.len() as f64;
            let mut expected = vec![0.0; p.dim()];
            for (phi, &y) in features.iter().zip(labels.iter()) {
                for c in 0..classes {
                    let residual = 1.0 / classes as f64 - if c == y { 1.0 } else { 0.0 };
                    for (k, &f) in phi.iter().enumerate() {
                        expected[c * 3 + k] += residual * f / n;
                    }
                }
            }
            let g = p.local_grad(node, &x);
            for (a, b) in g.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let plan = HeterogeneityPlan::disjoint(4, 2, 2).unwrap();
        let p = softmax_problem(8, 4, 2, &plan, 6, 13).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..32 {
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for node in 0..2 {
                let fd = finite_diff_grad(|pt| p.local_loss(node, pt), &x, 1e-6);
                let g = p.local_grad(node, &x);
                for (a, b) in fd.iter().zip(g.iter()) {
                    assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn pooled_loss_equals_weighted_node_mean() {
        // Equal sample counts per node: the mean of node losses must equal
        // the loss over the pooled dataset exactly (same summands).
        let plan = HeterogeneityPlan::disjoint(6, 3, 2).unwrap();
        let p = softmax_problem(12, 6, 3, &plan, 8, 77).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-0.5..0.5)).collect();

        let mut pooled = 0.0;
        let mut total = 0usize;
        for node in 0..3 {
            let (features, labels) = p.softmax_samples(node).unwrap();
            for (phi, &y) in features.iter().zip(labels.iter()) {
                let logits: Vec<f64> = (0..6)
                    .map(|c| {
                        x[c * 2..(c + 1) * 2]
                            .iter()
                            .zip(phi.iter())
                            .map(|(w, f)| w * f)
                            .sum()
                    })
                    .collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
                pooled += lse - logits[y];
                total += 1;
            }
        }
        pooled /= total as f64;
        assert!((p.mean_loss(&x) - pooled).abs() < 1e-12);
    }

    #[test]
    fn class_distribution_is_exactly_uniform() {
        let plan = HeterogeneityPlan::disjoint(10, 5, 2).unwrap();
        let p = softmax_problem(20, 10, 5, &plan, 20, 3).unwrap();
        for node in 0..5 {
            let (_, labels) = p.softmax_samples(node).unwrap();
            let mut counts = [0usize; 10];
            for &y in labels {
                counts[y] += 1;
            }
            for &c in plan.classes(node) {
                assert_eq!(counts[c], 10);
            }
            assert_eq!(counts.iter().sum::<usize>(), 20);
        }
    }

    #[test]
    fn stated_bounds_hold_globally() {
        let plan = HeterogeneityPlan::homogeneous(4, 2).unwrap();
        let p = softmax_problem(8, 4, 2, &plan, 8, 19).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        // The softmax gradient bound is global, so wild points are fair game.
        for _ in 0..64 {
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-50.0..50.0)).collect();
            for node in 0..2 {
                let g = p.local_grad(node, &x);
                let max_abs = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
                assert!(max_abs <= p.g_inf() * (1.0 + 1e-12));
            }
        }
        assert!(p.l_smooth() > 0.0);
        assert!(p.x_star().is_none());
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let plan = HeterogeneityPlan::homogeneous(4, 2).unwrap();
        assert!(matches!(
            softmax_problem(10, 4, 2, &plan, 4, 1),
            Err(ProblemError::DimNotDivisible {
                dim: 10,
                classes: 4
            })
        ));
        assert!(matches!(
            softmax_problem(8, 4, 3, &plan, 4, 1),
            Err(ProblemError::PlanMismatch { .. })
        ));
        assert!(matches!(
            softmax_problem(8, 4, 2, &plan, 0, 1),
            Err(ProblemError::NoSamples)
        ));
    }

    #[test]
    fn construction_is_deterministic_in_the_seed() {
        let plan = HeterogeneityPlan::disjoint(4, 2, 2).unwrap();
        let p1 = softmax_problem(8, 4, 2, &plan, 5, 55).unwrap();
        let p2 = softmax_problem(8, 4, 2, &plan, 5, 55).unwrap();
        let (f1, _) = p1.softmax_samples(0).unwrap();
        let (f2, _) = p2.softmax_samples(0).unwrap();
        assert_eq!(f1, f2);
        let p3 = softmax_problem(8, 4, 2, &plan, 5, 56).unwrap();
        let (f3, _) = p3.softmax_samples(0).unwrap();
        assert_ne!(f1, f3);
    }
}
