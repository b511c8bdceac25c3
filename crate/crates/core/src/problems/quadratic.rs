//! Synthetic heterogeneous quadratics with controlled conditioning.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{Purpose, RngStreams};

use super::{LocalObjective, Problem, ProblemError};

/// Builds `f_i(x) = ½ (x − b_i)ᵀ A_i (x − b_i)` for each node.
///
/// Each `A_i = Q_i Λ Q_iᵀ` with a seeded random orthogonal `Q_i` and spectrum
/// in `[1/condition, 1]` (largest eigenvalue exactly 1, so `L = 1`). Centers
/// are `b_i = hetero · u_i` with `u_i` uniform in `[−1, 1]^d`; `hetero = 0`
/// gives identical objectives. The minimizer solves `(Σ A_i) x = Σ A_i b_i`.
///
/// Quadratic gradients are unbounded globally, so `g_inf` is the exact bound
/// `max_i ‖A_i‖∞ (R + ‖x* − b_i‖∞)` over the box `‖x − x*‖∞ ≤ R` with
/// `R = 2 (1 + max_i ‖b_i − x*‖∞)`; runs that stay in that box (all the
/// desk-scale ones do) satisfy the bounded-gradient assumption with it.
pub fn quadratic_problem(
    dim: usize,
    node_count: usize,
    condition: f64,
    hetero: f64,
    seed: u64,
) -> Result<Problem, ProblemError> {
    if dim < 1 {
        return Err(ProblemError::BadDim { dim });
    }
    if node_count < 1 {
        return Err(ProblemError::BadNodeCount { n: node_count });
    }
    if !condition.is_finite() || condition < 1.0 {
        return Err(ProblemError::BadCondition { condition });
    }
    if !hetero.is_finite() || hetero < 0.0 {
        return Err(ProblemError::BadHetero { hetero });
    }

    let streams = RngStreams::new(seed, Purpose::ProblemGen);
    let mut locals = Vec::with_capacity(node_count);
    for node in 0..node_count {
        let mut rng = streams.at(node, 0);

        let mut eigenvalues = vec![0.0; dim];
        eigenvalues[0] = 1.0;
        if dim > 1 {
            eigenvalues[dim - 1] = 1.0 / condition;
            for ev in eigenvalues.iter_mut().take(dim - 1).skip(1) {
                *ev = rng.gen_range(1.0 / condition..=1.0);
            }
        }

        let gaussian = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = gaussian.qr().q();
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues));
        let mut a = &q * lambda * q.transpose();
        // Symmetrize away the O(1e-16) asymmetry from the triple product.
        a = (&a + a.transpose()) * 0.5;

        let b = DVector::from_fn(dim, |_, _| hetero * rng.gen_range(-1.0..=1.0));
        locals.push(LocalObjective::Quadratic { a, b });
    }

    let (a_sum, ab_sum) = locals.iter().fold(
        (DMatrix::zeros(dim, dim), DVector::zeros(dim)),
        |(asum, absum), local| match local {
            LocalObjective::Quadratic { a, b } => (asum + a, absum + a * b),
            _ => unreachable!(),
        },
    );
    let x_star = a_sum
        .clone()
        .cholesky()
        .map(|chol| chol.solve(&ab_sum))
        .unwrap_or_else(|| a_sum.lu().solve(&ab_sum).expect("Σ A_i is invertible"));

    let mut max_center_dist = 0.0f64;
    for local in &locals {
        if let LocalObjective::Quadratic { b, .. } = local {
            let dist = (b - &x_star).amax();
            max_center_dist = max_center_dist.max(dist);
        }
    }
    let radius = 2.0 * (1.0 + max_center_dist);
    let mut g_inf = 0.0f64;
    for local in &locals {
        if let LocalObjective::Quadratic { a, b } = local {
            let row_norm = (0..dim)
                .map(|i| (0..dim).map(|j| a[(i, j)].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let center_dist = (b - &x_star).amax();
            g_inf = g_inf.max(row_norm * (radius + center_dist));
        }
    }

    Ok(Problem::assemble(
        dim,
        1.0,
        g_inf,
        Some(x_star.as_slice().to_vec()),
        locals,
        "quadratic",
    ))
}
