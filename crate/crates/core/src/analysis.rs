//! The stationarity-bound constants, bound evaluation, numerical checks of
//! the supporting identities, and convergence-rate fitting.
//!
//! Everything here is a pure function of recorded run data; nothing feeds
//! back into the optimizers.

use serde::Serialize;
use thiserror::Error;

use crate::optimizers::HyperParams;
use crate::simulator::RoundEvent;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{name} = {value} is out of range: {requirement}")]
    BadParam {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("need at least {min} data points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("{what}[{index}] = {value} must be positive")]
    NonPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },
}

/// The five constants of the stationarity bound, with the problem and
/// network parameters they were computed from echoed for provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub l: f64,
    pub g_inf: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub lambda: f64,
}

/// Evaluate the five bound constants:
///
/// ```text
/// C1 = max(4, 4L/ε)
/// C2 = 6·((β₁/(1−β₁))² + (1/(1−λ))²)·L·G∞²/ε^1.5
/// C3 = 16·L²·G∞² / ((1−λ)·ε²)
/// C4 = (2/(ε^1.5·(1−λ)))·(λ + β₁/(1−β₁))·G∞²
/// C5 = (2/(ε²·(1−λ)))·L·(λ + β₁/(1−β₁))·G∞² + (4/(ε²·(1−λ)))·L·G∞²
/// ```
pub fn bound_constants(
    l: f64,
    g_inf: f64,
    epsilon: f64,
    beta1: f64,
    lambda: f64,
) -> Result<BoundConstants, AnalysisError> {
    let checks = [
        ("L", l, l.is_finite() && l > 0.0, "must be positive"),
        (
            "G_inf",
            g_inf,
            g_inf.is_finite() && g_inf >= 0.0,
            "must be nonnegative",
        ),
        (
            "epsilon",
            epsilon,
            epsilon.is_finite() && epsilon > 0.0,
            "must be positive",
        ),
        (
            "beta1",
            beta1,
            (0.0..1.0).contains(&beta1),
            "must lie in [0, 1)",
        ),
        (
            "lambda",
            lambda,
            (0.0..1.0).contains(&lambda),
            "must lie in [0, 1); the bound diverges at lambda = 1",
        ),
    ];
    for (name, value, ok, requirement) in checks {
        if !ok {
            return Err(AnalysisError::BadParam {
                name,
                value,
                requirement,
            });
        }
    }

    let momentum = beta1 / (1.0 - beta1);
    let inv_gap = 1.0 / (1.0 - lambda);
    let g_sq = g_inf * g_inf;
    let eps_15 = epsilon.powf(1.5);

    Ok(BoundConstants {
        c1: (4.0f64).max(4.0 * l / epsilon),
        c2: 6.0 * (momentum * momentum + inv_gap * inv_gap) * l * g_sq / eps_15,
        c3: 16.0 * l * l * g_sq * inv_gap / (epsilon * epsilon),
        c4: 2.0 / (eps_15 * (1.0 - lambda)) * (lambda + momentum) * g_sq,
        c5: 2.0 / (epsilon * epsilon * (1.0 - lambda)) * l * (lambda + momentum) * g_sq
            + 4.0 / (epsilon * epsilon * (1.0 - lambda)) * l * g_sq,
        l,
        g_inf,
        epsilon,
        beta1,
        lambda,
    })
}

/// The right-hand side of the stationarity bound on the time-averaged
/// scaled gradient metric:
///
/// ```text
/// C1·(f_gap/(T·α) + α·d·σ²/N) + C2·α²·d + C3·α³·d
///   + (1/(T·√N))·(C4 + C5·α)·V_T
/// ```
#[allow(clippy::too_many_arguments)]
pub fn stationarity_bound(
    constants: &BoundConstants,
    alpha: f64,
    horizon: u64,
    dim: usize,
    nodes: usize,
    f_gap: f64,
    sigma: f64,
    vt: f64,
) -> f64 {
    let t = horizon as f64;
    let d = dim as f64;
    let n = nodes as f64;
    constants.c1 * (f_gap / (t * alpha) + alpha * d * sigma * sigma / n)
        + constants.c2 * alpha * alpha * d
        + constants.c3 * alpha * alpha * alpha * d
        + (constants.c4 + constants.c5 * alpha) * vt / (t * n.sqrt())
}

/// Per-round check of the descent identity for the momentum-corrected mean
/// iterate `Z_t = X̄_t + (β₁/(1−β₁))·(X̄_t − X̄_{t−1})` (with `X̄₀ = X̄₁`):
///
/// ```text
/// Z_{t+1} − Z_t = α·(β₁/(1−β₁))·(1/N)·Σ_i m_{t−1,i} ⊙ (1/√u_{t−1,i} − 1/√u_{t,i})
///               − α·(1/N)·Σ_i g_{t,i}/√u_{t,i}
/// ```
///
/// Z is reconstructed from the observed mean-iterate history so the
/// optimizer itself stays untouched. Feed every [`RoundEvent`] of a
/// framework run to [`observe`](Self::observe) and read off the largest
/// absolute deviation between the two sides.
#[derive(Clone, Debug)]
pub struct ZSequenceProbe {
    alpha: f64,
    beta1: f64,
    xbar_prev: Option<Vec<f64>>,
    max_residual: f64,
    rounds: u64,
}

impl ZSequenceProbe {
    pub fn new(hp: &HyperParams) -> ZSequenceProbe {
        ZSequenceProbe {
            alpha: hp.alpha,
            beta1: hp.beta1,
            xbar_prev: None,
            max_residual: 0.0,
            rounds: 0,
        }
    }

    pub fn observe(&mut self, event: &RoundEvent<'_>) {
        let n = event.before.len();
        let dim = event.before[0].x.len();
        let inv_n = 1.0 / n as f64;
        let ratio = self.beta1 / (1.0 - self.beta1);

        let mean = |states: &[crate::optimizers::NodeState], j: usize| -> f64 {
            states.iter().map(|s| s.x[j]).sum::<f64>() * inv_n
        };

        for j in 0..dim {
            let xbar_t = mean(event.before, j);
            let xbar_next = mean(event.after, j);
            let xbar_prev = self.xbar_prev.as_ref().map_or(xbar_t, |x| x[j]);

            let z_next = xbar_next + ratio * (xbar_next - xbar_t);
            let z_t = xbar_t + ratio * (xbar_t - xbar_prev);
            let lhs = z_next - z_t;

            let mut momentum_term = 0.0;
            let mut gradient_term = 0.0;
            for i in 0..n {
                let u_prev = event.before[i].u[j];
                let u_now = event.after[i].u[j];
                momentum_term += event.before[i].m[j] * (1.0 / u_prev.sqrt() - 1.0 / u_now.sqrt());
                gradient_term += event.grads[i][j] / u_now.sqrt();
            }
            let rhs =
                self.alpha * ratio * momentum_term * inv_n - self.alpha * gradient_term * inv_n;
            self.max_residual = self.max_residual.max((lhs - rhs).abs());
        }

        self.xbar_prev = Some((0..dim).map(|j| mean(event.before, j)).collect());
        self.rounds += 1;
    }

    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }
}

/// Neumaier-compensated sum; keeps the result within one rounding of the
/// exact sum so the spread checks below hold to 1e-12 even on long lists.
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

/// `h(r) = Σ_i |max(a_i, r) − mean_j max(a_j, r)|`: the L1 spread of the
/// values after flooring at `r`. Non-increasing in `r`; equal to the plain
/// spread for `r ≤ min(a)` and zero for `r ≥ max(a)`.
pub fn clipped_spread(a: &[f64], r: f64) -> Result<f64, AnalysisError> {
    if a.is_empty() {
        return Err(AnalysisError::TooFewPoints { min: 1, got: 0 });
    }
    let floored: Vec<f64> = a.iter().map(|&x| x.max(r)).collect();
    let mean = compensated_sum(floored.iter().copied()) / floored.len() as f64;
    Ok(compensated_sum(floored.iter().map(|x| (x - mean).abs())))
}

/// `(h(r), h(r'))` for `r ≤ r'`; the caller asserts the monotone ordering.
pub fn clipped_spread_pair(a: &[f64], r: f64, r_prime: f64) -> Result<(f64, f64), AnalysisError> {
    if r_prime < r {
        return Err(AnalysisError::BadParam {
            name: "r_prime",
            value: r_prime,
            requirement: "must be at least r",
        });
    }
    Ok((clipped_spread(a, r)?, clipped_spread(a, r_prime)?))
}

/// Least-squares slope of `log(metric)` against `log(T)` for points
/// `(T, metric)`: the empirical convergence exponent.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<f64, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::TooFewPoints {
            min: 2,
            got: points.len(),
        });
    }
    for (index, &(t, metric)) in points.iter().enumerate() {
        if !(t.is_finite() && t > 0.0) {
            return Err(AnalysisError::NonPositive {
                what: "horizon",
                index,
                value: t,
            });
        }
        if !(metric.is_finite() && metric > 0.0) {
            return Err(AnalysisError::NonPositive {
                what: "metric",
                index,
                value: metric,
            });
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(t, m)| (t.ln(), m.ln())).collect();
    let n = logs.len() as f64;
    let x_mean = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - x_mean) * (p.0 - x_mean)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::BadParam {
            name: "horizons",
            value: points[0].0,
            requirement: "must span more than one value",
        });
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - x_mean) * (p.1 - y_mean)).sum();
    Ok(sxy / sxx)
}
