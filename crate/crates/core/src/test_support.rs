//! Shared helpers for unit tests. Oracles here stay deliberately independent
//! of the implementation paths they check.

/// Central-difference gradient of `f` at `point`.
pub(crate) fn finite_diff_grad<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; point.len()];
    let mut probe = point.to_vec();
    for k in 0..point.len() {
        let orig = probe[k];
        probe[k] = orig + step;
        let plus = f(&probe);
        probe[k] = orig - step;
        let minus = f(&probe);
        probe[k] = orig;
        grad[k] = (plus - minus) / (2.0 * step);
    }
    grad
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
