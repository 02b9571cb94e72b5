//! Central finite-difference gradient checks.

/// Largest relative discrepancy between `analytic` and the central
/// difference `(f(p+εe_i) − f(p−εe_i)) / 2ε` over every coordinate `i`.
///
/// The relative error of a coordinate is `|a − n| / max(|a|, |n|, 1e-6)`;
/// the floor keeps exactly-zero gradients from dividing by zero.
pub fn finite_difference_check<F>(mut f: F, params: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
