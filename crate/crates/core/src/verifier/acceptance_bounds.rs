use serde_json::json;

use super::{point, DriftReport, MarginRule};
use crate::error::{Error, Result};
use crate::kernels::mean_acceptance;
use crate::targets::{TailClass, Target};

/// Fits `C₋` in `α_σ(x) ≥ 1/2 - C₋σ` over `σ ≤ 1` and `C₊` in
/// `α_σ(x) ≤ C₊ ((-ℓ(x))^{1/p} ∨ 1)/σ` over `σ ≥ 1`.
///
/// `p` is the subexponential tail exponent, 1 for other tail classes. Besides the
/// overall `C₋`, the report carries `C_minus_small`, the same fit restricted to the
/// smaller half of the `σ ≤ 1` grid, which should not exceed it.
pub fn verify_acceptance_bounds<M: Target<f64> + ?Sized>(
    target: &M,
    sigma_grid: &[f64],
    x_grid: &[f64],
) -> Result<DriftReport> {
    if sigma_grid.is_empty() || x_grid.is_empty() {
        return Err(Error::InvalidParameter("verification grids must be non-empty".into()));
    }
    if sigma_grid.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter("sigma grid must be positive and finite".into()));
    }
    let p = match target.tail_class() {
        TailClass::Subexponential { p } => p,
        _ => 1.0,
    };
    let rule = MarginRule::Strict;
    let mut small: Vec<f64> = sigma_grid.iter().copied().filter(|&s| s <= 1.0).collect();
    small.sort_by(f64::total_cmp);
    let small_cut = small.get(small.len().saturating_sub(1) / 2).copied();

    struct Eval {
        sigma: f64,
        x: f64,
        alpha: f64,
        tail: f64,
    }
    let mut evals = Vec::new();
    for &x in x_grid {
        let tail = (-target.log_density_1d(x)).max(0.0).powf(1.0 / p).max(1.0);
        for &sigma in sigma_grid {
            evals.push(Eval {
                sigma,
                x,
                alpha: mean_acceptance(target, sigma, x)?,
                tail,
            });
        }
    }
    let (mut c_minus, mut c_minus_small, mut c_plus) = (0.0f64, 0.0f64, 0.0f64);
    for e in &evals {
        if e.sigma <= 1.0 {
            let v = (0.5 - e.alpha) / e.sigma;
            c_minus = c_minus.max(v);
            if small_cut.is_some_and(|c| e.sigma <= c) {
                c_minus_small = c_minus_small.max(v);
            }
        }
        if e.sigma >= 1.0 {
            c_plus = c_plus.max(e.sigma * e.alpha / e.tail);
        }
    }
    let mut report = DriftReport::new(
        "acceptance-bounds",
        json!({ "sigma": sigma_grid, "x": x_grid, "p": p }),
    );
    report.constant("C_minus", c_minus);
    report.constant("C_minus_small", c_minus_small);
    report.constant("C_plus", c_plus);
    for e in &evals {
        if e.sigma <= 1.0 {
            report.push(
                point(&[
                    ("bound", json!("lower")),
                    ("sigma", json!(e.sigma)),
                    ("x", json!(e.x)),
                    ("alpha", json!(e.alpha)),
                ]),
                0.5 - c_minus * e.sigma,
                e.alpha,
                0.0,
                rule,
            );
        }
        if e.sigma >= 1.0 {
            report.push(
                point(&[
                    ("bound", json!("upper")),
                    ("sigma", json!(e.sigma)),
                    ("x", json!(e.x)),
                    ("alpha", json!(e.alpha)),
                ]),
                e.sigma * e.alpha / e.tail,
                c_plus,
                0.0,
                rule,
            );
        }
    }
    let bounded = c_minus.is_finite() && c_plus.is_finite() && c_minus_small <= c_minus;
    Ok(report.finish(rule, bounded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::BuiltinTarget;

    #[test]
    fn laplace_unit_scale() {
        let t = BuiltinTarget::power_tail(1.0).unwrap();
        let r = verify_acceptance_bounds(&t, &[1.0], &[0.0]).unwrap();
        let a = r.rows[0].point["alpha"].as_f64().unwrap();
        assert!((a - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn tiny_scale_accepts_almost_surely() {
        let t = BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap();
        let r = verify_acceptance_bounds(&t, &[1e-6], &[0.0, 1.5, 4.0]).unwrap();
        assert!(r.rows.iter().all(|row| row.rhs > 1.0 - 1e-4));
        assert!(r.pass);
    }

    #[test]
    fn inverse_scale_law() {
        let t = BuiltinTarget::smoothed_subexponential(0.5).unwrap();
        let a = |s: f64| mean_acceptance(&t, s, 0.0).unwrap();
        for s in [1e2, 1e3] {
            let ratio = a(10.0 * s) / a(s);
            assert!((0.05..=0.2).contains(&ratio), "{s}: {ratio}");
        }
    }
}
