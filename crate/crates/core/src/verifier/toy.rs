use serde_json::json;

use super::{point, DriftReport, MarginRule};
use crate::error::Result;
use crate::kernels::{toy_second_eigenvalue, toy_transition_matrix};

pub const INVARIANCE_TOL: f64 = 1e-14;
pub const EIGEN_TOL: f64 = 1e-12;

/// Invariance of `(1/2, 1/2)` and the closed-form second eigenvalue of the toy chain.
///
/// Two rows per `θ`: `lhs = |πP - π|_∞` against `1e-14`, and the gap between the
/// Jacobi eigenvalue and `1 - 2e^{-|θ|}` against `1e-12`.
pub fn verify_toy(theta_grid: &[f64]) -> Result<DriftReport> {
    let rule = MarginRule::Strict;
    let mut report = DriftReport::new("toy", json!({ "theta": theta_grid }));
    for &theta in theta_grid {
        let p = toy_transition_matrix(theta);
        let left = p.transpose().matvec(&[0.5, 0.5]);
        let inv = left.iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
        report.push(
            point(&[("kind", json!("invariance")), ("theta", json!(theta))]),
            inv,
            INVARIANCE_TOL,
            0.0,
            rule,
        );
        let (eig, _) = p.symmetric_eigen();
        let direct = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let closed = toy_second_eigenvalue(theta);
        report.push(
            point(&[
                ("kind", json!("eigenvalue")),
                ("theta", json!(theta)),
                ("direct", json!(direct)),
                ("closed_form", json!(closed)),
            ]),
            (direct - closed).abs(),
            EIGEN_TOL,
            0.0,
            rule,
        );
    }
    // Rows compare against their own tolerance, so the strict slack is not added.
    for row in &mut report.rows {
        row.pass = row.margin >= 0.0;
    }
    let pass = report.rows.iter().all(|r| r.pass);
    Ok(report.finish(rule, pass))
}
