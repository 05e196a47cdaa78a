use rayon::prelude::*;
use serde_json::json;

use super::{expect_step, point, sup_v_beta_on_c, theta_value, x_value, DriftReport, GridSpec};
use crate::adaptation::AdaptationRule;
use crate::error::{Error, Result};
use crate::kernels::{KernelParam, ProposalSpec};
use crate::lyapunov::{DriftCoefficients, LyapunovV, LyapunovW};
use crate::rng::substream;
use crate::simulator::thread_pool;
use crate::targets::Target;

/// Largest argument passed to `Δ`; `V^β` overflows long before the check is informative.
const Z_CAP: f64 = 1e300;

/// The argument `V_β(θ,x) 1{x∉C} + d(θ) 1{x∈C}` of `Δ`, with `V_β = c + V^β/e`.
pub(crate) fn delta_argument<M: Target<f64> + ?Sized>(
    target: &M,
    lyap_v: &LyapunovV<f64>,
    coef: &DriftCoefficients<f64>,
    theta: &KernelParam<f64>,
    x: &[f64],
    inside: bool,
) -> Result<f64> {
    let vals = coef.at(theta)?;
    let z = if inside {
        vals.d
    } else {
        let v_beta = (-lyap_v.eta * coef.beta * target.log_density(x)).exp();
        vals.c + v_beta / vals.e
    };
    Ok(z.min(Z_CAP))
}

/// `(A, B)` with `Δ(z_C) = A - C·B`, where `z_C` is the argument evaluated with
/// `big_c = C`. Both `Δ` and `C ↦ C·c(θ)` are affine in `C` for every scenario.
pub(crate) fn delta_affine_in_c<M: Target<f64> + ?Sized>(
    target: &M,
    lyap_v: &LyapunovV<f64>,
    coef: &DriftCoefficients<f64>,
    theta: &KernelParam<f64>,
    x: &[f64],
    inside: bool,
) -> Result<(f64, f64)> {
    let at = |c: f64| -> Result<f64> {
        let mut k = coef.clone();
        k.big_c = c;
        Ok(k.delta(delta_argument(target, lyap_v, &k, theta, x, inside)?))
    };
    let (d1, d2) = (at(1.0)?, at(2.0)?);
    let b = d1 - d2;
    Ok((d1 + b, b))
}

/// Fits the scenario constant `C` in
/// `P_{θ,γ}w(θ,x) ≤ w(θ) - γ w(θ) Δ(V_β(θ,x) 1{x∉C} + d(θ) 1{x∈C})`.
///
/// The left side is `E[w(φ_γ(θ, X₊))]` over one kernel step from `x`, with the update
/// composed inside the integrand. `sup_{x∈C} V^β` in `d(θ)` is taken over the grid's `C`.
pub fn verify_w_drift<M: Target<f64> + Sync + ?Sized>(
    target: &M,
    proposal: &ProposalSpec,
    rule: &AdaptationRule,
    lyap_v: &LyapunovV<f64>,
    lyap_w: &LyapunovW,
    coef: &DriftCoefficients<f64>,
    grid: &GridSpec,
) -> Result<DriftReport> {
    grid.validate(true)?;
    coef.validate()?;
    rule.validate()?;
    if *lyap_w != coef.w_function() {
        return Err(Error::Mismatch(format!(
            "w function {lyap_w:?} does not match scenario {:?}",
            coef.scenario
        )));
    }
    let mut coef = coef.clone();
    coef.sup_c_v_beta = sup_v_beta_on_c(target, lyap_v.eta, coef.beta, grid.c_radius);
    let k = grid.margin_rule.se_multiple();
    let cells: Vec<(&KernelParam<f64>, &Vec<f64>, f64)> = grid
        .theta_grid
        .iter()
        .flat_map(|t| grid.x_grid.iter().flat_map(move |x| grid.gamma_grid.iter().map(move |&g| (t, x, g))))
        .collect();
    let evals: Vec<Result<(f64, f64)>> = thread_pool().install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, &(theta, x, gamma))| {
                let mut rng = substream(grid.seed, i as u64);
                let m = expect_step(target, proposal, theta, x, grid.method, &mut rng, |y, a| {
                    Ok([lyap_w.eval(&rule.apply(theta, y, a, gamma)?)?, 0.0])
                })?;
                Ok(m.combine(1.0, 0.0))
            })
            .collect()
    });
    struct Cell {
        lhs: f64,
        se: f64,
        w: f64,
        a: f64,
        b: f64,
        inside: bool,
    }
    let mut data = Vec::with_capacity(cells.len());
    let mut needed = 0.0f64;
    let mut infeasible = 0usize;
    for (&(theta, x, gamma), ev) in cells.iter().zip(evals) {
        let (lhs, se) = ev?;
        let inside = grid.in_c(x);
        let w = lyap_w.eval(theta)?;
        let (a, b) = delta_affine_in_c(target, lyap_v, &coef, theta, x, inside)?;
        let slack = lhs + k * se - w + gamma * w * a;
        if b > 0.0 {
            needed = needed.max(slack / (gamma * w * b));
        } else if slack > 0.0 {
            infeasible += 1;
        }
        data.push(Cell { lhs, se, w, a, b, inside });
    }
    let big_c = needed * (1.0 + 1e-6) + 1e-12;
    coef.big_c = big_c;
    let mut report = DriftReport::new(
        "w-drift",
        json!({
            "x": grid.x_grid,
            "theta": grid.theta_grid,
            "gamma": grid.gamma_grid,
            "method": grid.method,
            "c_radius": grid.c_radius,
            "scenario": coef.scenario,
            "rule": rule,
            "seed": grid.seed,
        }),
    );
    report.constant("C", big_c);
    report.constant("R", grid.c_radius);
    report.constant("sup_C_V_beta", coef.sup_c_v_beta);
    report.constant("delta0", coef.delta(0.0));
    for (&(theta, x, gamma), c) in cells.iter().zip(&data) {
        let delta = c.a - big_c * c.b;
        let rhs = c.w - gamma * c.w * delta;
        report.push(
            point(&[
                ("theta", theta_value(theta)),
                ("x", x_value(x)),
                ("gamma", json!(gamma)),
                ("in_c", json!(c.inside)),
                ("w", json!(c.w)),
                ("delta", json!(delta)),
            ]),
            c.lhs,
            rhs,
            c.se,
            grid.margin_rule,
        );
    }
    if infeasible > 0 {
        report
            .notes
            .push(format!("{infeasible} points violate the inequality for every C"));
    }
    Ok(report.finish(grid.margin_rule, infeasible == 0))
}
