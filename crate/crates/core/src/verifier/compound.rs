use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{expect_step, point, theta_value, x_value, DriftReport, GridSpec, StepMoments};
use crate::adaptation::AdaptationRule;
use crate::error::{Error, Result};
use crate::kernels::{KernelParam, ProposalSpec};
use crate::lyapunov::{CompoundSpec, DriftCoefficients, LyapunovV, LyapunovW};
use crate::rng::substream;
use crate::simulator::thread_pool;
use crate::targets::Target;

/// Candidates `λ* ∈ {1, 2, 4, …, 2^10}`.
pub const LAMBDA_CANDIDATES: u32 = 11;

/// Fraction of `Δ(0)` kept in reserve when pairing stepsizes: `1/γ - 1/γ̄ < 0.9 Δ(0)`.
pub const PAIR_SLACK: f64 = 0.1;

/// Outcome of the `(M*, λ*)` search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompoundSearch {
    pub lambda_star: f64,
    pub m_star: f64,
    /// Half the smallest slack on the checked points; `≤ 0` when no pair works.
    pub delta: f64,
    pub found: bool,
    pub checked: usize,
}

struct Cell<'a> {
    theta: &'a KernelParam<f64>,
    x: &'a [f64],
    gamma: f64,
    gamma_bar: f64,
    moments: StepMoments,
    v: f64,
    w: f64,
    /// `V^ι/a(θ) + w(θ)`.
    scale: f64,
    inside: bool,
}

impl Cell<'_> {
    fn lhs(&self, lambda: f64) -> (f64, f64) {
        self.moments.combine(lambda, 1.0 / self.gamma)
    }

    fn bound(&self, lambda: f64) -> f64 {
        lambda * self.v + self.w / self.gamma_bar
    }

    /// Largest `δ` this point allows at `λ`.
    fn delta(&self, lambda: f64, k: f64) -> f64 {
        let (lhs, se) = self.lhs(lambda);
        (self.bound(lambda) - lhs - k * se) / self.scale
    }
}

/// Searches `λ*` and `M*` such that, outside `W_{M*} × C`,
/// `P_{θ,γ}{λ*V^{υv} + w^{υw}/γ}(θ,x) ≤ λ*V^{υv}(x) + w^{υw}(θ)/γ̄ - δ[V^ι(x)/a(θ) + w(θ)]`
/// with some `δ ∈ (0, 1]`.
///
/// `M*` runs over the `w`-levels of the grid in ascending order and `λ*` over powers
/// of two; the first pair with positive `δ` on every checked point wins. Stepsize
/// pairs are all `(γ, γ̄)` from the grid with `1/γ - 1/γ̄ < (1 - 0.1) Δ(0)`. The
/// `λ*` field of `compound` is not used; the search replaces it.
#[allow(clippy::too_many_arguments)]
pub fn verify_compound_drift<M: Target<f64> + Sync + ?Sized>(
    target: &M,
    proposal: &ProposalSpec,
    rule: &AdaptationRule,
    lyap_v: &LyapunovV<f64>,
    lyap_w: &LyapunovW,
    compound: &CompoundSpec<f64>,
    coef: &DriftCoefficients<f64>,
    grid: &GridSpec,
) -> Result<DriftReport> {
    grid.validate(true)?;
    coef.validate()?;
    rule.validate()?;
    let (uv, uw) = (compound.upsilon_v, compound.upsilon_w);
    let delta0 = coef.delta(0.0);
    if !(delta0 > 0.0) {
        return Err(Error::InvalidParameter(format!("Delta(0) must be positive, got {delta0}")));
    }
    let pairs: Vec<(f64, f64)> = grid
        .gamma_grid
        .iter()
        .flat_map(|&g| grid.gamma_grid.iter().map(move |&gb| (g, gb)))
        .filter(|&(g, gb)| 1.0 / g - 1.0 / gb < (1.0 - PAIR_SLACK) * delta0)
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidParameter(
            "no stepsize pair satisfies 1/gamma - 1/gamma_bar < Delta(0) - eps".into(),
        ));
    }
    let mut gammas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let gs = &gammas;
    let states: Vec<(&KernelParam<f64>, &Vec<f64>, f64)> = grid
        .theta_grid
        .iter()
        .flat_map(|t| grid.x_grid.iter().flat_map(move |x| gs.iter().map(move |&g| (t, x, g))))
        .collect();
    let moments: Vec<Result<StepMoments>> = thread_pool().install(|| {
        states
            .par_iter()
            .enumerate()
            .map(|(i, &(theta, x, gamma))| {
                let mut rng = substream(grid.seed, i as u64);
                expect_step(target, proposal, theta, x, grid.method, &mut rng, |y, a| {
                    let next = rule.apply(theta, y, a, gamma)?;
                    Ok([lyap_v.eval(target, y).powf(uv), lyap_w.eval(&next)?.powf(uw)])
                })
            })
            .collect()
    });
    let mut cells = Vec::new();
    for (&(theta, x, gamma), m) in states.iter().zip(moments) {
        let m = m?;
        let v = lyap_v.eval(target, x);
        let w = lyap_w.eval(theta)?;
        let scale = v.powf(coef.iota) / coef.a(theta)? + w;
        for &(g, gamma_bar) in pairs.iter().filter(|p| p.0 == gamma) {
            cells.push(Cell {
                theta,
                x,
                gamma: g,
                gamma_bar,
                moments: m,
                v: v.powf(uv),
                w: w.powf(uw),
                scale,
                inside: grid.in_c(x),
            });
        }
    }
    let k = grid.margin_rule.se_multiple();
    let mut levels: Vec<f64> = cells.iter().map(|c| lyap_w.eval(c.theta)).collect::<Result<_>>()?;
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut best: Option<CompoundSearch> = None;
    'search: for &m in &levels {
        let checked: Vec<&Cell> = cells
            .iter()
            .filter(|c| !(c.inside && lyap_w.eval(c.theta).map(|w| w <= m).unwrap_or(false)))
            .collect();
        if checked.is_empty() {
            break;
        }
        for j in 0..LAMBDA_CANDIDATES {
            let lambda = f64::from(1u32 << j);
            let worst = checked.iter().map(|c| c.delta(lambda, k)).fold(f64::INFINITY, f64::min);
            let cand = CompoundSearch {
                lambda_star: lambda,
                m_star: m,
                delta: (0.5 * worst).min(1.0),
                found: worst > 0.0,
                checked: checked.len(),
            };
            if best.is_none_or(|b| cand.delta > b.delta) {
                best = Some(cand);
            }
            if cand.found {
                best = Some(cand);
                break 'search;
            }
        }
    }
    let search = best.ok_or_else(|| Error::InvalidParameter("every grid point lies in W x C".into()))?;
    let mut report = DriftReport::new(
        "compound-drift",
        json!({
            "x": grid.x_grid,
            "theta": grid.theta_grid,
            "gamma": grid.gamma_grid,
            "gamma_pairs": pairs,
            "method": grid.method,
            "c_radius": grid.c_radius,
            "w_levels": levels,
            "upsilon_v": uv,
            "upsilon_w": uw,
            "eps": PAIR_SLACK * delta0,
            "seed": grid.seed,
        }),
    );
    report.constant("lambda_star", search.lambda_star);
    report.constant("M_star", search.m_star);
    report.constant("delta", search.delta);
    report.constant("R", grid.c_radius);
    for c in &cells {
        let w_level = lyap_w.eval(c.theta)?;
        if c.inside && w_level <= search.m_star {
            continue;
        }
        let (lhs, se) = c.lhs(search.lambda_star);
        let rhs = c.bound(search.lambda_star) - search.delta * c.scale;
        report.push(
            point(&[
                ("theta", theta_value(c.theta)),
                ("x", x_value(c.x)),
                ("gamma", json!(c.gamma)),
                ("gamma_bar", json!(c.gamma_bar)),
                ("w", json!(w_level)),
            ]),
            lhs,
            rhs,
            se,
            grid.margin_rule,
        );
    }
    if !search.found {
        report.notes.push(format!(
            "search exhausted; best candidate lambda*={} M*={} with delta {:.3e}",
            search.lambda_star, search.m_star, search.delta
        ));
    }
    Ok(report.finish(grid.margin_rule, search.found))
}
