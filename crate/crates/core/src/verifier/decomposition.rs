//! Four-term split of `P_σ V(x)/V(x) - 1` for the uniform proposal in one dimension.

use serde::Serialize;
use serde_json::json;

use super::{point, DriftReport, MarginRule};
use crate::error::{Error, Result};
use crate::lyapunov::LyapunovV;
use crate::kernels::{apply_kernel_to_function, KernelMethod, KernelParam, ProposalSpec};
use crate::quadrature::{integrate_with_breaks, QuadOptions};
use crate::rng::substream;
use crate::targets::{upsilon, Target};

/// Largest allowed `|P V/V - 1 - (T1+T2+T3+T4)|`.
pub const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionTerms {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub upsilon: f64,
}

impl DecompositionTerms {
    pub fn total(&self) -> f64 {
        self.t1 + self.t2 + self.t3 + self.t4
    }
}

/// `φ_{p,η,s}(z) = [π(p + s z)/π(p)]^η`.
fn phi<M: Target<f64> + ?Sized>(target: &M, p: f64, eta: f64, s: f64, z: f64) -> f64 {
    (eta * (target.log_density_1d(p + s * z) - target.log_density_1d(p))).exp()
}

/// `ψ_x(z) = (φ_{x,-η,-1} - 1) + (φ_{x,1-η,1} - 1) - (φ_{x,1,1} - 1)`.
pub fn psi<M: Target<f64> + ?Sized>(target: &M, eta: f64, x: f64, z: f64) -> f64 {
    (phi(target, x, -eta, -1.0, z) - 1.0) + (phi(target, x, 1.0 - eta, 1.0, z) - 1.0)
        - (phi(target, x, 1.0, 1.0, z) - 1.0)
}

fn integral(f: impl Fn(f64) -> f64, a: f64, b: f64, sigma: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let opts = QuadOptions {
        abs_tol: 1e-12 * 2.0 * sigma,
        rel_tol: 1e-12,
        ..QuadOptions::default()
    };
    Ok(integrate_with_breaks(f, a, b, &[], &opts)?.value / (2.0 * sigma))
}

fn check_target<M: Target<f64> + ?Sized>(target: &M, x: f64) -> Result<()> {
    if !target.unimodal_1d() || target.mode()[0] != 0.0 {
        return Err(Error::NotUnimodal);
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::InvalidParameter(format!("x must be positive, got {x}")));
    }
    Ok(())
}

/// `T1..T4` at `(σ, x)`, `x > 0`, for a unimodal target with mode 0.
pub fn decomposition_terms<M: Target<f64> + ?Sized>(target: &M, eta: f64, sigma: f64, x: f64) -> Result<DecompositionTerms> {
    check_target(target, x)?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let u = upsilon(target, x)?;
    let t1 = integral(|z| psi(target, eta, x, z), 0.0, sigma.min(x), sigma)?;
    let (t2, t3) = if sigma >= x {
        (
            integral(
                |z| phi(target, x, 1.0 - eta, 1.0, z) - phi(target, x, 1.0, 1.0, z),
                x,
                sigma,
                sigma,
            )?,
            integral(|z| phi(target, u, -eta, -1.0, z) - 1.0, u, (sigma - x + u).min(0.0), sigma)?,
        )
    } else {
        (0.0, 0.0)
    };
    let t4 = if sigma >= x - u {
        integral(
            |z| phi(target, u, 1.0 - eta, -1.0, z) - phi(target, u, 1.0, -1.0, z),
            0.0,
            sigma - (x - u),
            sigma,
        )?
    } else {
        0.0
    };
    Ok(DecompositionTerms { t1, t2, t3, t4, upsilon: u })
}

/// Checks the split against a direct evaluation of `P_σ V/V - 1`, the sign of `ψ_x` on
/// `[0, x]` and `T3 ≤ 0` for `σ ≥ x`, and fits `ε_T` in `T1 + T2 ≤ -ε_T x/σ` (`σ ≥ x`)
/// and `T3 + T4 ≤ -ε_T (-Υ)/σ` (`σ ≥ x - Υ`).
pub fn verify_decomposition<M: Target<f64> + ?Sized>(
    target: &M,
    lyap: &LyapunovV<f64>,
    sigma_grid: &[f64],
    x_grid: &[f64],
) -> Result<DriftReport> {
    let eta = lyap.eta;
    if x_grid.is_empty() || sigma_grid.is_empty() {
        return Err(Error::InvalidParameter("verification grids must be non-empty".into()));
    }
    let rule = MarginRule::Strict;
    let spec = ProposalSpec::compact_scalar();
    let mut report = DriftReport::new(
        "decomposition",
        json!({ "x": x_grid, "sigma": sigma_grid, "eta": eta, "psi_points": 201 }),
    );
    let mut rng = substream(0, 0);
    let (mut eps12, mut eps34) = (f64::INFINITY, f64::INFINITY);
    for &x in x_grid {
        check_target(target, x)?;
        let lx = target.log_density_1d(x);
        let psi_max = (0..=200)
            .map(|k| psi(target, eta, x, x * k as f64 / 200.0))
            .fold(f64::NEG_INFINITY, f64::max);
        report.push(
            point(&[("kind", json!("psi")), ("x", json!(x))]),
            psi_max,
            0.0,
            0.0,
            rule,
        );
        for &sigma in sigma_grid {
            let terms = decomposition_terms(target, eta, sigma, x)?;
            // V normalised by V(x) keeps large x in range.
            let (pv, _) = apply_kernel_to_function(
                target,
                &spec,
                &KernelParam::scalar(sigma.ln()),
                |y: &[f64]| (-eta * (target.log_density_1d(y[0]) - lx)).exp(),
                &[x],
                KernelMethod::Quadrature,
                &mut rng,
            )?;
            let lhs = pv - 1.0;
            let residual = (lhs - terms.total()).abs();
            report.push(
                point(&[
                    ("kind", json!("residual")),
                    ("x", json!(x)),
                    ("sigma", json!(sigma)),
                    ("drift", json!(lhs)),
                    ("t1", json!(terms.t1)),
                    ("t2", json!(terms.t2)),
                    ("t3", json!(terms.t3)),
                    ("t4", json!(terms.t4)),
                    ("upsilon", json!(terms.upsilon)),
                ]),
                residual,
                RESIDUAL_TOL,
                0.0,
                rule,
            );
            if sigma >= x {
                report.push(
                    point(&[("kind", json!("t3")), ("x", json!(x)), ("sigma", json!(sigma))]),
                    terms.t3,
                    0.0,
                    0.0,
                    rule,
                );
                eps12 = eps12.min(-(terms.t1 + terms.t2) * sigma / x);
            }
            if sigma >= x - terms.upsilon {
                eps34 = eps34.min(-(terms.t3 + terms.t4) * sigma / -terms.upsilon);
            }
        }
    }
    let r_t = x_grid.iter().copied().fold(f64::INFINITY, f64::min);
    report.constant("R_T", r_t);
    if eps12.is_finite() {
        report.constant("eps_T_12", eps12);
        if eps12 <= 0.0 {
            report
                .notes
                .push(format!("T1 + T2 is not negative on the whole grid (fitted eps {eps12:.3e})"));
        }
    }
    if eps34.is_finite() {
        report.constant("eps_T_34", eps34);
    }
    Ok(report.finish(rule, true))
}
