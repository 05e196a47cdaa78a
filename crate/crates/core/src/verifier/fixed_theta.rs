use rayon::prelude::*;
use serde_json::json;

use super::{point, theta_value, x_value, DriftReport, GridSpec};
use crate::error::{Error, Result};
use crate::kernels::{apply_kernel_to_function, KernelMethod, KernelParam, ProposalSpec};
use crate::lyapunov::{DriftCoefficients, LyapunovV};
use crate::rng::substream;
use crate::simulator::thread_pool;
use crate::targets::Target;

/// `(P_θV(x)/V(x), se)`. Working relative to `V(x)` keeps `exp(-ηℓ)` in range far out.
#[allow(clippy::too_many_arguments)]
fn relative_pv<M: Target<f64> + ?Sized>(
    target: &M,
    spec: &ProposalSpec,
    lyap: &LyapunovV<f64>,
    theta: &KernelParam<f64>,
    x: &[f64],
    method: KernelMethod,
    seed: u64,
    index: u64,
) -> Result<(f64, f64)> {
    let lx = target.log_density(x);
    let eta = lyap.eta;
    let mut rng = substream(seed, index);
    let (r, se) = apply_kernel_to_function(
        target,
        spec,
        theta,
        |y: &[f64]| (-eta * (target.log_density(y) - lx)).exp(),
        x,
        method,
        &mut rng,
    )?;
    if !r.is_finite() {
        return Err(Error::NonIntegrable { point: x.to_vec(), value: r });
    }
    Ok((r, se))
}

/// `1 - P_σV(x)/V(x)` for the uniform proposal of half-width `σ` in one dimension.
pub fn drift_deficit<M: Target<f64> + ?Sized>(target: &M, lyap: &LyapunovV<f64>, sigma: f64, x: f64) -> Result<f64> {
    let spec = ProposalSpec::compact_scalar();
    let (r, _) = relative_pv(
        target,
        &spec,
        lyap,
        &KernelParam::scalar(sigma.ln()),
        &[x],
        KernelMethod::Quadrature,
        0,
        0,
    )?;
    Ok(1.0 - r)
}

/// Least-squares slope of `log y` against `log x`; `NaN` if some `y ≤ 0`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() != ys.len() || xs.len() < 2 || ys.iter().any(|&y| !(y > 0.0)) {
        return f64::NAN;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Fits `a0` and `b` in `P_θV ≤ V - a^{-1}(θ)V^ι` outside `C` and `P_θV ≤ b` inside.
///
/// Outside `C` rows are relative to `V(x)`: `lhs = P_θV/V`, `rhs = 1 - V^{ι-1}/a(θ)`.
/// The fitted `a0` is half of the largest value the grid allows; the report passes
/// only if that is positive.
pub fn verify_fixed_theta_drift<M: Target<f64> + Sync + ?Sized>(
    target: &M,
    proposal: &ProposalSpec,
    lyap: &LyapunovV<f64>,
    coef: &DriftCoefficients<f64>,
    grid: &GridSpec,
) -> Result<DriftReport> {
    grid.validate(false)?;
    coef.validate()?;
    let k = grid.margin_rule.se_multiple();
    let cells: Vec<(&KernelParam<f64>, &Vec<f64>)> = grid
        .theta_grid
        .iter()
        .flat_map(|t| grid.x_grid.iter().map(move |x| (t, x)))
        .collect();
    let evals: Vec<Result<(f64, f64)>> = thread_pool().install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, (t, x))| relative_pv(target, proposal, lyap, t, x, grid.method, grid.seed, i as u64))
            .collect()
    });
    struct Cell {
        r: f64,
        se: f64,
        log_v: f64,
        a_raw: f64,
        inside: bool,
    }
    let mut data = Vec::with_capacity(cells.len());
    for ((theta, x), ev) in cells.iter().zip(evals) {
        let (r, se) = ev?;
        data.push(Cell {
            r,
            se,
            log_v: -lyap.eta * target.log_density(x),
            a_raw: coef.a(theta)? * coef.a0,
            inside: grid.in_c(x),
        });
    }
    let mut a0 = f64::INFINITY;
    let mut b = f64::NEG_INFINITY;
    for c in &data {
        if c.inside {
            b = b.max(((c.r + (k + 1.0) * c.se) * c.log_v.exp()).max(0.0));
        } else {
            let v_pow = ((coef.iota - 1.0) * c.log_v).exp();
            a0 = a0.min((1.0 - c.r - k * c.se) * c.a_raw / v_pow);
        }
    }
    if !a0.is_finite() {
        return Err(Error::InvalidParameter("no grid point lies outside C".into()));
    }
    let a0 = (0.5 * a0).max(0.0);
    let mut report = DriftReport::new(
        "fixed-theta-drift",
        json!({
            "x": grid.x_grid,
            "theta": grid.theta_grid,
            "method": grid.method,
            "c_radius": grid.c_radius,
            "eta": lyap.eta,
            "iota": coef.iota,
            "seed": grid.seed,
        }),
    );
    report.constant("a0", a0);
    report.constant("R", grid.c_radius);
    if b.is_finite() {
        report.constant("b", b);
    }
    for ((theta, x), c) in cells.iter().zip(&data) {
        let mut p = point(&[("theta", theta_value(theta)), ("x", x_value(x)), ("in_c", json!(c.inside))]);
        if let Ok(s) = theta.sigma_1d(proposal) {
            p.insert("sigma".into(), json!(s));
        }
        if c.inside {
            let scale = c.log_v.exp();
            report.push(p, c.r * scale, b, c.se * scale, grid.margin_rule);
        } else {
            let rhs = 1.0 - ((coef.iota - 1.0) * c.log_v).exp() * a0 / c.a_raw;
            report.push(p, c.r, rhs, c.se, grid.margin_rule);
        }
    }
    if a0 == 0.0 {
        report.notes.push("no positive a0 fits the grid: the deficit vanishes or is negative somewhere outside C".into());
    }
    Ok(report.finish(grid.margin_rule, a0 > 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::Scenario;
    use crate::targets::BuiltinTarget;

    fn coerced_coef() -> DriftCoefficients<f64> {
        DriftCoefficients::new(Scenario::Coerced, 1.0, 1)
    }

    #[test]
    fn gaussian_deficit_is_positive() {
        let t = BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap();
        let grid = GridSpec::scalar(&[6.0, 10.0, 20.0], &[0.0], &[], KernelMethod::Quadrature, 1.0, 1);
        let r = verify_fixed_theta_drift(
            &t,
            &ProposalSpec::compact_scalar(),
            &LyapunovV::new(0.5).unwrap(),
            &coerced_coef(),
            &grid,
        )
        .unwrap();
        assert!(r.rows.iter().all(|row| row.lhs < 1.0));
        assert!(r.pass, "{r:?}");
        assert!(r.fitted_constants["a0"] > 0.0);
    }

    #[test]
    fn constant_v_has_no_drift() {
        let t = BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap();
        let grid = GridSpec::scalar(&[0.0, 3.0, 6.0], &[0.0], &[], KernelMethod::Quadrature, 1.0, 1);
        let r = verify_fixed_theta_drift(
            &t,
            &ProposalSpec::compact_scalar(),
            &LyapunovV::new(0.0).unwrap(),
            &coerced_coef(),
            &grid,
        )
        .unwrap();
        assert!(r.rows.iter().all(|row| (row.lhs - 1.0).abs() < 1e-12));
        assert_eq!(r.fitted_constants["b"], 1.0);
        assert_eq!(r.fitted_constants["a0"], 0.0);
        assert!(!r.pass);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 1.5).abs() < 1e-12);
        assert!(loglog_slope(&xs, &[1.0, -1.0, 1.0]).is_nan());
    }
}
