//! Grid certificates for the drift inequalities and the lemma-level bounds.
//!
//! Existential constants are fitted on the grid and then frozen into the report;
//! a passing report is a statement about the grid only.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kernels::{kink_points, KernelMethod, KernelParam, ProposalFamily, ProposalSpec};
use crate::quadrature::{integrate_with_breaks, QuadOptions};
use crate::targets::Target;

mod acceptance_bounds;
mod compound;
mod decomposition;
mod fixed_theta;
mod toy;
mod w_drift;

pub use acceptance_bounds::verify_acceptance_bounds;
pub use compound::{verify_compound_drift, CompoundSearch};
pub use decomposition::{decomposition_terms, psi, verify_decomposition, DecompositionTerms};
pub use fixed_theta::{drift_deficit, loglog_slope, verify_fixed_theta_drift};
pub use toy::verify_toy;
pub use w_drift::verify_w_drift;

/// Absolute tolerance of the strict (quadrature) margin rule.
pub const STRICT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginRule {
    /// `margin ≥ -1e-9`.
    Strict,
    /// `margin > 3 × std_error`.
    ThreeSe,
}

impl MarginRule {
    pub fn for_method(method: KernelMethod) -> Self {
        match method {
            KernelMethod::Quadrature => Self::Strict,
            KernelMethod::MonteCarlo { .. } => Self::ThreeSe,
        }
    }

    pub fn passes(&self, margin: f64, se: f64) -> bool {
        match self {
            Self::Strict => margin >= -STRICT_TOL,
            Self::ThreeSe => margin > 3.0 * se,
        }
    }

    /// Multiple of the standard error subtracted when fitting constants.
    pub fn se_multiple(&self) -> f64 {
        match self {
            Self::Strict => 0.0,
            Self::ThreeSe => 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub x_grid: Vec<Vec<f64>>,
    pub theta_grid: Vec<KernelParam<f64>>,
    pub gamma_grid: Vec<f64>,
    pub method: KernelMethod,
    pub margin_rule: MarginRule,
    /// Radius of `C = B(0, R)`.
    pub c_radius: f64,
    pub seed: u64,
}

impl GridSpec {
    pub fn new(
        x_grid: Vec<Vec<f64>>,
        theta_grid: Vec<KernelParam<f64>>,
        gamma_grid: Vec<f64>,
        method: KernelMethod,
        c_radius: f64,
        seed: u64,
    ) -> Self {
        Self {
            x_grid,
            theta_grid,
            gamma_grid,
            margin_rule: MarginRule::for_method(method),
            method,
            c_radius,
            seed,
        }
    }

    /// Grid of scalar states and scalar parameters.
    pub fn scalar(xs: &[f64], thetas: &[f64], gammas: &[f64], method: KernelMethod, c_radius: f64, seed: u64) -> Self {
        Self::new(
            xs.iter().map(|&x| vec![x]).collect(),
            thetas.iter().map(|&t| KernelParam::scalar(t)).collect(),
            gammas.to_vec(),
            method,
            c_radius,
            seed,
        )
    }

    pub fn validate(&self, needs_gamma: bool) -> Result<()> {
        if self.x_grid.is_empty() || self.theta_grid.is_empty() || (needs_gamma && self.gamma_grid.is_empty()) {
            return Err(Error::InvalidParameter("verification grids must be non-empty".into()));
        }
        if let KernelMethod::MonteCarlo { n, .. } = self.method {
            if n < 1000 {
                return Err(Error::InvalidParameter(format!(
                    "Monte Carlo grids need at least 1000 draws, got {n}"
                )));
            }
        }
        if self.margin_rule != MarginRule::for_method(self.method) {
            return Err(Error::InvalidParameter(
                "margin rule must be strict for quadrature and 3SE for Monte Carlo".into(),
            ));
        }
        if needs_gamma && self.gamma_grid.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::InvalidParameter("stepsizes must be positive".into()));
        }
        Ok(())
    }

    pub fn in_c(&self, x: &[f64]) -> bool {
        crate::scalar::norm(x) <= self.c_radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub point: BTreeMap<String, Value>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub check: String,
    pub grid: Value,
    pub fitted_constants: BTreeMap<String, f64>,
    pub rows: Vec<ReportRow>,
    pub pass: bool,
    /// Index of the row with the smallest SE-adjusted margin.
    pub worst: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl DriftReport {
    pub fn new(check: &str, grid: Value) -> Self {
        Self {
            check: check.into(),
            grid,
            fitted_constants: BTreeMap::new(),
            rows: Vec::new(),
            pass: false,
            worst: None,
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, point: BTreeMap<String, Value>, lhs: f64, rhs: f64, se: f64, rule: MarginRule) {
        let margin = rhs - lhs;
        self.rows.push(ReportRow {
            point,
            lhs,
            rhs,
            margin,
            se,
            pass: rule.passes(margin, se),
        });
    }

    pub fn constant(&mut self, name: &str, value: f64) {
        self.fitted_constants.insert(name.into(), value);
    }

    /// Sets `worst` and `pass = extra && every row passes`.
    pub fn finish(mut self, rule: MarginRule, extra: bool) -> Self {
        let k = rule.se_multiple();
        self.worst = self
            .rows
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.margin - k * a.1.se).total_cmp(&(b.1.margin - k * b.1.se)))
            .map(|(i, _)| i);
        self.pass = extra && !self.rows.is_empty() && self.rows.iter().all(|r| r.pass);
        self
    }

    pub fn worst_margin(&self) -> Option<f64> {
        self.worst.map(|i| self.rows[i].margin)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

/// Builds the `point` map of a report row.
pub fn point(entries: &[(&str, Value)]) -> BTreeMap<String, Value> {
    entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

pub fn theta_value(theta: &KernelParam<f64>) -> Value {
    match theta {
        KernelParam::Scalar { theta } => Value::from(*theta),
        other => serde_json::to_value(other.components()).unwrap_or(Value::Null),
    }
}

pub fn x_value(x: &[f64]) -> Value {
    if x.len() == 1 {
        Value::from(x[0])
    } else {
        Value::from(x.to_vec())
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == n - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Mean and covariance of a two-component quantity under one kernel step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMoments {
    pub mean: [f64; 2],
    /// Covariance of the sample mean (zero for quadrature).
    pub cov: [[f64; 2]; 2],
}

impl StepMoments {
    /// Mean and standard error of `l0 · first + l1 · second`.
    pub fn combine(&self, l0: f64, l1: f64) -> (f64, f64) {
        let m = l0 * self.mean[0] + l1 * self.mean[1];
        let v = l0 * l0 * self.cov[0][0] + 2.0 * l0 * l1 * self.cov[0][1] + l1 * l1 * self.cov[1][1];
        (m, v.max(0.0).sqrt())
    }
}

/// `E[h(X₊, α)]` for one step of the kernel from `x`, with the accept/reject coin
/// integrated out: `∫ q(z) [α h(x+z, α) + (1-α) h(x, α)] dz`, `α = α(x, x+z)`.
///
/// `h` receives the next state and the acceptance probability of the proposal, which
/// is what the parameter updates consume.
pub fn expect_step<M, H, R>(
    target: &M,
    spec: &ProposalSpec,
    param: &KernelParam<f64>,
    x: &[f64],
    method: KernelMethod,
    rng: &mut R,
    h: H,
) -> Result<StepMoments>
where
    M: Target<f64> + ?Sized,
    H: Fn(&[f64], f64) -> Result<[f64; 2]>,
    R: Rng + ?Sized,
{
    let lx = target.log_density(x);
    if !lx.is_finite() {
        return Err(Error::InvalidPoint(x.to_vec()));
    }
    let one = |z: &[f64]| -> Result<[f64; 2]> {
        let y: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
        let ly = target.log_density(&y);
        let a = if ly.is_nan() { 0.0 } else { (ly - lx).min(0.0).exp() };
        let stay = h(x, a)?;
        if a == 0.0 {
            return Ok(stay);
        }
        let go = h(&y, a)?;
        let v = [a * go[0] + (1.0 - a) * stay[0], a * go[1] + (1.0 - a) * stay[1]];
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonIntegrable { point: y, value: v[0] + v[1] })
        }
    };
    match method {
        KernelMethod::Quadrature => {
            if target.dim() != 1 || spec.family != ProposalFamily::CompactUniform {
                return Err(Error::InvalidParameter(
                    "quadrature needs a one-dimensional target and the compact uniform proposal".into(),
                ));
            }
            let sigma = param.sigma_1d(spec)?;
            let breaks = kink_points(target, x[0]);
            let mut mean = [0.0; 2];
            for (k, m) in mean.iter_mut().enumerate() {
                let scale = h(x, 1.0)?[k].abs().max(1.0);
                let mut err = None;
                let q = integrate_with_breaks(
                    |z: f64| match one(&[z]) {
                        Ok(v) => v[k],
                        Err(e) => {
                            err.get_or_insert(e);
                            0.0
                        }
                    },
                    -sigma,
                    sigma,
                    &breaks,
                    &QuadOptions {
                        abs_tol: 1e-13 * scale * 2.0 * sigma,
                        rel_tol: 1e-13,
                        ..QuadOptions::default()
                    },
                )?;
                if let Some(e) = err {
                    return Err(e);
                }
                *m = q.value / (2.0 * sigma);
            }
            Ok(StepMoments {
                mean,
                cov: [[0.0; 2]; 2],
            })
        }
        KernelMethod::MonteCarlo { n, antithetic } => {
            let mut s = [0.0; 2];
            let mut ss = [[0.0; 2]; 2];
            for _ in 0..n {
                let z = spec.draw_increment(param, x.len(), rng)?;
                let v = if antithetic {
                    let neg: Vec<f64> = z.iter().map(|c| -c).collect();
                    let (p, q) = (one(&z)?, one(&neg)?);
                    [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
                } else {
                    one(&z)?
                };
                for i in 0..2 {
                    s[i] += v[i];
                    for j in 0..2 {
                        ss[i][j] += v[i] * v[j];
                    }
                }
            }
            let nf = n as f64;
            let mean = [s[0] / nf, s[1] / nf];
            let mut cov = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] = (ss[i][j] - nf * mean[i] * mean[j]) / (nf - 1.0) / nf;
                }
            }
            Ok(StepMoments { mean, cov })
        }
    }
}

/// `sup_{x ∈ C} V^β(x)` over the corners `±R e_k` of `C = B(0, R)`.
pub(crate) fn sup_v_beta_on_c<M: Target<f64> + ?Sized>(target: &M, eta: f64, beta: f64, radius: f64) -> f64 {
    let n = target.dim();
    let mut best = 1.0f64;
    for k in 0..n {
        for s in [-1.0, 1.0] {
            let mut p = vec![0.0; n];
            p[k] = s * radius;
            best = best.max((-eta * beta * target.log_density(&p)).exp());
        }
    }
    best
}
