//! Symmetric random-walk Metropolis kernels, the two-state toy chain, and
//! application of a kernel to a test function.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quadrature::{integrate_with_breaks, QuadOptions};
use crate::scalar::Scalar;
use crate::targets::{density_ratio, upsilon, Target};

pub const DEFAULT_STUDENT_DOF: f64 = 4.0;
pub const DEFAULT_EPS_AM: f64 = 0.1;
/// The `2.38²` of the AM proposal covariance `(2.38²/n)(Γ + ε I)`.
pub const AM_SCALE: f64 = 2.38 * 2.38;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProposalFamily {
    GaussianScaled,
    StudentScaled { dof: f64 },
    /// `q(z) = 1/2` on `[-1, 1]` (per coordinate).
    CompactUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Parametrization {
    AmCovariance { eps_am: f64 },
    /// `q_θ(z) = e^{-θ} q(e^{-θ} z)`.
    ScalarLogScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSpec {
    pub family: ProposalFamily,
    pub parametrization: Parametrization,
}

impl ProposalSpec {
    pub fn new(family: ProposalFamily, parametrization: Parametrization) -> Self {
        Self {
            family,
            parametrization,
        }
    }

    pub fn compact_scalar() -> Self {
        Self::new(ProposalFamily::CompactUniform, Parametrization::ScalarLogScale)
    }

    pub fn gaussian_am(eps_am: f64) -> Self {
        Self::new(
            ProposalFamily::GaussianScaled,
            Parametrization::AmCovariance { eps_am },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let ProposalFamily::StudentScaled { dof } = self.family {
            if !(dof > 0.0 && dof.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "student degrees of freedom must be positive, got {dof}"
                )));
            }
        }
        if let Parametrization::AmCovariance { eps_am } = self.parametrization {
            if !(eps_am > 0.0 && eps_am < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "eps_am must lie in (0, 1), got {eps_am}"
                )));
            }
        }
        Ok(())
    }

    fn draw_standard<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match self.family {
            ProposalFamily::GaussianScaled => (0..dim).map(|_| StandardNormal.sample(rng)).collect(),
            ProposalFamily::StudentScaled { dof } => {
                let t = StudentT::new(dof).expect("validated dof");
                (0..dim).map(|_| t.sample(rng)).collect()
            }
            ProposalFamily::CompactUniform => (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        }
    }

    /// Draws an increment `z ~ q_θ`.
    pub fn draw_increment<T: Scalar, R: Rng + ?Sized>(
        &self,
        param: &KernelParam<T>,
        dim: usize,
        rng: &mut R,
    ) -> Result<Vec<T>> {
        let xi: Vec<T> = self.draw_standard(dim, rng).into_iter().map(T::lit).collect();
        match (param, self.parametrization) {
            (KernelParam::Scalar { theta }, Parametrization::ScalarLogScale) => {
                let s = theta.exp();
                Ok(xi.into_iter().map(|v| v * s).collect())
            }
            (KernelParam::Am { mu, .. }, Parametrization::AmCovariance { eps_am }) => {
                if mu.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: mu.len(),
                    });
                }
                Ok(param.am_proposal_cov(T::lit(eps_am))?.sqrt_psd().matvec(&xi))
            }
            _ => Err(Error::Mismatch(
                "kernel parameter does not match proposal parametrization".into(),
            )),
        }
    }
}

/// The adaptation parameter θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    rename_all = "kebab-case",
    deny_unknown_fields,
    bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>")
)]
pub enum KernelParam<T> {
    Am { mu: Vec<T>, gamma: Matrix<T> },
    /// Log proposal scale, `σ = e^θ`.
    Scalar { theta: T },
}

impl<T: Scalar> KernelParam<T> {
    pub fn scalar(theta: T) -> Self {
        Self::Scalar { theta }
    }

    pub fn am(mu: Vec<T>, gamma: Matrix<T>) -> Self {
        Self::Am { mu, gamma }
    }

    pub fn validate(&self, spec: &ProposalSpec) -> Result<()> {
        match (self, spec.parametrization) {
            (Self::Scalar { theta }, Parametrization::ScalarLogScale) => {
                if theta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("theta must be finite".into()))
                }
            }
            (Self::Am { mu, gamma }, Parametrization::AmCovariance { eps_am }) => {
                if mu.len() != gamma.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: mu.len(),
                        got: gamma.dim(),
                    });
                }
                if !gamma.is_symmetric(T::lit(1e-12)) {
                    return Err(Error::InvalidParameter("Gamma must be symmetric".into()));
                }
                if gamma.min_eigenvalue() + T::lit(eps_am) <= T::zero() {
                    return Err(Error::InvalidParameter(
                        "Gamma + eps_am I must be positive definite".into(),
                    ));
                }
                Ok(())
            }
            _ => Err(Error::Mismatch(
                "kernel parameter does not match proposal parametrization".into(),
            )),
        }
    }

    /// `(2.38²/n)(Γ + ε I)`.
    pub fn am_proposal_cov(&self, eps_am: T) -> Result<Matrix<T>> {
        match self {
            Self::Am { gamma, .. } => {
                let n = gamma.dim();
                Ok(gamma
                    .add(&Matrix::scaled_identity(n, eps_am))
                    .scale(T::lit(AM_SCALE) / T::lit(n as f64)))
            }
            Self::Scalar { .. } => Err(Error::Mismatch("expected an AM parameter".into())),
        }
    }

    /// One-dimensional proposal half-width/scale `σ` under `spec`.
    pub fn sigma_1d(&self, spec: &ProposalSpec) -> Result<T> {
        match (self, spec.parametrization) {
            (Self::Scalar { theta }, Parametrization::ScalarLogScale) => Ok(theta.exp()),
            (Self::Am { gamma, .. }, Parametrization::AmCovariance { eps_am }) if gamma.dim() == 1 => {
                Ok(self.am_proposal_cov(T::lit(eps_am))?[(0, 0)].sqrt())
            }
            (Self::Am { .. }, Parametrization::AmCovariance { .. }) => Err(Error::DimensionMismatch {
                expected: 1,
                got: self.dim(),
            }),
            _ => Err(Error::Mismatch(
                "kernel parameter does not match proposal parametrization".into(),
            )),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Am { mu, .. } => mu.len(),
            Self::Scalar { .. } => 1,
        }
    }

    /// Flattened θ: `[θ]`, or `μ` followed by the upper triangle of `Γ`.
    pub fn components(&self) -> Vec<T> {
        match self {
            Self::Scalar { theta } => vec![*theta],
            Self::Am { mu, gamma } => {
                let n = gamma.dim();
                let mut out = mu.clone();
                for i in 0..n {
                    for j in i..n {
                        out.push(gamma[(i, j)]);
                    }
                }
                out
            }
        }
    }

    pub fn component_names(&self) -> Vec<String> {
        match self {
            Self::Scalar { .. } => vec!["theta".into()],
            Self::Am { mu, .. } => {
                let n = mu.len();
                let mut names: Vec<String> = (1..=n).map(|i| format!("mu_{i}")).collect();
                for i in 1..=n {
                    for j in i..=n {
                        names.push(format!("gamma_{i}{j}"));
                    }
                }
                names
            }
        }
    }

    /// Largest absolute component; used by the divergence guard.
    pub fn max_abs(&self) -> T {
        self.components()
            .into_iter()
            .fold(T::zero(), |m, v| if v.is_nan() { v } else { m.max(v.abs()) })
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite())
    }
}

/// `α(x, y) = 1 ∧ π(y)/π(x)`.
pub fn accept_prob<T: Scalar, M: Target<T> + ?Sized>(target: &M, x: &[T], y: &[T]) -> Result<T> {
    Ok(density_ratio(target, y, x)?.min(T::one()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step<T> {
    pub x: Vec<T>,
    pub proposed: Vec<T>,
    pub accepted: bool,
    /// `α(X_i, Y_{i+1})`, reported even on rejection.
    pub alpha: T,
}

pub fn srwm_step<T: Scalar, M: Target<T> + ?Sized, R: Rng + ?Sized>(
    target: &M,
    spec: &ProposalSpec,
    param: &KernelParam<T>,
    x: &[T],
    rng: &mut R,
) -> Result<Step<T>> {
    if x.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: x.len(),
        });
    }
    let z = spec.draw_increment(param, x.len(), rng)?;
    let y: Vec<T> = x.iter().zip(&z).map(|(&a, &b)| a + b).collect();
    let alpha = accept_prob(target, x, &y)?;
    let u: f64 = rng.random();
    let accepted = T::lit(u) < alpha;
    Ok(Step {
        x: if accepted { y.clone() } else { x.to_vec() },
        proposed: y,
        accepted,
        alpha,
    })
}

/// Breakpoints on `[-σ, σ]` (as increments) where `z ↦ α(x, x+z)` has kinks.
pub(crate) fn kink_points<T: Scalar, M: Target<T> + ?Sized>(target: &M, x: T) -> Vec<T> {
    let mut breaks = vec![T::zero()];
    if target.unimodal_1d() {
        let mode = target.mode()[0];
        breaks.push(mode - x);
        if let Ok(u) = upsilon(target, x) {
            breaks.push(u - x);
        }
    }
    breaks
}

/// `α_σ(x) = ∫ 1 ∧ π(x+z)/π(x) q_σ(z) dz` for the uniform proposal on `[-σ, σ]`.
pub fn mean_acceptance<T: Scalar, M: Target<T> + ?Sized>(target: &M, sigma: T, x: T) -> Result<T> {
    if target.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: target.dim(),
        });
    }
    if !(sigma > T::zero()) {
        return Err(Error::InvalidParameter("sigma must be positive".into()));
    }
    let lx = target.log_density_1d(x);
    if !lx.is_finite() {
        return Err(Error::InvalidPoint(vec![x.as_f64()]));
    }
    let breaks: Vec<T> = kink_points(target, x).into_iter().map(|b| b / sigma).collect();
    let f = |u: T| (target.log_density_1d(x + sigma * u) - lx).min(T::zero()).exp();
    let q = integrate_with_breaks(f, -T::one(), T::one(), &breaks, &QuadOptions::with_abs_tol(1e-9))?;
    Ok(q.value * T::lit(0.5))
}

/// `∫ π α_σ / ∫ π` over `[lo, hi]`: the acceptance rate of the stationary chain.
pub fn stationary_acceptance<T: Scalar, M: Target<T> + ?Sized>(
    target: &M,
    sigma: T,
    lo: T,
    hi: T,
) -> Result<T> {
    let opts = QuadOptions::with_abs_tol(1e-9);
    let mode = target.mode();
    let mut err = None;
    let num = integrate_with_breaks(
        |x: T| match mean_acceptance(target, sigma, x) {
            Ok(a) => a * target.log_density_1d(x).exp(),
            Err(e) => {
                err.get_or_insert(e);
                T::zero()
            }
        },
        lo,
        hi,
        &mode,
        &opts,
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    let den = integrate_with_breaks(|x: T| target.log_density_1d(x).exp(), lo, hi, &mode, &opts)?;
    Ok(num.value / den.value)
}

/// Density of the absolutely continuous part of the uniform-proposal kernel,
/// `k_σ(x, y) = α(x, y) q_σ(y - x)`.
pub fn kernel_density_1d<T: Scalar, M: Target<T> + ?Sized>(target: &M, sigma: T, x: T, y: T) -> Result<T> {
    if (y - x).abs() > sigma {
        return Ok(T::zero());
    }
    Ok(accept_prob(target, &[x], &[y])? / (sigma + sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelMethod {
    Quadrature,
    /// `n` proposal draws; with `antithetic`, `n` pairs `(z, -z)`.
    MonteCarlo {
        n: usize,
        #[serde(default)]
        antithetic: bool,
    },
}

/// Estimate of `P_θ f(x)` together with its standard error (0 for quadrature).
///
/// Uses `P f(x) = f(x) + ∫ (f(x+z) - f(x)) α(x, x+z) q_θ(z) dz`, which keeps `P 1 = 1`
/// exactly. The Monte Carlo variant averages this integrand over proposals, so the
/// accept/reject coin is integrated out.
pub fn apply_kernel_to_function<T, M, F, R>(
    target: &M,
    spec: &ProposalSpec,
    param: &KernelParam<T>,
    f: F,
    x: &[T],
    method: KernelMethod,
    rng: &mut R,
) -> Result<(T, T)>
where
    T: Scalar,
    M: Target<T> + ?Sized,
    F: Fn(&[T]) -> T,
    R: Rng + ?Sized,
{
    let checked = |p: &[T]| -> Result<T> {
        let v = f(p);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonIntegrable {
                point: p.iter().map(|c| c.as_f64()).collect(),
                value: v.as_f64(),
            })
        }
    };
    let fx = checked(x)?;
    let lx = target.log_density(x);
    if !lx.is_finite() {
        return Err(Error::InvalidPoint(x.iter().map(|c| c.as_f64()).collect()));
    }
    match method {
        KernelMethod::Quadrature => {
            if target.dim() != 1 || spec.family != ProposalFamily::CompactUniform {
                return Err(Error::InvalidParameter(
                    "quadrature needs a one-dimensional target and the compact uniform proposal".into(),
                ));
            }
            let sigma = param.sigma_1d(spec)?;
            let x0 = x[0];
            let mut err = None;
            let breaks = kink_points(target, x0);
            let g = |z: T| {
                let y = x0 + z;
                let a = (target.log_density_1d(y) - lx).min(T::zero()).exp();
                match checked(&[y]) {
                    Ok(fy) => (fy - fx) * a,
                    Err(e) => {
                        err.get_or_insert(e);
                        T::zero()
                    }
                }
            };
            let opts = QuadOptions {
                abs_tol: 1e-13 * fx.as_f64().abs().max(1.0) * 2.0 * sigma.as_f64(),
                rel_tol: 1e-12,
                ..QuadOptions::default()
            };
            let q = integrate_with_breaks(g, -sigma, sigma, &breaks, &opts)?;
            if let Some(e) = err {
                return Err(e);
            }
            Ok((fx + q.value / (sigma + sigma), T::zero()))
        }
        KernelMethod::MonteCarlo { n, antithetic } => {
            if n < 2 {
                return Err(Error::InvalidParameter("Monte Carlo needs at least 2 draws".into()));
            }
            let dim = x.len();
            let one = |z: &[T]| -> Result<T> {
                let y: Vec<T> = x.iter().zip(z).map(|(&a, &b)| a + b).collect();
                let a = (target.log_density(&y) - lx).min(T::zero()).exp();
                let a = if a.is_nan() { T::zero() } else { a };
                if a == T::zero() {
                    return Ok(fx);
                }
                Ok(fx + (checked(&y)? - fx) * a)
            };
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for _ in 0..n {
                let z = spec.draw_increment(param, dim, rng)?;
                let g = if antithetic {
                    let neg: Vec<T> = z.iter().map(|&v| -v).collect();
                    (one(&z)? + one(&neg)?) * T::lit(0.5)
                } else {
                    one(&z)?
                };
                let g = g.as_f64();
                sum += g;
                sum_sq += g * g;
            }
            let nf = n as f64;
            let mean = sum / nf;
            let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
            Ok((T::lit(mean), T::lit((var / nf).sqrt())))
        }
    }
}

/// Flip probability `e^{-|θ|}` of the two-state toy chain.
pub fn toy_flip_prob<T: Scalar>(theta: T) -> T {
    (-theta.abs()).exp()
}

pub fn toy_step<T: Scalar, R: Rng + ?Sized>(theta: T, x: u8, rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    if T::lit(u) < toy_flip_prob(theta) {
        1 - x
    } else {
        x
    }
}

pub fn toy_transition_matrix<T: Scalar>(theta: T) -> Matrix<T> {
    let p = toy_flip_prob(theta);
    let stay = T::one() - p;
    Matrix::from_rows(&[vec![stay, p], vec![p, stay]]).expect("2x2")
}

/// `λ = 1 - 2 e^{-|θ|}`.
pub fn toy_second_eigenvalue<T: Scalar>(theta: T) -> T {
    T::one() - T::lit(2.0) * toy_flip_prob(theta)
}
