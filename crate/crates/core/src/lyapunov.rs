//! Lyapunov functions `V` (state) and `w` (parameter), the compound `W_i`/`U_i`,
//! and the per-scenario drift coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelParam;
use crate::linalg::Matrix;
use crate::scalar::{norm, Scalar};
use crate::targets::{TailClass, Target};

/// `V(x) = π(x)^{-η}`; `V ≥ 1` because targets are calibrated to `sup π = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovV<T> {
    pub eta: T,
}

impl<T: Scalar> LyapunovV<T> {
    pub fn new(eta: T) -> Result<Self> {
        if !(eta >= T::zero() && eta < T::one()) {
            return Err(Error::InvalidParameter(format!("eta must lie in [0, 1), got {eta}")));
        }
        Ok(Self { eta })
    }

    pub fn eval<M: Target<T> + ?Sized>(&self, target: &M, x: &[T]) -> T {
        (-self.eta * target.log_density(x)).exp()
    }

    pub fn eval_1d<M: Target<T> + ?Sized>(&self, target: &M, x: T) -> T {
        (-self.eta * target.log_density_1d(x)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum LyapunovW {
    /// `1 + |μ|^{2+ε} + |Γ|_F`
    AmPoly { eps: f64 },
    /// `exp(|θ|)`
    ExpAbs,
    /// `1 + θ²`
    OnePlusSquare,
}

impl LyapunovW {
    pub fn eval<T: Scalar>(&self, theta: &KernelParam<T>) -> Result<T> {
        match (self, theta) {
            (Self::AmPoly { eps }, KernelParam::Am { mu, gamma }) => {
                Ok(T::one() + norm(mu).powf(T::lit(2.0 + eps)) + gamma.frobenius())
            }
            (Self::ExpAbs, KernelParam::Scalar { theta }) => Ok(theta.abs().exp()),
            (Self::OnePlusSquare, KernelParam::Scalar { theta }) => Ok(T::one() + *theta * *theta),
            _ => Err(Error::Mismatch(format!("{self:?} cannot be evaluated on this parameter"))),
        }
    }

    /// Value of `w` at a scalar `θ`, for level-set arithmetic.
    pub fn eval_scalar<T: Scalar>(&self, theta: T) -> Result<T> {
        self.eval(&KernelParam::scalar(theta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompoundMode {
    W,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundSpec<T> {
    pub upsilon_v: T,
    pub upsilon_w: T,
    pub lambda_star: T,
    pub mode: CompoundMode,
}

impl<T: Scalar> CompoundSpec<T> {
    pub fn new(upsilon_v: T, upsilon_w: T, lambda_star: T, mode: CompoundMode) -> Result<Self> {
        let unit = |u: T| u > T::zero() && u <= T::one();
        if !unit(upsilon_v) || !unit(upsilon_w) {
            return Err(Error::InvalidParameter("compound exponents must lie in (0, 1]".into()));
        }
        if !(lambda_star >= T::one()) {
            return Err(Error::InvalidParameter("lambda_star must be at least 1".into()));
        }
        Ok(Self {
            upsilon_v,
            upsilon_w,
            lambda_star,
            mode,
        })
    }
}

/// `W_i = V^{υ_v} + w^{υ_w}/γ_i`, or `U_i = γ_i W_i`.
pub fn eval_compound<T: Scalar>(spec: &CompoundSpec<T>, v: T, w: T, gamma: T) -> Result<T> {
    if !(gamma > T::zero()) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let big_w = v.powf(spec.upsilon_v) + w.powf(spec.upsilon_w) / gamma;
    Ok(match spec.mode {
        CompoundMode::W => big_w,
        CompoundMode::U => gamma * big_w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    AmSuperexp,
    AmSubexp1d,
    Coerced,
    FastCoerced,
}

impl Scenario {
    pub fn w_function(&self, eps_poly: f64) -> LyapunovW {
        match self {
            Scenario::AmSuperexp | Scenario::AmSubexp1d => LyapunovW::AmPoly { eps: eps_poly },
            Scenario::Coerced => LyapunovW::ExpAbs,
            Scenario::FastCoerced => LyapunovW::OnePlusSquare,
        }
    }
}

/// `ι = 1` for light tails, `0.9` otherwise.
pub fn default_iota<T: Scalar>(tail: TailClass<T>) -> T {
    match tail {
        TailClass::Gaussian | TailClass::Superexponential { .. } => T::one(),
        _ => T::lit(0.9),
    }
}

/// The coefficients `a, b, c, d, e, Δ` of the state and parameter drift conditions.
///
/// `a0`, `b` and `big_c` are existential in the theory; verifiers fit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCoefficients<T> {
    pub scenario: Scenario,
    pub iota: T,
    pub beta: T,
    pub p_delta: T,
    pub a0: T,
    pub b: T,
    pub big_c: T,
    pub alpha_star: T,
    pub gamma_max: T,
    pub eps_am: T,
    /// `ε` of `w = 1 + |μ|^{2+ε} + |Γ|`.
    pub eps_poly: T,
    pub dim: usize,
    /// `sup_{x∈C} V^β(x)`.
    pub sup_c_v_beta: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientValues<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub e: T,
    pub delta0: T,
}

impl<T: Scalar> DriftCoefficients<T> {
    /// Scenario defaults: `β` from `ι`, `p_Δ = 1`, `a0 = b = C = 1`, `ε_AM = 0.1`, `ε = 0.5`.
    pub fn new(scenario: Scenario, iota: T, dim: usize) -> Self {
        let beta = match scenario {
            Scenario::AmSuperexp | Scenario::AmSubexp1d => {
                (iota / (T::one() + T::lit(dim as f64) * T::lit(0.5))).min(iota * T::lit(0.5))
            }
            Scenario::Coerced => iota / T::lit(3.0),
            Scenario::FastCoerced => iota * T::lit(0.49),
        };
        Self {
            scenario,
            iota,
            beta,
            p_delta: T::one(),
            a0: T::one(),
            b: T::one(),
            big_c: T::one(),
            alpha_star: T::lit(0.44),
            gamma_max: T::lit(0.05),
            eps_am: T::lit(0.1),
            eps_poly: T::lit(0.5),
            dim,
            sup_c_v_beta: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !unit(self.iota) || !unit(self.beta) {
            return Err(Error::InvalidParameter("iota and beta must lie in [0, 1]".into()));
        }
        if !(self.p_delta > T::zero() && self.p_delta <= self.iota / self.beta) {
            return Err(Error::InvalidParameter(format!(
                "p_delta must lie in (0, iota/beta], got {}",
                self.p_delta
            )));
        }
        if !(self.a0 > T::zero()) {
            return Err(Error::InvalidParameter("a0 must be positive".into()));
        }
        if matches!(self.scenario, Scenario::Coerced | Scenario::FastCoerced)
            && !(self.alpha_star > T::zero() && self.alpha_star < T::lit(0.5))
        {
            return Err(Error::InvalidParameter("alpha_star must lie in (0, 1/2)".into()));
        }
        Ok(())
    }

    fn coerced_margin(&self) -> T {
        self.alpha_star.min(T::lit(0.5) - self.alpha_star)
    }

    /// `Δ(z)`.
    pub fn delta(&self, z: T) -> T {
        match self.scenario {
            Scenario::AmSuperexp | Scenario::AmSubexp1d => {
                T::one() - self.big_c * (z + z.powf(T::one() / (T::lit(2.0) + self.eps_poly)))
            }
            Scenario::Coerced => self.coerced_margin() - self.gamma_max - self.big_c * z,
            Scenario::FastCoerced => {
                T::lit(2.0) * (self.coerced_margin() - self.gamma_max - self.big_c * z)
            }
        }
    }

    pub fn w_function(&self) -> LyapunovW {
        self.scenario.w_function(self.eps_poly.as_f64())
    }

    /// `a(θ)`, the inverse rate in `P_θ V ≤ V - a^{-1}(θ) V^ι` outside `C`.
    pub fn a(&self, theta: &KernelParam<T>) -> Result<T> {
        match (self.scenario, theta) {
            (Scenario::AmSuperexp, KernelParam::Am { .. }) => {
                let half_n = T::lit(self.dim as f64 * 0.5);
                let eps_norm = self.eps_am * T::lit(self.dim as f64).sqrt();
                let w = self.w_function().eval(theta)?;
                Ok((eps_norm.powf(half_n) + w.powf(half_n)) / self.a0)
            }
            (Scenario::AmSubexp1d, KernelParam::Am { gamma, .. }) if gamma.dim() == 1 => {
                let sigma = (gamma[(0, 0)] + self.eps_am).sqrt();
                Ok(sigma.max(T::one() / (sigma * sigma)) / self.a0)
            }
            (Scenario::Coerced | Scenario::FastCoerced, KernelParam::Scalar { theta }) => {
                Ok(theta.exp().max((-T::lit(2.0) * *theta).exp()) / self.a0)
            }
            _ => Err(Error::Mismatch(format!(
                "scenario {:?} does not match the parameter",
                self.scenario
            ))),
        }
    }

    pub fn at(&self, theta: &KernelParam<T>) -> Result<CoefficientValues<T>> {
        let a = self.a(theta)?;
        let w = self.w_function().eval(theta)?;
        let (c, d, e) = match self.scenario {
            Scenario::AmSuperexp | Scenario::AmSubexp1d => {
                let c = w.powf(-self.eps_poly / (T::lit(2.0) + self.eps_poly));
                (c, c + self.b.powf(self.beta) / w, w)
            }
            Scenario::Coerced => {
                let th = theta.components()[0];
                let c = if th.abs() <= self.gamma_max {
                    (T::lit(2.0) + self.coerced_margin()) / self.big_c
                } else {
                    T::zero()
                };
                (c, self.sup_c_v_beta / w + c, w)
            }
            Scenario::FastCoerced => {
                let th = theta.components()[0];
                let c = if th.abs() <= T::one() {
                    self.coerced_margin() / self.big_c
                } else {
                    T::zero()
                };
                let e = th.abs().exp();
                (c, T::lit(2.0) * self.sup_c_v_beta / e + c, e)
            }
        };
        Ok(CoefficientValues {
            a,
            b: self.b,
            c,
            d,
            e,
            delta0: self.delta(T::zero()),
        })
    }

    /// `a(θ) w(θ) e(θ)^{-p_Δ} / V(x)^{ι - p_Δ β}`; bounded on `{V^β/e ≥ ε}` under the coupling condition.
    pub fn coupling_ratio(&self, theta: &KernelParam<T>, v: T) -> Result<T> {
        let vals = self.at(theta)?;
        let w = self.w_function().eval(theta)?;
        Ok(vals.a * w * vals.e.powf(-self.p_delta) / v.powf(self.iota - self.p_delta * self.beta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetCheck<T> {
    pub lhs: T,
    pub rhs: T,
    pub holds: bool,
}

/// `√det Γ ≤ n^{-n/4} |Γ|_F^{n/2}`.
pub fn check_det_inequality<T: Scalar>(gamma: &Matrix<T>) -> Result<DetCheck<T>> {
    if !gamma.is_symmetric(T::lit(1e-12)) {
        return Err(Error::InvalidParameter("matrix is not symmetric".into()));
    }
    let n = T::lit(gamma.dim() as f64);
    let lhs = gamma.determinant_sym().max(T::zero()).sqrt();
    let rhs = n.powf(-n / T::lit(4.0)) * gamma.frobenius().powf(n * T::lit(0.5));
    Ok(DetCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + T::lit(1e-12),
    })
}

/// `1 + υx - (1+x)^υ`, non-negative for `x ≥ -1`, `υ ∈ (0, 1]`.
pub fn concavity_gap<T: Scalar>(x: T, upsilon: T) -> T {
    T::one() + upsilon * x - (T::one() + x).powf(upsilon)
}

/// `lA + (1-l)B - A^l B^{1-l}`, non-negative for `l ∈ [0, 1]`, `A, B > 0`.
pub fn convexity_gap<T: Scalar>(l: T, a: T, b: T) -> T {
    l * a + (T::one() - l) * b - a.powf(l) * b.powf(T::one() - l)
}
