//! Parameter updates `θ ← θ + γ H(θ, x)`, stepsize schedules and the Kesten counter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelParam;
use crate::linalg::Matrix;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AdaptationRule {
    /// Adaptive Metropolis: running mean and covariance.
    Am,
    /// `θ += γ (α - α*)`.
    Coerced { alpha_star: f64 },
    /// `θ += γ (|θ| + 1)(α - α*)`.
    FastCoerced { alpha_star: f64 },
    /// Two-state toy chain: `θ += γ (1/2 - X)`.
    Toy,
}

impl AdaptationRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Coerced { alpha_star } | Self::FastCoerced { alpha_star } => {
                if *alpha_star > 0.0 && *alpha_star < 0.5 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "alpha_star must lie in (0, 1/2), got {alpha_star}"
                    )))
                }
            }
            _ => Ok(()),
        }
    }

    /// `H(θ, x)` flattened like [`KernelParam::components`]; `alpha` is `α(X_i, Y_{i+1})`.
    pub fn increment<T: Scalar>(&self, theta: &KernelParam<T>, x_new: &[T], alpha: T) -> Result<Vec<T>> {
        match (self, theta) {
            (Self::Am, KernelParam::Am { mu, gamma }) => {
                let d: Vec<T> = x_new.iter().zip(mu).map(|(&a, &m)| a - m).collect();
                let mut h = d.clone();
                h.extend(KernelParam::am(mu.clone(), Matrix::outer(&d).sub(gamma)).components()[mu.len()..].iter());
                Ok(h)
            }
            (Self::Coerced { alpha_star }, KernelParam::Scalar { .. }) => Ok(vec![alpha - T::lit(*alpha_star)]),
            (Self::FastCoerced { alpha_star }, KernelParam::Scalar { theta }) => {
                Ok(vec![(theta.abs() + T::one()) * (alpha - T::lit(*alpha_star))])
            }
            (Self::Toy, KernelParam::Scalar { .. }) => Ok(vec![T::lit(0.5) - x_new[0]]),
            _ => Err(Error::Mismatch(format!("{self:?} does not match the parameter"))),
        }
    }

    /// `φ_γ(θ, x) = θ + γ H(θ, x)`.
    pub fn apply<T: Scalar>(&self, theta: &KernelParam<T>, x_new: &[T], alpha: T, gamma: T) -> Result<KernelParam<T>> {
        match (self, theta) {
            (Self::Am, KernelParam::Am { mu, gamma: cov }) => {
                let (m, c) = am_update(mu, cov, x_new, gamma)?;
                Ok(KernelParam::am(m, c))
            }
            (Self::Coerced { alpha_star }, KernelParam::Scalar { theta }) => {
                Ok(KernelParam::scalar(coerced_update(*theta, alpha, gamma, T::lit(*alpha_star))))
            }
            (Self::FastCoerced { alpha_star }, KernelParam::Scalar { theta }) => {
                Ok(KernelParam::scalar(fast_coerced_update(*theta, alpha, gamma, T::lit(*alpha_star))))
            }
            (Self::Toy, KernelParam::Scalar { theta }) => {
                Ok(KernelParam::scalar(*theta + gamma * (T::lit(0.5) - x_new[0])))
            }
            _ => Err(Error::Mismatch(format!("{self:?} does not match the parameter"))),
        }
    }
}

/// `μ' = μ + γ(x - μ)`, `Γ' = Γ + γ((x - μ)(x - μ)ᵀ - Γ)`. Requires `γ ∈ (0, 1)`.
pub fn am_update<T: Scalar>(mu: &[T], gamma_mat: &Matrix<T>, x_new: &[T], gamma: T) -> Result<(Vec<T>, Matrix<T>)> {
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(Error::InvalidParameter(format!(
            "AM stepsize must lie in (0, 1), got {gamma}"
        )));
    }
    if mu.len() != x_new.len() || gamma_mat.dim() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            got: x_new.len(),
        });
    }
    let d: Vec<T> = x_new.iter().zip(mu).map(|(&a, &m)| a - m).collect();
    let mu_new = mu.iter().zip(&d).map(|(&m, &di)| m + gamma * di).collect();
    // convex combination keeps Γ in the PSD cone
    let cov_new = gamma_mat.scale(T::one() - gamma).add(&Matrix::outer(&d).scale(gamma));
    Ok((mu_new, cov_new))
}

pub fn coerced_update<T: Scalar>(theta: T, alpha: T, gamma: T, alpha_star: T) -> T {
    theta + gamma * (alpha - alpha_star)
}

pub fn fast_coerced_update<T: Scalar>(theta: T, alpha: T, gamma: T, alpha_star: T) -> T {
    theta + gamma * (theta.abs() + T::one()) * (alpha - alpha_star)
}

/// `s + 1{⟨H_prev, H_cur⟩ < 0}`; a zero inner product does not count.
pub fn kesten_advance<T: Scalar>(s: u64, h_prev: &[T], h_cur: &[T]) -> u64 {
    if dot(h_prev, h_cur) < T::zero() {
        s + 1
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepsizeSchedule {
    /// `γ_i = c0 / (c1 + i)^a`.
    Polynomial { c0: f64, c1: f64, a: f64 },
    Constant { gamma0: f64 },
    /// `γ = c0 / (1 + s)^exponent`, `s` the Kesten counter.
    Kesten {
        c0: f64,
        #[serde(default = "default_kesten_exponent")]
        exponent: f64,
    },
}

fn default_kesten_exponent() -> f64 {
    0.6
}

impl StepsizeSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match *self {
            Self::Polynomial { c0, c1, a } => {
                if !(c0 > 0.0 && c1 >= 0.0 && a > 0.0 && a <= 1.0) {
                    return bad(format!("polynomial schedule needs c0 > 0, c1 >= 0, a in (0, 1]; got {c0}, {c1}, {a}"));
                }
                if c1 + 1.0 <= 0.0 {
                    return bad("c1 + 1 must be positive".into());
                }
                Ok(())
            }
            Self::Constant { gamma0 } if gamma0 > 0.0 && gamma0.is_finite() => Ok(()),
            Self::Constant { gamma0 } => bad(format!("constant stepsize must be positive, got {gamma0}")),
            Self::Kesten { c0, exponent } if c0 > 0.0 && exponent >= 0.0 => Ok(()),
            Self::Kesten { .. } => bad("kesten schedule needs c0 > 0 and a non-negative exponent".into()),
        }
    }

    /// Largest stepsize the schedule can emit.
    pub fn gamma_max(&self) -> f64 {
        match *self {
            Self::Polynomial { c0, c1, a } => c0 / (c1 + 1.0).powf(a),
            Self::Constant { gamma0 } => gamma0,
            Self::Kesten { c0, .. } => c0,
        }
    }

    /// `γ_i` for `i ≥ 1`; `kesten_s` is the counter (ignored by deterministic schedules).
    pub fn gamma_at<T: Scalar>(&self, i: u64, kesten_s: u64) -> T {
        match *self {
            Self::Polynomial { c0, c1, a } => T::lit(c0) / (T::lit(c1) + T::lit(i as f64)).powf(T::lit(a)),
            Self::Constant { gamma0 } => T::lit(gamma0),
            Self::Kesten { c0, exponent } => {
                T::lit(c0) / (T::one() + T::lit(kesten_s as f64)).powf(T::lit(exponent))
            }
        }
    }

    pub fn is_kesten(&self) -> bool {
        matches!(self, Self::Kesten { .. })
    }

    /// `limsup (γ_{i+1}^{-1} - γ_i^{-1})`.
    pub fn inverse_diff_limsup(&self) -> Result<f64> {
        match *self {
            Self::Polynomial { c0, a, .. } => Ok(if a < 1.0 { 0.0 } else { 1.0 / c0 }),
            Self::Constant { .. } => Ok(0.0),
            Self::Kesten { .. } => Err(Error::NoAnalyticLimit),
        }
    }
}

/// Kesten counter state owned by one chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KestenState<T> {
    pub s: u64,
    prev: Option<Vec<T>>,
}

impl<T: Scalar> KestenState<T> {
    pub fn new() -> Self {
        Self { s: 0, prev: None }
    }

    /// Records `H(θ_i, X_{i+1})`; the counter stays frozen on the first call.
    pub fn observe(&mut self, h: Vec<T>) {
        if let Some(prev) = &self.prev {
            self.s = kesten_advance(self.s, prev, &h);
        }
        self.prev = Some(h);
    }
}

/// Target moments `(μ_π, Γ_π)` for the AM mean field.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldAm<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

impl<T: Scalar> MeanFieldAm<T> {
    pub fn from_target<M: crate::targets::Target<T> + ?Sized>(target: &M) -> Result<Self> {
        match (target.known_mean(), target.known_cov()) {
            (Some(mean), Some(cov)) => Ok(Self { mean, cov }),
            _ => Err(Error::UnknownMoments),
        }
    }
}

/// `h(θ) = (μ_π - μ, (μ_π - μ)(μ_π - μ)ᵀ + Γ_π - Γ)`.
pub fn mean_field_am<T: Scalar>(mu: &[T], gamma: &Matrix<T>, moments: &MeanFieldAm<T>) -> Result<(Vec<T>, Matrix<T>)> {
    if mu.len() != moments.mean.len() || gamma.dim() != moments.cov.dim() {
        return Err(Error::DimensionMismatch {
            expected: moments.mean.len(),
            got: mu.len(),
        });
    }
    let d: Vec<T> = moments.mean.iter().zip(mu).map(|(&a, &b)| a - b).collect();
    let h_cov = Matrix::outer(&d).add(&moments.cov).sub(gamma);
    Ok((d, h_cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn am_update_examples() {
        let (m, c) = am_update(&[0.0f64], &Matrix::identity(1), &[2.0], 0.1).unwrap();
        assert!((m[0] - 0.2).abs() < 1e-15 && (c[(0, 0)] - 1.3).abs() < 1e-15);
        let (m, c) = am_update(&[0.5], &Matrix::diagonal(&[2.0]), &[0.5], 0.25).unwrap();
        assert_eq!(m, vec![0.5]);
        assert_eq!(c[(0, 0)], 1.5);
        let (m, c) = am_update(&[1.0f64], &Matrix::diagonal(&[3.0]), &[7.0], 1e-16).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-14 && (c[(0, 0)] - 3.0).abs() < 1e-14);
        assert!(am_update(&[0.0], &Matrix::identity(1), &[1.0], 1.0).is_err());
    }

    #[test]
    fn coerced_examples() {
        assert_eq!(coerced_update(1.3, 0.44, 0.2, 0.44), 1.3);
        assert!((coerced_update(2.0f64, 1.0, 0.1, 0.44) - 2.056).abs() < 1e-12);
        assert!((coerced_update(-1.0f64, 0.0, 0.5, 0.44) + 1.22).abs() < 1e-12);
        assert!((fast_coerced_update(2.0f64, 1.0, 0.1, 0.44) - 2.168).abs() < 1e-12);
        assert_eq!(fast_coerced_update(0.0, 0.9, 0.3, 0.44), coerced_update(0.0, 0.9, 0.3, 0.44));
    }

    #[test]
    fn kesten_examples() {
        assert_eq!(kesten_advance(3, &[1.0, 0.0], &[-1.0, 0.0]), 4);
        assert_eq!(kesten_advance(3, &[1.0, 0.0], &[0.0, 1.0]), 3);
        assert_eq!(kesten_advance(3, &[0.3, 0.2], &[0.3, 0.2]), 3);
        let mut k = KestenState::<f64>::new();
        k.observe(vec![1.0]);
        assert_eq!(k.s, 0);
        k.observe(vec![-1.0]);
        assert_eq!(k.s, 1);
    }

    #[test]
    fn schedule_examples() {
        let p = StepsizeSchedule::Polynomial { c0: 1.0, c1: 0.0, a: 0.6 };
        assert_eq!(p.gamma_at::<f64>(1, 0), 1.0);
        assert!((p.gamma_at::<f64>(100, 0) - 0.0630957344480193).abs() < 1e-12);
        assert_eq!(StepsizeSchedule::Constant { gamma0: 0.05 }.gamma_at::<f64>(77, 0), 0.05);
        let lim = |s: StepsizeSchedule| s.inverse_diff_limsup();
        assert_eq!(lim(StepsizeSchedule::Polynomial { c0: 2.0, c1: 0.0, a: 0.6 }).unwrap(), 0.0);
        assert_eq!(lim(StepsizeSchedule::Constant { gamma0: 0.05 }).unwrap(), 0.0);
        assert_eq!(lim(StepsizeSchedule::Polynomial { c0: 4.0, c1: 0.0, a: 1.0 }).unwrap(), 0.25);
        assert!(matches!(
            lim(StepsizeSchedule::Kesten { c0: 1.0, exponent: 0.6 }),
            Err(Error::NoAnalyticLimit)
        ));
    }

    #[test]
    fn schedule_json_shape() {
        let s: StepsizeSchedule = serde_json::from_str(r#"{"kind":"polynomial","c0":0.5,"c1":10,"a":0.6}"#).unwrap();
        assert_eq!(s, StepsizeSchedule::Polynomial { c0: 0.5, c1: 10.0, a: 0.6 });
        let k: StepsizeSchedule = serde_json::from_str(r#"{"kind":"kesten","c0":0.5}"#).unwrap();
        assert_eq!(k, StepsizeSchedule::Kesten { c0: 0.5, exponent: 0.6 });
    }

    #[test]
    fn mean_field_examples() {
        let mf = MeanFieldAm { mean: vec![0.0], cov: Matrix::diagonal(&[4.0]) };
        let (hm, hc) = mean_field_am(&[1.0], &Matrix::identity(1), &mf).unwrap();
        assert_eq!(hm, vec![-1.0]);
        assert_eq!(hc[(0, 0)], 4.0);
        let (hm, hc) = mean_field_am(&[0.0], &Matrix::diagonal(&[4.0]), &mf).unwrap();
        assert_eq!(hm, vec![0.0]);
        assert_eq!(hc[(0, 0)], 0.0);
        let (_, hc) = mean_field_am(&[0.0], &Matrix::diagonal(&[9.0]), &mf).unwrap();
        assert_eq!(hc[(0, 0)], -5.0);
    }

    #[test]
    fn am_increment_layout() {
        let th = KernelParam::am(vec![1.0], Matrix::diagonal(&[2.0]));
        let h = AdaptationRule::Am.increment(&th, &[3.0], 0.0).unwrap();
        assert_eq!(h, vec![2.0, 2.0]);
    }
}
