//! Target densities and the one-dimensional tail functionals built on them.
//!
//! All log-densities are unnormalized and calibrated so that their supremum is 0,
//! which makes `π^{-η}` a valid Lyapunov function without any extra constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quadrature::{integrate_to_infinity, integrate_with_breaks, QuadOptions};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "class")]
pub enum TailClass<T> {
    Superexponential { rho: T },
    Subexponential { p: T },
    Gaussian,
    Custom,
}

/// A (possibly unnormalized) target density `π`, accessed through `ℓ = log π`.
pub trait Target<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    /// `ℓ(x)`, calibrated so that `sup ℓ = 0`.
    fn log_density(&self, x: &[T]) -> T;

    fn grad_log_density(&self, x: &[T]) -> Vec<T>;

    /// `ℓ''(x)` for one-dimensional targets.
    fn hess_log_density_1d(&self, _x: T) -> Option<T> {
        None
    }

    fn tail_class(&self) -> TailClass<T>;

    fn mode(&self) -> Vec<T>;

    fn known_mean(&self) -> Option<Vec<T>> {
        None
    }

    fn known_cov(&self) -> Option<Matrix<T>> {
        None
    }

    /// Enables the level-crossing map `Υ` (one-dimensional, single mode).
    fn unimodal_1d(&self) -> bool {
        false
    }

    fn log_density_1d(&self, x: T) -> T {
        self.log_density(&[x])
    }
}

/// The catalogue of targets used by experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinTarget<T> {
    /// `ℓ(x) = -½ (x-μ)ᵀ Σ⁻¹ (x-μ)`.
    Gaussian {
        mean: Vec<T>,
        cov: Matrix<T>,
        precision: Matrix<T>,
    },
    /// `ℓ(x) = 1 - (1+x²)^{α/2}`, a smooth version of `-|x|^α`.
    SmoothedSubexponential { alpha: T },
    /// `ℓ(x) = -|x|^α` exactly; not differentiable at the mode.
    PowerTail { alpha: T },
    /// `ℓ(x) = -x²/(2 v₊)` for `x ≥ 0` and `-x²/(2 v₋)` for `x < 0`.
    AsymmetricGaussian { var_pos: T, var_neg: T },
}

impl<T: Scalar> BuiltinTarget<T> {
    pub fn gaussian(mean: Vec<T>, cov: Matrix<T>) -> Result<Self> {
        if cov.dim() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.dim(),
            });
        }
        if !cov.is_symmetric(T::lit(1e-12)) {
            return Err(Error::InvalidParameter("covariance is not symmetric".into()));
        }
        let precision = cov.inverse_spd()?;
        Ok(Self::Gaussian {
            mean,
            cov,
            precision,
        })
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self::gaussian(vec![T::zero(); dim], Matrix::identity(dim)).expect("identity is SPD")
    }

    pub fn gaussian_1d(mean: T, var: T) -> Result<Self> {
        Self::gaussian(vec![mean], Matrix::diagonal(&[var]))
    }

    pub fn smoothed_subexponential(alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::lit(2.0)) {
            return Err(Error::InvalidParameter(format!(
                "subexponential exponent must lie in (0, 2), got {alpha}"
            )));
        }
        Ok(Self::SmoothedSubexponential { alpha })
    }

    pub fn power_tail(alpha: T) -> Result<Self> {
        if !(alpha > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "power-tail exponent must be positive, got {alpha}"
            )));
        }
        Ok(Self::PowerTail { alpha })
    }

    pub fn asymmetric_gaussian(var_pos: T, var_neg: T) -> Result<Self> {
        if !(var_pos > T::zero() && var_neg > T::zero()) {
            return Err(Error::InvalidParameter("variances must be positive".into()));
        }
        Ok(Self::AsymmetricGaussian { var_pos, var_neg })
    }
}

impl<T: Scalar> Target<T> for BuiltinTarget<T> {
    fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            _ => 1,
        }
    }

    fn log_density(&self, x: &[T]) -> T {
        let half = T::lit(0.5);
        match self {
            Self::Gaussian {
                mean, precision, ..
            } => {
                let d: Vec<T> = x.iter().zip(mean).map(|(&a, &m)| a - m).collect();
                -half * precision.quad_form(&d)
            }
            Self::SmoothedSubexponential { alpha } => {
                let x = x[0];
                T::one() - (T::one() + x * x).powf(*alpha * half)
            }
            Self::PowerTail { alpha } => -x[0].abs().powf(*alpha),
            Self::AsymmetricGaussian { var_pos, var_neg } => {
                let x = x[0];
                let v = if x >= T::zero() { *var_pos } else { *var_neg };
                -half * x * x / v
            }
        }
    }

    fn grad_log_density(&self, x: &[T]) -> Vec<T> {
        let half = T::lit(0.5);
        match self {
            Self::Gaussian {
                mean, precision, ..
            } => {
                let d: Vec<T> = x.iter().zip(mean).map(|(&a, &m)| a - m).collect();
                precision.matvec(&d).into_iter().map(|g| -g).collect()
            }
            Self::SmoothedSubexponential { alpha } => {
                let x = x[0];
                vec![-*alpha * x * (T::one() + x * x).powf(*alpha * half - T::one())]
            }
            Self::PowerTail { alpha } => {
                let x = x[0];
                if x == T::zero() {
                    vec![T::zero()]
                } else {
                    vec![-*alpha * x.abs().powf(*alpha - T::one()) * x.signum()]
                }
            }
            Self::AsymmetricGaussian { var_pos, var_neg } => {
                let x = x[0];
                let v = if x >= T::zero() { *var_pos } else { *var_neg };
                vec![-x / v]
            }
        }
    }

    fn hess_log_density_1d(&self, x: T) -> Option<T> {
        match self {
            Self::Gaussian { precision, .. } if precision.dim() == 1 => Some(-precision[(0, 0)]),
            Self::Gaussian { .. } => None,
            Self::SmoothedSubexponential { alpha } => {
                let a = *alpha;
                let s = T::one() + x * x;
                Some(-a * s.powf(a * T::lit(0.5) - T::lit(2.0)) * (T::one() + (a - T::one()) * x * x))
            }
            Self::PowerTail { alpha } => {
                if x == T::zero() {
                    None
                } else {
                    let a = *alpha;
                    Some(-a * (a - T::one()) * x.abs().powf(a - T::lit(2.0)))
                }
            }
            Self::AsymmetricGaussian { var_pos, var_neg } => {
                Some(-T::one() / if x >= T::zero() { *var_pos } else { *var_neg })
            }
        }
    }

    fn tail_class(&self) -> TailClass<T> {
        match self {
            Self::Gaussian { .. } | Self::AsymmetricGaussian { .. } => TailClass::Gaussian,
            Self::SmoothedSubexponential { alpha } | Self::PowerTail { alpha } => {
                if *alpha < T::one() {
                    TailClass::Subexponential { p: *alpha }
                } else if *alpha > T::one() {
                    TailClass::Superexponential { rho: *alpha }
                } else {
                    TailClass::Custom
                }
            }
        }
    }

    fn mode(&self) -> Vec<T> {
        match self {
            Self::Gaussian { mean, .. } => mean.clone(),
            _ => vec![T::zero()],
        }
    }

    fn known_mean(&self) -> Option<Vec<T>> {
        match self {
            Self::Gaussian { mean, .. } => Some(mean.clone()),
            Self::SmoothedSubexponential { .. } | Self::PowerTail { .. } => Some(vec![T::zero()]),
            Self::AsymmetricGaussian { .. } => None,
        }
    }

    fn known_cov(&self) -> Option<Matrix<T>> {
        match self {
            Self::Gaussian { cov, .. } => Some(cov.clone()),
            _ => None,
        }
    }

    fn unimodal_1d(&self) -> bool {
        self.dim() == 1
    }
}

/// Config-level description of a builtin target, keyed by `"target"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian {
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default)]
        mean: Option<Vec<f64>>,
        #[serde(default)]
        cov: Option<Vec<Vec<f64>>>,
    },
    Subexp {
        alpha: f64,
    },
    PowerTail {
        alpha: f64,
    },
    AsymmetricGaussian {
        var_pos: f64,
        var_neg: f64,
    },
}

impl TargetSpec {
    pub fn build(&self) -> Result<BuiltinTarget<f64>> {
        match self {
            TargetSpec::Gaussian { dim, mean, cov } => {
                let n = dim
                    .or(mean.as_ref().map(Vec::len))
                    .or(cov.as_ref().map(Vec::len))
                    .unwrap_or(1);
                let mean = mean.clone().unwrap_or_else(|| vec![0.0; n]);
                let cov = match cov {
                    Some(rows) => Matrix::from_rows(rows)?,
                    None => Matrix::identity(n),
                };
                BuiltinTarget::gaussian(mean, cov)
            }
            TargetSpec::Subexp { alpha } => BuiltinTarget::smoothed_subexponential(*alpha),
            TargetSpec::PowerTail { alpha } => BuiltinTarget::power_tail(*alpha),
            TargetSpec::AsymmetricGaussian { var_pos, var_neg } => {
                BuiltinTarget::asymmetric_gaussian(*var_pos, *var_neg)
            }
        }
    }
}

fn checked_log_density<T: Scalar, M: Target<T> + ?Sized>(target: &M, x: &[T]) -> Result<T> {
    let l = target.log_density(x);
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::InvalidPoint(x.iter().map(|v| v.as_f64()).collect()))
    }
}

/// `π(y)/π(x) = exp(ℓ(y) - ℓ(x))`.
pub fn density_ratio<T: Scalar, M: Target<T> + ?Sized>(target: &M, y: &[T], x: &[T]) -> Result<T> {
    let ly = checked_log_density(target, y)?;
    let lx = checked_log_density(target, x)?;
    Ok((ly - lx).exp())
}

/// `Υ(x)`: the point on the opposite side of the mode with `π(Υ(x)) = π(x)`.
pub fn upsilon<T: Scalar, M: Target<T> + ?Sized>(target: &M, x: T) -> Result<T> {
    if target.dim() != 1 || !target.unimodal_1d() {
        return Err(Error::NotUnimodal);
    }
    let mode = target.mode()[0];
    if x == mode {
        return Ok(x);
    }
    let level = checked_log_density(target, &[x])?;
    let dir = if x > mode { -T::one() } else { T::one() };
    let at = |s: T| target.log_density_1d(mode + dir * s);

    let mut lo = T::zero();
    let mut hi = (x - mode).abs();
    loop {
        let l = at(hi);
        if l == level {
            return Ok(mode + dir * hi);
        }
        if l < level {
            break;
        }
        lo = hi;
        hi = hi + hi;
        if !hi.is_finite() {
            return Err(Error::InvalidParameter(
                "density does not cross the level on the far side of the mode".into(),
            ));
        }
    }
    // bisect all the way down to adjacent floats; 1e-10 is only the ceiling
    loop {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if at(mid) >= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mode + dir * (lo + hi) * T::lit(0.5))
}

/// `(I_γ(x), J_γ(x))` where
/// `I_γ(x) = ∫₀^∞ (π(x+sz)/π(x))^γ dz` and `J_γ(x) = ∫₀^{|x|} (π(x)/π(x-sz))^γ dz`, `s = sgn(x)`.
pub fn tail_integrals<T: Scalar, M: Target<T> + ?Sized>(
    target: &M,
    x: T,
    gamma: T,
) -> Result<(T, T)> {
    if target.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: target.dim(),
        });
    }
    if x == T::zero() || !(gamma > T::zero()) {
        return Err(Error::InvalidParameter(
            "tail integrals need x != 0 and gamma > 0".into(),
        ));
    }
    let opts = QuadOptions::with_abs_tol(1e-8);
    let s = x.signum();
    let lx = checked_log_density(target, &[x])?;
    let mode = target.mode()[0];
    // z at which the path x ± z crosses the mode, if it does
    let cross = (mode - x) * s;

    let outward = |z: T| (gamma * (target.log_density_1d(x + s * z) - lx)).exp();
    let breaks_i: Vec<T> = if cross > T::zero() { vec![cross] } else { vec![] };
    let i = integrate_to_infinity(outward, T::zero(), x.abs(), T::lit(1e-14), &breaks_i, &opts)?;

    let inward = |z: T| (gamma * (lx - target.log_density_1d(x - s * z))).exp();
    let back = (x - mode) * s;
    let breaks_j: Vec<T> = if back > T::zero() { vec![back] } else { vec![] };
    let j = integrate_with_breaks(inward, T::zero(), x.abs(), &breaks_j, &opts)?;
    Ok((i.value, j.value))
}

/// Largest mixed relative error `|fd - g| / max(|g|, 1)` between the analytic gradient
/// (and, in one dimension, Hessian) and centered finite differences over `points`.
pub fn derivative_consistency<T: Scalar, M: Target<T> + ?Sized>(target: &M, points: &[Vec<T>]) -> T {
    let mut worst = T::zero();
    for x in points {
        let g = target.grad_log_density(x);
        for k in 0..x.len() {
            let h = T::lit(1e-5) * x[k].abs().max(T::one());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] = xp[k] + h;
            xm[k] = xm[k] - h;
            let fd = (target.log_density(&xp) - target.log_density(&xm)) / (h + h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(T::one()));
        }
        if x.len() == 1 {
            if let Some(hess) = target.hess_log_density_1d(x[0]) {
                let h = T::lit(1e-5) * x[0].abs().max(T::one());
                let gp = target.grad_log_density(&[x[0] + h])[0];
                let gm = target.grad_log_density(&[x[0] - h])[0];
                let fd = (gp - gm) / (h + h);
                worst = worst.max((fd - hess).abs() / hess.abs().max(T::one()));
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss() -> BuiltinTarget<f64> {
        BuiltinTarget::standard_gaussian(1)
    }

    #[test]
    fn density_ratio_examples() {
        let g = gauss();
        assert_eq!(density_ratio(&g, &[0.7], &[0.7]).unwrap(), 1.0);
        assert!((density_ratio(&g, &[1.0], &[0.0]).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        let s = BuiltinTarget::smoothed_subexponential(0.5).unwrap();
        let expected = (10f64.powf(0.25) - 1.0).exp();
        assert!((density_ratio(&s, &[0.0], &[3.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn density_ratio_rejects_non_finite() {
        let g = gauss();
        assert!(matches!(
            density_ratio(&g, &[f64::NAN], &[0.0]),
            Err(Error::InvalidPoint(_))
        ));
    }

    #[test]
    fn upsilon_examples() {
        let g = gauss();
        assert!((upsilon(&g, 4.0).unwrap() + 4.0).abs() < 1e-10);
        assert_eq!(upsilon(&g, 0.0).unwrap(), 0.0);
        let a = BuiltinTarget::<f64>::asymmetric_gaussian(1.0, 4.0).unwrap();
        assert!((upsilon(&a, 1.0).unwrap() + 2.0).abs() < 1e-10);
        assert!((upsilon(&a, -2.0).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn upsilon_requires_unimodal() {
        let g2 = BuiltinTarget::<f64>::standard_gaussian(2);
        assert!(matches!(upsilon(&g2, 1.0), Err(Error::NotUnimodal)));
    }

    #[test]
    fn upsilon_preserves_density() {
        let s = BuiltinTarget::<f64>::smoothed_subexponential(0.5).unwrap();
        let a = BuiltinTarget::<f64>::asymmetric_gaussian(1.0, 9.0).unwrap();
        let cases = [(&s, 3.0e4), (&a, 120.0)];
        for (t, top) in cases {
            for x in [0.1, 1.0, 7.5, top] {
                let u = upsilon(t, x).unwrap();
                let rel = (t.log_density_1d(u) - t.log_density_1d(x)).exp() - 1.0;
                assert!(rel.abs() < 1e-9, "x={x} rel={rel}");
            }
        }
    }

    #[test]
    fn tail_integral_gaussian_limits() {
        let g = gauss();
        let (i, _) = tail_integrals(&g, 1e-300, 1.0).unwrap();
        assert!((i - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-7);
        let (_, j) = tail_integrals(&g, 1.0, 1.0).unwrap();
        let oracle = crate::quadrature::simpson(|z: f64| (-z + 0.5 * z * z).exp(), 0.0, 1.0, 2000);
        assert!((j - oracle).abs() < 1e-8);
    }

    #[test]
    fn tail_integral_decreases_in_gamma() {
        let s = BuiltinTarget::smoothed_subexponential(0.5).unwrap();
        let mut prev = f64::INFINITY;
        for gamma in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let (i, _) = tail_integrals(&s, 30.0, gamma).unwrap();
            assert!(i < prev);
            prev = i;
        }
    }

    #[test]
    fn smoothed_subexponential_calibrated() {
        let s = BuiltinTarget::smoothed_subexponential(0.5).unwrap();
        assert_eq!(s.log_density_1d(0.0), 0.0);
        for k in -50..=50 {
            assert!(s.log_density_1d(k as f64 * 3.7) <= 0.0);
        }
        assert_eq!(s.tail_class(), TailClass::Subexponential { p: 0.5 });
    }

    #[test]
    fn spec_parses_and_rejects_unknown_keys() {
        let t: TargetSpec = serde_json::from_str(r#"{"target":"subexp","alpha":0.5}"#).unwrap();
        assert_eq!(t, TargetSpec::Subexp { alpha: 0.5 });
        assert!(serde_json::from_str::<TargetSpec>(r#"{"target":"subexp","alpha":0.5,"beta":1}"#).is_err());
        let g: TargetSpec =
            serde_json::from_str(r#"{"target":"gaussian","mean":[3.0],"cov":[[4.0]]}"#).unwrap();
        let g = g.build().unwrap();
        assert_eq!(g.known_mean().unwrap(), vec![3.0]);
    }
}
