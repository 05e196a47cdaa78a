//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.
//!
//! The interval with the largest embedded error estimate is bisected until the
//! summed estimate meets `max(abs_tol, rel_tol * |I|)`. Known kinks of the integrand
//! should be passed as breakpoints so that every panel starts out smooth.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of bisection levels below an initial panel.
    pub max_depth: u32,
    /// Hard cap on the number of live panels.
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 0.0,
            max_depth: 60,
            max_intervals: 20_000,
        }
    }
}

impl QuadOptions {
    pub fn with_abs_tol(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature<T> {
    pub value: T,
    pub error: T,
    pub panels: usize,
}

struct Panel<T> {
    a: T,
    b: T,
    value: T,
    error: T,
    depth: u32,
}

impl<T: Scalar> PartialEq for Panel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Panel<T> {}
impl<T: Scalar> PartialOrd for Panel<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Panel<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.as_f64().total_cmp(&other.error.as_f64())
    }
}

/// One Gauss–Kronrod 7/15 panel: returns (kronrod estimate, |kronrod - gauss|).
pub fn gauss_kronrod_15<T: Scalar, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> (T, T) {
    let half = (b - a) * T::lit(0.5);
    let center = (a + b) * T::lit(0.5);
    let fc = f(center);
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = half * T::lit(XGK[j]);
        let pair = f(center - dx) + f(center + dx);
        kronrod = kronrod + pair * T::lit(WGK[j]);
        if j % 2 == 1 {
            gauss = gauss + pair * T::lit(WG[j / 2]);
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<T: Scalar, F: FnMut(T) -> T>(
    f: F,
    a: T,
    b: T,
    opts: &QuadOptions,
) -> Result<Quadrature<T>> {
    integrate_with_breaks(f, a, b, &[], opts)
}

/// Integrates `f` over `[a, b]`, with the initial panels split at every breakpoint
/// strictly inside the interval. Reversed bounds flip the sign.
pub fn integrate_with_breaks<T: Scalar, F: FnMut(T) -> T>(
    mut f: F,
    a: T,
    b: T,
    breaks: &[T],
    opts: &QuadOptions,
) -> Result<Quadrature<T>> {
    if a == b {
        return Ok(Quadrature {
            value: T::zero(),
            error: T::zero(),
            panels: 0,
        });
    }
    if b < a {
        let q = integrate_with_breaks(f, b, a, breaks, opts)?;
        return Ok(Quadrature {
            value: -q.value,
            ..q
        });
    }
    let mut nodes: Vec<T> = breaks
        .iter()
        .copied()
        .filter(|p| p.is_finite() && *p > a && *p < b)
        .collect();
    nodes.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    nodes.dedup();
    nodes.insert(0, a);
    nodes.push(b);

    let mut heap = BinaryHeap::new();
    let mut frozen: Vec<Panel<T>> = Vec::new();
    for w in nodes.windows(2) {
        let (value, error) = gauss_kronrod_15(&mut f, w[0], w[1]);
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value,
            error,
            depth: 0,
        });
    }

    let eps = T::epsilon() * T::lit(64.0);
    loop {
        let (total, err) = heap
            .iter()
            .chain(frozen.iter())
            .fold((T::zero(), T::zero()), |(s, e), p| (s + p.value, e + p.error));
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Quadrature {
                estimate: total.as_f64(),
                error: err.as_f64(),
                reason: "non-finite integrand",
            });
        }
        let target = T::lit(opts.abs_tol).max(T::lit(opts.rel_tol) * total.abs());
        if err <= target {
            return Ok(Quadrature {
                value: total,
                error: err,
                panels: heap.len() + frozen.len(),
            });
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => {
                return Err(Error::Quadrature {
                    estimate: total.as_f64(),
                    error: err.as_f64(),
                    reason: "subdivision limit reached",
                })
            }
        };
        let mid = (worst.a + worst.b) * T::lit(0.5);
        let scale = worst.a.abs().max(worst.b.abs()).max(T::min_positive_value());
        if worst.depth >= opts.max_depth || (worst.b - worst.a) <= eps * scale {
            frozen.push(worst);
            continue;
        }
        if heap.len() + frozen.len() + 2 > opts.max_intervals {
            heap.push(worst);
            return Err(Error::Quadrature {
                estimate: total.as_f64(),
                error: err.as_f64(),
                reason: "panel limit reached",
            });
        }
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = gauss_kronrod_15(&mut f, lo, hi);
            heap.push(Panel {
                a: lo,
                b: hi,
                value,
                error,
                depth: worst.depth + 1,
            });
        }
    }
}

/// Integrates over `[a, ∞)` by truncating where the integrand has decayed below
/// `cutoff`. The integrand must be eventually monotone non-increasing.
pub fn integrate_to_infinity<T: Scalar, F: FnMut(T) -> T>(
    mut f: F,
    a: T,
    initial_width: T,
    cutoff: T,
    breaks: &[T],
    opts: &QuadOptions,
) -> Result<Quadrature<T>> {
    let mut width = initial_width.max(T::one());
    let mut upper = a + width;
    let mut expansions = 0;
    while f(upper).abs() >= cutoff {
        width = width + width;
        upper = a + width;
        expansions += 1;
        if expansions > 200 || !upper.is_finite() {
            return Err(Error::Quadrature {
                estimate: f64::NAN,
                error: f64::INFINITY,
                reason: "integrand does not decay",
            });
        }
    }
    // Geometric breakpoints help the panels resolve slowly decaying tails.
    let mut all: Vec<T> = breaks.to_vec();
    let mut w = initial_width.max(T::one());
    while a + w < upper {
        all.push(a + w);
        w = w + w;
    }
    integrate_with_breaks(f, a, upper, &all, opts)
}

/// Composite Simpson rule on `n` (even) panels. Kept as an independent reference rule.
pub fn simpson<T: Scalar, F: FnMut(T) -> T>(mut f: F, a: T, b: T, n: usize) -> T {
    let n = if n % 2 == 1 { n + 1 } else { n.max(2) };
    let h = (b - a) / T::from_usize(n).unwrap();
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let x = a + h * T::from_usize(k).unwrap();
        let w = if k % 2 == 1 { T::lit(4.0) } else { T::lit(2.0) };
        acc = acc + w * f(x);
    }
    acc * h / T::lit(3.0)
}
