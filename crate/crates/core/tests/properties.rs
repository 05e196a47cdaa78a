use driftlab::adaptation::{am_update, coerced_update, fast_coerced_update, KestenState};
use driftlab::config::ExperimentConfig;
use driftlab::experiment::{run_experiment, Mode, EXIT_DIVERGED, EXIT_OK, EXIT_VERIFY_FAILED};
use driftlab::kernels::{
    apply_kernel_to_function, kernel_density_1d, mean_acceptance, srwm_step, stationary_acceptance,
    toy_transition_matrix, KernelMethod, KernelParam,
};
use driftlab::lyapunov::{
    concavity_gap, convexity_gap, eval_compound, CompoundMode, CompoundSpec, DriftCoefficients, LyapunovV,
    LyapunovW, Scenario,
};
use driftlab::rng::substream;
use driftlab::simulator::{run_chain, run_replicas, ChainConfig, RecurrenceSet};
use driftlab::targets::derivative_consistency;
use driftlab::verifier::{
    decomposition_terms, log_spaced, verify_decomposition, verify_fixed_theta_drift, GridSpec,
};
use driftlab::{
    tail_integrals, upsilon, AdaptationRule, BuiltinTarget, Matrix, ProposalSpec, StepsizeSchedule, Target,
    TargetSpec,
};
use proptest::prelude::*;
use rand::Rng;

fn catalogue() -> Vec<(&'static str, BuiltinTarget<f64>)> {
    vec![
        ("gauss", BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap()),
        ("gauss-shifted", BuiltinTarget::gaussian_1d(3.0, 4.0).unwrap()),
        ("subexp-0.5", BuiltinTarget::smoothed_subexponential(0.5).unwrap()),
        ("subexp-1.5", BuiltinTarget::smoothed_subexponential(1.5).unwrap()),
        ("asym", BuiltinTarget::asymmetric_gaussian(1.0, 4.0).unwrap()),
    ]
}

fn random_spd(rng: &mut impl Rng, n: usize) -> Matrix {
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let a = Matrix::from_rows(&a).unwrap();
    a.matmul(&a.transpose()).add(&Matrix::scaled_identity(n, 1e-3)).symmetrized()
}

fn coerced_chain(rule: AdaptationRule, schedule: StepsizeSchedule, horizon: u64, seed: u64) -> ChainConfig {
    ChainConfig {
        target: TargetSpec::Gaussian {
            dim: Some(1),
            mean: None,
            cov: None,
        },
        proposal: ProposalSpec::compact_scalar(),
        rule,
        schedule,
        theta0: KernelParam::scalar(0.0),
        x0: None,
        horizon,
        seed,
        stream: 0,
        recurrence: RecurrenceSet { m: 5f64.exp(), r: 3.0 },
        record_stride: 1,
        lyap_v: LyapunovV { eta: 0.5 },
        lyap_w: LyapunovW::ExpAbs,
        compound_exponents: (1.0, 1.0),
        acceptance_window: 100,
    }
}

// --- targets -------------------------------------------------------------

#[test]
fn derivatives_match_finite_differences() {
    for (name, t) in catalogue() {
        // keep away from the kink of the asymmetric target
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|k| -7.05 + 14.1 * k as f64 / 99.0)
            .filter(|x: &f64| x.abs() > 1e-3)
            .map(|x| vec![x])
            .collect();
        assert_eq!(pts.len(), 100);
        let err = derivative_consistency(&t, &pts);
        assert!(err < 1e-5, "{name}: {err}");
    }
    let t2 = BuiltinTarget::gaussian(vec![1.0, -1.0], Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap())
        .unwrap();
    let pts: Vec<Vec<f64>> = (0..100).map(|k| vec![(k as f64 * 0.37).sin() * 4.0, (k as f64 * 0.11).cos() * 3.0]).collect();
    assert!(derivative_consistency(&t2, &pts) < 1e-5);
}

#[test]
fn outward_integral_grows_like_x_to_one_minus_p() {
    let p = 0.5f64;
    let t = BuiltinTarget::smoothed_subexponential(p).unwrap();
    let ratios: Vec<f64> = [1e2, 1e3, 1e4]
        .iter()
        .map(|&x| tail_integrals(&t, x, 1.0).unwrap().0 / x.powf(1.0 - p))
        .collect();
    // -d/dx ℓ ≈ p x^{p-1}, so I(x) ≈ x^{1-p}/p
    for r in &ratios {
        assert!(r.is_finite() && *r > 0.0 && *r < 2.0 / p, "{ratios:?}");
    }
    assert!(ratios[2] <= ratios[0] * 1.05, "{ratios:?}");
}

#[test]
fn level_crossing_point_bounded_by_tail_power() {
    for (p, t) in [
        (0.5, BuiltinTarget::smoothed_subexponential(0.5).unwrap()),
        (0.8, BuiltinTarget::smoothed_subexponential(0.8).unwrap()),
        (1.0, BuiltinTarget::power_tail(1.0).unwrap()),
    ] {
        let xs = log_spaced(5.0, 1e4, 30);
        let ratio = |x: f64| {
            let u = upsilon(&t, x).unwrap();
            u.abs().max(x.abs()) / (-t.log_density_1d(x)).powf(1.0 / p)
        };
        let c = ratio(xs[0]) * 1.01;
        for &x in &xs[1..] {
            assert!(ratio(x) <= c, "p={p} x={x}: {} > {c}", ratio(x));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn level_crossing_preserves_density(x in prop_oneof![-500.0..-0.01f64, 0.01..500.0f64], k in 0usize..5) {
        let (_, t) = &catalogue()[k];
        let u = upsilon(t, x).unwrap();
        let (lx, lu) = (t.log_density_1d(x), t.log_density_1d(u));
        // π(Υ)/π(x) - 1 = exp(ℓ(Υ) - ℓ(x)) - 1
        prop_assert!(((lu - lx).exp() - 1.0).abs() < 1e-9, "x={} u={} {} vs {}", x, u, lx, lu);
    }
}

// --- kernels -------------------------------------------------------------

fn log_concave() -> Vec<BuiltinTarget<f64>> {
    vec![
        BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap(),
        BuiltinTarget::gaussian_1d(3.0, 4.0).unwrap(),
        BuiltinTarget::smoothed_subexponential(1.5).unwrap(),
        BuiltinTarget::asymmetric_gaussian(1.0, 4.0).unwrap(),
    ]
}

#[test]
fn acceptance_rises_near_mode_for_wide_proposals() {
    // 2σ α_σ(x) = √(2π) + x²√(π/2) + o(x²) for the standard Gaussian and σ → ∞
    let t = BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap();
    let s = 50.0;
    let a0 = mean_acceptance(&t, s, 0.0).unwrap();
    let a1 = mean_acceptance(&t, s, 0.1).unwrap();
    let pred = (2.0 * std::f64::consts::PI).sqrt() + 0.01 * (std::f64::consts::PI / 2.0).sqrt();
    assert!(a1 > a0);
    assert!((2.0 * s * a1 - pred).abs() < 1e-3, "{}", 2.0 * s * a1);
}

#[test]
fn acceptance_rises_in_flattening_tail() {
    // ℓ' → 0 for α < 1, so the density looks flat at the scale σ far out
    let t = BuiltinTarget::smoothed_subexponential(0.5).unwrap();
    let a: Vec<f64> = [2.0, 8.0, 50.0, 500.0].iter().map(|&x| mean_acceptance(&t, 1.0, x).unwrap()).collect();
    assert!(a.windows(2).all(|w| w[1] > w[0]), "{a:?}");
}

#[test]
fn kernel_is_reversible_on_a_grid() {
    for (name, t) in catalogue() {
        let grid: Vec<f64> = (0..41).map(|k| -6.0 + 0.3 * k as f64).collect();
        for &sigma in &[0.5, 2.0, 8.0] {
            for &x in &grid {
                for &y in &grid {
                    let lhs = t.log_density_1d(x).exp() * kernel_density_1d(&t, sigma, x, y).unwrap();
                    let rhs = t.log_density_1d(y).exp() * kernel_density_1d(&t, sigma, y, x).unwrap();
                    let scale = lhs.abs().max(rhs.abs());
                    assert!((lhs - rhs).abs() <= 1e-9 * scale, "{name}: σ={sigma} {x} {y}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn toy_uniform_is_invariant(theta in -50.0..50.0f64) {
        let p = toy_transition_matrix(theta);
        for j in 0..2 {
            let v = 0.5 * p[(0, j)] + 0.5 * p[(1, j)];
            prop_assert!((v - 0.5).abs() <= 1e-14);
        }
    }

    /// Once `[x-σ, x+σ]` lies on one side of the mode, concavity of `ℓ` makes every
    /// `ℓ(x+z) - ℓ(x)` non-increasing in `|x|`.
    #[test]
    fn acceptance_decreases_away_from_mode_log_concave(sigma in 0.01..50.0f64, f in 1.0..5.0f64, dx in 0.01..10.0f64, k in 0usize..4) {
        let t = &log_concave()[k];
        let m = t.mode()[0];
        let x = f * sigma;
        let a = mean_acceptance(t, sigma, m + x).unwrap();
        let b = mean_acceptance(t, sigma, m + x + dx).unwrap();
        let c = mean_acceptance(t, sigma, m - x).unwrap();
        let d = mean_acceptance(t, sigma, m - x - dx).unwrap();
        prop_assert!(b <= a + 1e-9, "right: {} > {}", b, a);
        prop_assert!(d <= c + 1e-9, "left: {} > {}", d, c);
    }

    #[test]
    fn srwm_step_is_reproducible(seed in any::<u64>(), theta in -3.0..3.0f64, x in -5.0..5.0f64) {
        let t = BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap();
        let spec = ProposalSpec::compact_scalar();
        let param = KernelParam::scalar(theta);
        let run = || {
            let mut rng = substream(seed, 3);
            let mut out = Vec::new();
            let mut cur = vec![x];
            for _ in 0..20 {
                let s = srwm_step(&t, &spec, &param, &cur, &mut rng).unwrap();
                cur = s.x.clone();
                out.push((s.x[0].to_bits(), s.proposed[0].to_bits(), s.accepted, s.alpha.to_bits()));
            }
            out
        };
        prop_assert_eq!(run(), run());
    }
}

// --- lyapunov ------------------------------------------------------------

#[test]
fn concavity_and_convexity_identities() {
    let mut rng = substream(2024, 0);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..100_000 {
        let x = rng.random_range(-1.0..=1e3);
        let u = 1.0 - rng.random::<f64>(); // (0, 1]
        worst.0 = worst.0.min(concavity_gap(x, u));
        let l = 1.0 - rng.random::<f64>();
        let a = (rng.random_range(-20.0..20.0f64)).exp();
        let b = (rng.random_range(-20.0..20.0f64)).exp();
        // relative to the size of the terms
        worst.1 = worst.1.min(convexity_gap(l, a, b) / a.max(b));
    }
    assert!(worst.0 >= -1e-12, "concavity {}", worst.0);
    assert!(worst.1 >= -1e-12, "convexity {}", worst.1);
}

#[test]
fn coerced_coupling_ratio_bounded_where_v_beta_over_e_large() {
    let t = BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap();
    let coef = DriftCoefficients::new(Scenario::Coerced, 1.0, 1);
    assert!(coef.beta <= coef.iota / 3.0);
    let lyap = LyapunovV::new(0.5).unwrap();
    let eps = 0.5f64;
    let mut rng = substream(77, 0);
    let mut worst = 0.0f64;
    let mut used = 0;
    for _ in 0..20_000 {
        let theta = KernelParam::scalar(rng.random_range(-10.0..10.0));
        let x = rng.random_range(-12.0..12.0);
        let v: f64 = lyap.eval_1d(&t, x);
        let vals = coef.at(&theta).unwrap();
        if v.powf(coef.beta) / vals.e < eps {
            continue;
        }
        used += 1;
        worst = worst.max(coef.coupling_ratio(&theta, v).unwrap());
    }
    // exp(2|θ|)/(a0 V^{ι-β}) ≤ ε^{-2} a0^{-1} / V^{ι-3β} ≤ ε^{-2}/a0
    assert!(used > 1000);
    assert!(worst <= eps.powi(-2) / coef.a0 * (1.0 + 1e-9), "{worst}");
}

proptest! {
    #[test]
    fn compound_is_monotone(v in 1.0..1e6f64, w in 1.0..1e6f64, dv in 0.0..1e3f64, dw in 0.0..1e3f64,
                            uv in 0.01..=1.0f64, uw in 0.01..=1.0f64, g in 1e-4..1.0f64, u_mode in any::<bool>()) {
        let mode = if u_mode { CompoundMode::U } else { CompoundMode::W };
        let spec = CompoundSpec::new(uv, uw, 1.0, mode).unwrap();
        let base = eval_compound(&spec, v, w, g).unwrap();
        prop_assert!(eval_compound(&spec, v + dv, w, g).unwrap() >= base);
        prop_assert!(eval_compound(&spec, v, w + dw, g).unwrap() >= base);
    }
}

// --- adaptation ----------------------------------------------------------

#[test]
fn am_update_keeps_covariance_psd() {
    let mut rng = substream(9, 0);
    let mut worst = f64::INFINITY;
    for k in 0..10_000 {
        let n = [1, 2, 3, 5][k % 4];
        let gamma = random_spd(&mut rng, n);
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let g = rng.random_range(1e-6..1.0 - 1e-9);
        let (_, next) = am_update(&mu, &gamma, &x, g).unwrap();
        assert!(next.is_symmetric(1e-12));
        worst = worst.min(next.min_eigenvalue());
    }
    assert!(worst >= -1e-12, "{worst}");
}

proptest! {
    #[test]
    fn coerced_increments_bounded(theta in -1e3..1e3f64, alpha in 0.0..=1.0f64, g in 0.0..1.0f64, a_star in 0.01..0.49f64) {
        prop_assert!((coerced_update(theta, alpha, g, a_star) - theta).abs() <= g * (1.0 + 1e-12));
        let fast = fast_coerced_update(theta, alpha, g, a_star);
        prop_assert!((fast - theta).abs() <= g * (theta.abs() + 1.0) * (1.0 + 1e-12));
    }

    #[test]
    fn kesten_counter_monotone(hs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 2), 1..200),
                               c0 in 0.01..1.0f64, e in 0.0..1.0f64) {
        let sched = StepsizeSchedule::Kesten { c0, exponent: e };
        let mut k = KestenState::<f64>::new();
        let (mut s, mut g) = (0u64, f64::INFINITY);
        for h in hs {
            k.observe(h);
            prop_assert!(k.s >= s);
            let gn: f64 = sched.gamma_at(0, k.s);
            prop_assert!(gn <= g);
            s = k.s;
            g = gn;
        }
    }
}

#[test]
fn polynomial_steps_decrease_and_sum_diverges() {
    for (c0, c1, a) in [(1.0, 0.0, 1.0), (0.5, 10.0, 0.6), (2.0, 1.0, 0.9)] {
        let s = StepsizeSchedule::Polynomial { c0, c1, a };
        let mut prev = f64::INFINITY;
        let mut sum = 0.0;
        let mut checkpoints = Vec::new();
        for i in 1..=1_000_000u64 {
            let g: f64 = s.gamma_at(i, 0);
            assert!(g < prev, "not strictly decreasing at {i}");
            prev = g;
            sum += g;
            if i.is_power_of_two() {
                checkpoints.push(sum);
            }
        }
        // each doubling of the horizon adds at least the last stepsize times the block length
        for w in checkpoints.windows(2).skip(4) {
            assert!(w[1] - w[0] > 0.5 * c0 * 2f64.ln().min(1.0) * 0.5, "{checkpoints:?}");
        }
    }
}

// --- simulator -----------------------------------------------------------

#[test]
fn recorded_gamma_and_increments_follow_schedule() {
    let schedules = [
        StepsizeSchedule::Polynomial { c0: 0.5, c1: 10.0, a: 0.6 },
        StepsizeSchedule::Constant { gamma0: 0.3 },
    ];
    for sched in schedules {
        for rule in [
            AdaptationRule::Coerced { alpha_star: 0.44 },
            AdaptationRule::FastCoerced { alpha_star: 0.44 },
        ] {
            let traj = run_chain(&coerced_chain(rule, sched, 2000, 5)).unwrap();
            for w in traj.rows.windows(2) {
                let (prev, cur) = (&w[0], &w[1]);
                let g = cur.gamma.unwrap();
                assert_eq!(g, sched.gamma_at::<f64>(cur.i, 0));
                let bound = match rule {
                    AdaptationRule::FastCoerced { .. } => g * (prev.theta[0].abs() + 1.0),
                    _ => g,
                };
                assert!((cur.theta[0] - prev.theta[0]).abs() <= bound * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn am_covariance_psd_along_run() {
    let mut cfg = coerced_chain(
        AdaptationRule::Am,
        StepsizeSchedule::Polynomial { c0: 1.0, c1: 1.0, a: 1.0 },
        5000,
        8,
    );
    cfg.target = TargetSpec::Gaussian {
        dim: None,
        mean: Some(vec![1.0, -2.0, 0.5]),
        cov: Some(vec![vec![2.0, 0.3, 0.0], vec![0.3, 1.0, -0.2], vec![0.0, -0.2, 0.5]]),
    };
    cfg.proposal = ProposalSpec::gaussian_am(0.1);
    cfg.theta0 = KernelParam::am(vec![0.0; 3], Matrix::identity(3));
    cfg.lyap_w = LyapunovW::AmPoly { eps: 0.5 };
    cfg.recurrence = RecurrenceSet { m: 100.0, r: 5.0 };
    let traj = run_chain(&cfg).unwrap();
    assert!(traj.diverged.is_none());
    for row in &traj.rows {
        // θ = (μ, upper triangle of Γ)
        let mut g = Matrix::zeros(3);
        let mut k = 3;
        for i in 0..3 {
            for j in i..3 {
                g[(i, j)] = row.theta[k];
                g[(j, i)] = row.theta[k];
                k += 1;
            }
        }
        assert!(g.min_eigenvalue() >= -1e-10, "step {}", row.i);
    }
}

#[test]
fn empirical_acceptance_matches_quadrature() {
    let t = BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap();
    for (theta, seed) in [(0.0, 1u64), (1.0, 2), (2.5, 3)] {
        // a stepsize this small keeps θ fixed to machine precision
        let mut cfg = coerced_chain(
            AdaptationRule::Coerced { alpha_star: 0.44 },
            StepsizeSchedule::Constant { gamma0: 1e-300 },
            400_000,
            seed,
        );
        cfg.theta0 = KernelParam::scalar(theta);
        let traj = run_chain(&cfg).unwrap();
        let final_theta = traj.rows.last().unwrap().theta[0];
        assert!((final_theta - theta).abs() < 1e-290);
        // thinned indicators after burn-in are close to independent
        let sample: Vec<bool> = traj.rows[1000..].iter().step_by(20).map(|r| r.accepted).collect();
        let n = sample.len() as f64;
        let freq = sample.iter().filter(|&&a| a).count() as f64 / n;
        let exact = stationary_acceptance(&t, final_theta.exp(), -12.0, 12.0).unwrap();
        let se = (exact * (1.0 - exact) / n).sqrt();
        assert!((freq - exact).abs() <= 3.0 * se, "θ={theta}: {freq} vs {exact} (se {se})");
    }
}

#[test]
fn rolling_acceptance_window_spread() {
    // a 1000-step window has sd ≈ 0.016 here, so ±0.03 is roughly a two-sd band
    let cfg = preset("coerced-gaussian");
    let mut chain = cfg.chain_config(cfg.run.as_ref().unwrap()).unwrap();
    chain.acceptance_window = 1000;
    let s = run_replicas(&chain, 400, 15).unwrap();
    let v: Vec<f64> = s.replicas.iter().map(|r| r.tail_acceptance.unwrap()).collect();
    let inside = v.iter().filter(|a| (*a - 0.44).abs() <= 0.03).count();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean - 0.44).abs() < 0.005, "{mean}");
    assert!(inside >= 360, "{inside}/400");
}

// --- verifier ------------------------------------------------------------

#[test]
fn monte_carlo_agrees_with_quadrature() {
    let t = BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap();
    let spec = ProposalSpec::compact_scalar();
    let lyap = LyapunovV::new(0.5).unwrap();
    let f = |y: &[f64]| lyap.eval(&t, y);
    let mut pick = substream(31, 0);
    for k in 0..20 {
        let theta = KernelParam::scalar(pick.random_range(-2.0..2.5));
        let x = [pick.random_range(-5.0..5.0)];
        let mut rng = substream(31, 1 + k);
        let (q, _) = apply_kernel_to_function(&t, &spec, &theta, f, &x, KernelMethod::Quadrature, &mut rng).unwrap();
        let mc = KernelMethod::MonteCarlo {
            n: 100_000,
            antithetic: false,
        };
        let (m, se) = apply_kernel_to_function(&t, &spec, &theta, f, &x, mc, &mut rng).unwrap();
        assert!(se > 0.0);
        assert!((m - q).abs() <= 4.0 * se, "{theta:?} x={x:?}: {m} ± {se} vs {q}");
    }
}

#[test]
fn refined_grid_does_not_flip_fixed_theta_pass() {
    let t = BuiltinTarget::gaussian_1d(0.0, 1.0).unwrap();
    let spec = ProposalSpec::compact_scalar();
    let lyap = LyapunovV::new(0.5).unwrap();
    let coef = DriftCoefficients::new(Scenario::Coerced, 1.0, 1);
    let thetas = [-1.0, 0.0, 1.0];
    let coarse: Vec<f64> = (0..=10).map(|k| -10.0 + 2.0 * k as f64).collect();
    let fine: Vec<f64> = (0..=20).map(|k| -10.0 + k as f64).collect();
    let run = |xs: &[f64]| {
        let grid = GridSpec::scalar(xs, &thetas, &[], KernelMethod::Quadrature, 3.0, 0);
        verify_fixed_theta_drift(&t, &spec, &lyap, &coef, &grid).unwrap()
    };
    let (a, b) = (run(&coarse), run(&fine));
    assert!(a.pass);
    assert!(b.pass, "refined grid failed: worst margin {:?}", b.worst_margin());
    // the coarse grid is a subset, so the refined fit can only be tighter
    assert!(b.fitted_constants["a0"] <= a.fitted_constants["a0"] * (1.0 + 1e-9));
    assert!(b.fitted_constants["b"] >= a.fitted_constants["b"] * (1.0 - 1e-9));
}

#[test]
fn decomposition_signs_on_default_grid() {
    let t = BuiltinTarget::smoothed_subexponential(0.5).unwrap();
    let lyap = LyapunovV::new(0.5).unwrap();
    let sigmas = log_spaced(1e-3, 1e3, 13);
    let xs = log_spaced(50.0, 1e3, 5);
    let r = verify_decomposition(&t, &lyap, &sigmas, &xs).unwrap();
    assert!(r.pass);
    let eps = r.fitted_constants["eps_T_12"];
    assert!(eps > 0.0, "{eps}");
    for &x in &xs {
        for &s in sigmas.iter().filter(|&&s| s >= x) {
            let d = decomposition_terms(&t, 0.5, s, x).unwrap();
            assert!(d.t3 <= 1e-9, "T3({s}, {x}) = {}", d.t3);
            assert!(d.t1 + d.t2 <= -eps * x / s * (1.0 - 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn t3_nonpositive_when_scale_exceeds_x(x in 50.0..1000.0f64, f in 1.0..100.0f64) {
        let t = BuiltinTarget::smoothed_subexponential(0.5).unwrap();
        let d = decomposition_terms(&t, 0.5, x * f, x).unwrap();
        prop_assert!(d.t3 <= 1e-9);
        prop_assert!(d.t1 + d.t2 < 0.0);
    }
}

// --- harness -------------------------------------------------------------

fn preset(name: &str) -> ExperimentConfig {
    let path = format!("{}/../../presets/{name}.json", env!("CARGO_MANIFEST_DIR"));
    ExperimentConfig::load(std::path::Path::new(&path)).unwrap()
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for k in 0..2 {
        let dir = tmp.path().join(k.to_string());
        let mut cfg = preset("coerced-gaussian").with_overrides(None, Some(3), Some(dir.clone())).unwrap();
        cfg.run.as_mut().unwrap().horizon = 5000;
        cfg.verify = None;
        run_experiment(&cfg, Mode::Run).unwrap();
        outs.push(dir_bytes(&dir));
    }
    assert!(outs[0].len() >= 3);
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn exit_code_is_max_severity() {
    let tmp = tempfile::tempdir().unwrap();
    let base = r#"{
        "target": {"target": "gaussian", "dim": 1},
        "proposal": {"family": "compact-uniform", "parametrization": "scalar-log-scale"},
        "adaptation": {"kind": "fast-coerced", "alpha_star": 0.44},
        "schedule": {"kind": "constant", "gamma0": GAMMA},
        "lyapunov": {"scenario": "fast-coerced", "eta": ETA},
        "run": {"horizon": 2000, "replicas": 2, "seed": 3, "theta0": 0.0,
                "recurrence": {"m": 10.0, "r": 3.0}},
        "verify": {"checks": [{"check": "fixed-theta-drift", "x": [0.0, 5.0, 10.0], "theta": [0.0], "c_radius": 2.0}]},
        "output": {"directory": "DIR", "formats": ["json"]}
    }"#;
    // with η = 0, V ≡ 1 has no drift to certify and the fit fails
    let (ok_check, bad_check) = ("0.5", "0.0");
    let cases = [
        ("0.01", ok_check, EXIT_OK),
        ("50.0", ok_check, EXIT_DIVERGED),
        ("0.01", bad_check, EXIT_VERIFY_FAILED),
        ("50.0", bad_check, EXIT_VERIFY_FAILED),
    ];
    for (k, (gamma, check, want)) in cases.into_iter().enumerate() {
        let dir = tmp.path().join(k.to_string());
        let text = base
            .replace("GAMMA", gamma)
            .replace("ETA", check)
            .replace("DIR", dir.to_str().unwrap());
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let out = run_experiment(&cfg, Mode::Run).unwrap();
        assert_eq!(out.exit_code, want, "case {k}: {}", out.table);
    }
}
