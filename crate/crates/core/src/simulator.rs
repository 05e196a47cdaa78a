//! The controlled chain `X_{i+1} ~ P_{θ_i}(X_i, ·)`, `θ_{i+1} = θ_i + γ_{i+1} H(θ_i, X_{i+1})`,
//! trajectory recording and recurrence statistics.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptationRule, KestenState, StepsizeSchedule};
use crate::error::{Error, Result};
use crate::kernels::{srwm_step, toy_flip_prob, toy_step, KernelParam, ProposalSpec};
use crate::lyapunov::{LyapunovV, LyapunovW};
use crate::rng::substream;
use crate::scalar::norm;
use crate::targets::{BuiltinTarget, Target, TargetSpec};

/// Magnitude of any θ component beyond which a run is declared diverged.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// `W_M × C` with `W_M = {w ≤ M}` and `C = B(0, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrenceSet {
    pub m: f64,
    pub r: f64,
}

impl RecurrenceSet {
    pub fn contains(&self, w: f64, x: &[f64]) -> bool {
        w <= self.m && norm(x) <= self.r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainConfig {
    pub target: TargetSpec,
    pub proposal: ProposalSpec,
    pub rule: AdaptationRule,
    pub schedule: StepsizeSchedule,
    pub theta0: KernelParam<f64>,
    /// Defaults to the target mode (state 0 for the toy chain).
    pub x0: Option<Vec<f64>>,
    pub horizon: u64,
    pub seed: u64,
    /// Substream index; replica `k` runs on `substream(seed, k)`.
    pub stream: u64,
    pub recurrence: RecurrenceSet,
    pub record_stride: u64,
    pub lyap_v: LyapunovV<f64>,
    pub lyap_w: LyapunovW,
    /// `(υ_v, υ_w)` of the recorded `W_i`.
    pub compound_exponents: (f64, f64),
    /// Length of the trailing window for the tail acceptance rate.
    pub acceptance_window: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if !(self.recurrence.m >= 1.0) {
            return Err(Error::InvalidParameter("recurrence level M must be at least 1".into()));
        }
        if !(self.recurrence.r > 0.0) {
            return Err(Error::InvalidParameter("recurrence radius R must be positive".into()));
        }
        if self.record_stride < 1 {
            return Err(Error::InvalidParameter("record_stride must be at least 1".into()));
        }
        self.rule.validate()?;
        self.schedule.validate()?;
        if self.rule == AdaptationRule::Am && self.schedule.gamma_max() >= 1.0 {
            return Err(Error::InvalidParameter("AM needs stepsizes below 1".into()));
        }
        if self.rule == AdaptationRule::Toy {
            if !matches!(self.theta0, KernelParam::Scalar { .. }) {
                return Err(Error::Mismatch("toy chain needs a scalar theta".into()));
            }
        } else {
            self.proposal.validate()?;
            self.theta0.validate(&self.proposal)?;
        }
        Ok(())
    }

    pub fn is_toy(&self) -> bool {
        self.rule == AdaptationRule::Toy
    }
}

/// One recorded step. Row 0 is the initial state; its `alpha` and `gamma` are empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub i: u64,
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub accepted: bool,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub v: f64,
    pub w: f64,
    pub big_w: f64,
    pub in_c: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub theta_names: Vec<String>,
    pub dim: usize,
    pub rows: Vec<Row>,
    /// Step at which the divergence guard halted the run.
    pub diverged: Option<u64>,
    pub horizon: u64,
    pub record_stride: u64,
}

struct Outcome {
    diverged: Option<u64>,
}

fn build_target(config: &ChainConfig) -> Result<Option<BuiltinTarget<f64>>> {
    if config.is_toy() {
        Ok(None)
    } else {
        config.target.build().map(Some)
    }
}

/// Runs the recursion, handing every row (stride 1) to `on_row`.
fn simulate(config: &ChainConfig, mut on_row: impl FnMut(&Row)) -> Result<Outcome> {
    config.validate()?;
    let target = build_target(config)?;
    let mut rng = substream(config.seed, config.stream);
    let mut theta = config.theta0.clone();
    let mut x: Vec<f64> = match (&config.x0, &target) {
        (Some(x0), _) => x0.clone(),
        (None, Some(t)) => t.mode(),
        (None, None) => vec![0.0],
    };
    if let Some(t) = &target {
        if x.len() != t.dim() {
            return Err(Error::DimensionMismatch {
                expected: t.dim(),
                got: x.len(),
            });
        }
    } else if !(x[0] == 0.0 || x[0] == 1.0) {
        return Err(Error::InvalidParameter("toy state must be 0 or 1".into()));
    }
    let (uv, uw) = config.compound_exponents;
    let eval_v = |x: &[f64]| match &target {
        Some(t) => config.lyap_v.eval(t, x),
        None => 1.0,
    };
    let make_row = |i: u64, theta: &KernelParam<f64>, x: &[f64], y: &[f64], accepted, alpha, gamma: Option<f64>, gamma_w: f64| -> Result<Row> {
        let v = eval_v(x);
        let w = config.lyap_w.eval(theta)?;
        Ok(Row {
            i,
            theta: theta.components(),
            x: x.to_vec(),
            y: y.to_vec(),
            accepted,
            alpha,
            gamma,
            v,
            w,
            big_w: v.powf(uv) + w.powf(uw) / gamma_w,
            in_c: config.recurrence.contains(w, x),
        })
    };

    let gamma1: f64 = config.schedule.gamma_at(1, 0);
    on_row(&make_row(0, &theta, &x, &x, false, None, None, gamma1)?);

    let mut kesten = KestenState::<f64>::new();
    for i in 1..=config.horizon {
        let (x_new, y, accepted, alpha) = match &target {
            None => {
                let s = x[0] as u8;
                let th = theta.components()[0];
                let next = toy_step(th, s, &mut rng);
                let xn = vec![next as f64];
                (xn.clone(), xn, next != s, toy_flip_prob(th))
            }
            Some(t) => match srwm_step(t, &config.proposal, &theta, &x, &mut rng) {
                Ok(step) => (step.x, step.proposed, step.accepted, step.alpha),
                Err(Error::InvalidPoint(_)) => return Ok(Outcome { diverged: Some(i) }),
                Err(e) => return Err(e),
            },
        };
        let gamma: f64 = config.schedule.gamma_at(i, kesten.s);
        if config.schedule.is_kesten() {
            kesten.observe(config.rule.increment(&theta, &x_new, alpha)?);
        }
        theta = config.rule.apply(&theta, &x_new, alpha, gamma)?;
        x = x_new;
        let row = make_row(i, &theta, &x, &y, accepted, Some(alpha), Some(gamma), gamma)?;
        let blown = !theta.is_finite()
            || theta.max_abs() > DIVERGENCE_BOUND
            || x.iter().any(|v| !v.is_finite());
        on_row(&row);
        if blown {
            return Ok(Outcome { diverged: Some(i) });
        }
    }
    Ok(Outcome { diverged: None })
}

pub fn run_chain(config: &ChainConfig) -> Result<Trajectory> {
    let stride = config.record_stride.max(1);
    let mut rows = Vec::new();
    let mut last: Option<Row> = None;
    let out = simulate(config, |r| {
        if r.i % stride == 0 {
            rows.push(r.clone());
            last = None;
        } else {
            last = Some(r.clone());
        }
    })?;
    // keep the halting row even when it falls between strides
    if let (Some(_), Some(r)) = (out.diverged, last) {
        rows.push(r);
    }
    Ok(Trajectory {
        theta_names: config.theta0.component_names(),
        dim: rows.first().map_or(1, |r| r.x.len()),
        rows,
        diverged: out.diverged,
        horizon: config.horizon,
        record_stride: stride,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceStats {
    /// First entry into `W_M × C` and every later re-entry.
    pub hitting_times: Vec<u64>,
    pub visit_count: u64,
    /// Last step at which θ left `W_M`.
    pub last_exit_time: Option<u64>,
    /// Exits from `W_M` after the first entry into it.
    pub exit_count: u64,
    pub max_abs_theta: f64,
    pub max_w: f64,
    /// The run ended outside `W_M × C`.
    pub censored: bool,
    /// First step with `w(θ_i) ≤ M`, ignoring the state.
    pub first_entry_w: Option<u64>,
    pub steps: u64,
}

/// Streaming computation of [`RecurrenceStats`].
#[derive(Debug, Clone)]
pub struct RecurrenceAccumulator {
    set: RecurrenceSet,
    stats: RecurrenceStats,
    prev_in: bool,
    prev_in_w: bool,
    entered_w: bool,
    last_i: Option<u64>,
}

impl RecurrenceAccumulator {
    pub fn new(set: RecurrenceSet) -> Self {
        Self {
            set,
            stats: RecurrenceStats {
                hitting_times: Vec::new(),
                visit_count: 0,
                last_exit_time: None,
                exit_count: 0,
                max_abs_theta: 0.0,
                max_w: 0.0,
                censored: false,
                first_entry_w: None,
                steps: 0,
            },
            prev_in: false,
            prev_in_w: false,
            entered_w: false,
            last_i: None,
        }
    }

    pub fn push(&mut self, i: u64, theta: &[f64], w: f64, x: &[f64]) {
        let in_w = w <= self.set.m;
        let inside = self.set.contains(w, x);
        let s = &mut self.stats;
        if inside {
            s.visit_count += 1;
            if !self.prev_in {
                s.hitting_times.push(i);
            }
        }
        if in_w && !self.entered_w {
            self.entered_w = true;
            s.first_entry_w = Some(i);
        }
        if !in_w && self.prev_in_w {
            s.last_exit_time = Some(i);
            s.exit_count += 1;
        }
        let m = theta.iter().fold(0.0f64, |a, &v| if v.is_nan() { v } else { a.max(v.abs()) });
        s.max_abs_theta = if m.is_nan() { m } else { s.max_abs_theta.max(m) };
        s.max_w = if w.is_nan() { w } else { s.max_w.max(w) };
        s.steps += 1;
        self.prev_in = inside;
        self.prev_in_w = in_w;
        self.last_i = Some(i);
    }

    pub fn finish(mut self) -> Result<RecurrenceStats> {
        if self.last_i.is_none() {
            return Err(Error::EmptyTrajectory);
        }
        self.stats.censored = !self.prev_in;
        Ok(self.stats)
    }
}

/// Recurrence statistics of a trajectory, re-evaluating membership for `(M, R)`.
pub fn recurrence_stats(traj: &Trajectory, m: f64, r: f64) -> Result<RecurrenceStats> {
    let mut acc = RecurrenceAccumulator::new(RecurrenceSet { m, r });
    for row in &traj.rows {
        acc.push(row.i, &row.theta, row.w, &row.x);
    }
    acc.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaResult {
    pub index: u64,
    pub stats: Option<RecurrenceStats>,
    pub final_theta: Vec<f64>,
    pub final_x: Vec<f64>,
    pub diverged: Option<u64>,
    /// Acceptance frequency over the trailing window.
    pub tail_acceptance: Option<f64>,
    /// `(|μ - μ_π|, |Γ - Γ_π|_F)` for AM runs on targets with known moments.
    pub final_error: Option<(f64, f64)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
}

impl Quantiles {
    /// Linear-interpolation quantiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            q10: q(0.1),
            median: q(0.5),
            q90: q(0.9),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub n_replicas: u64,
    pub base_seed: u64,
    pub replicas: Vec<ReplicaResult>,
    pub first_hitting_time: Option<Quantiles>,
    pub tail_acceptance: Option<Quantiles>,
    pub final_mu_error: Option<Quantiles>,
    pub final_gamma_error: Option<Quantiles>,
    pub n_diverged: u64,
    pub n_failed: u64,
}

fn run_one_replica(config: &ChainConfig, index: u64) -> ReplicaResult {
    let mut acc = RecurrenceAccumulator::new(config.recurrence);
    let window = config.acceptance_window.max(1) as usize;
    let mut recent: VecDeque<bool> = VecDeque::with_capacity(window);
    let mut accepted_in_window = 0usize;
    let mut final_theta = Vec::new();
    let mut final_x = Vec::new();
    let outcome = simulate(config, |r| {
        acc.push(r.i, &r.theta, r.w, &r.x);
        if r.i > 0 {
            if recent.len() == window && recent.pop_front() == Some(true) {
                accepted_in_window -= 1;
            }
            recent.push_back(r.accepted);
            accepted_in_window += r.accepted as usize;
        }
        final_theta.clone_from(&r.theta);
        final_x.clone_from(&r.x);
    });
    match outcome {
        Ok(out) => {
            let final_error = match (&config.rule, config.target.build()) {
                (AdaptationRule::Am, Ok(t)) => match (t.known_mean(), t.known_cov()) {
                    (Some(mean), Some(cov)) => {
                        // final_theta is μ followed by the upper triangle of Γ
                        let n = mean.len();
                        let em = norm(&mean.iter().zip(&final_theta).map(|(a, b)| a - b).collect::<Vec<_>>());
                        let mut sq = 0.0;
                        let mut k = n;
                        for i in 0..n {
                            for j in i..n {
                                let d = final_theta[k] - cov[(i, j)];
                                sq += if i == j { d * d } else { 2.0 * d * d };
                                k += 1;
                            }
                        }
                        Some((em, sq.sqrt()))
                    }
                    _ => None,
                },
                _ => None,
            };
            ReplicaResult {
                index,
                stats: acc.finish().ok(),
                final_theta,
                final_x,
                diverged: out.diverged,
                tail_acceptance: (!recent.is_empty()).then(|| accepted_in_window as f64 / recent.len() as f64),
                final_error,
                error: None,
            }
        }
        Err(e) => ReplicaResult {
            index,
            stats: acc.finish().ok(),
            final_theta,
            final_x,
            diverged: None,
            tail_acceptance: None,
            final_error: None,
            error: Some(e.to_string()),
        },
    }
}

/// Worker pool honouring `DRIFTLAB_THREADS`.
pub fn thread_pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("DRIFTLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            b = b.num_threads(n);
        }
    }
    b.build().expect("thread pool")
}

/// Runs `n` replicas on `substream(base_seed, k)`, `k = 0..n`, concurrently.
pub fn run_replicas(config: &ChainConfig, n: u64, base_seed: u64) -> Result<ReplicaSummary> {
    if n < 1 {
        return Err(Error::InvalidParameter("at least one replica is required".into()));
    }
    config.validate()?;
    let replicas: Vec<ReplicaResult> = thread_pool().install(|| {
        (0..n)
            .into_par_iter()
            .map(|k| {
                let mut c = config.clone();
                c.seed = base_seed;
                c.stream = k;
                run_one_replica(&c, k)
            })
            .collect()
    });
    Ok(summarize(replicas, base_seed))
}

pub fn summarize(mut replicas: Vec<ReplicaResult>, base_seed: u64) -> ReplicaSummary {
    replicas.sort_by_key(|r| r.index);
    let hits: Vec<f64> = replicas
        .iter()
        .filter_map(|r| r.stats.as_ref()?.hitting_times.first().map(|&t| t as f64))
        .collect();
    let acc: Vec<f64> = replicas.iter().filter_map(|r| r.tail_acceptance).collect();
    let em: Vec<f64> = replicas.iter().filter_map(|r| r.final_error.map(|e| e.0)).collect();
    let eg: Vec<f64> = replicas.iter().filter_map(|r| r.final_error.map(|e| e.1)).collect();
    ReplicaSummary {
        n_replicas: replicas.len() as u64,
        base_seed,
        first_hitting_time: Quantiles::of(&hits),
        tail_acceptance: Quantiles::of(&acc),
        final_mu_error: Quantiles::of(&em),
        final_gamma_error: Quantiles::of(&eg),
        n_diverged: replicas.iter().filter(|r| r.diverged.is_some()).count() as u64,
        n_failed: replicas.iter().filter(|r| r.error.is_some()).count() as u64,
        replicas,
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// CSV columns: `i, θ components, x, y, accepted, alpha, gamma_i, V, w, W, in_C`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let axis = |p: &str| -> Vec<String> {
        if traj.dim == 1 {
            vec![p.to_string()]
        } else {
            (1..=traj.dim).map(|k| format!("{p}_{k}")).collect()
        }
    };
    let mut header = vec!["i".to_string()];
    header.extend(traj.theta_names.iter().cloned());
    header.extend(axis("x"));
    header.extend(axis("y"));
    header.extend(["accepted", "alpha", "gamma_i", "V", "w", "W", "in_C"].map(String::from));
    wtr.write_record(&header)?;
    for r in &traj.rows {
        let mut rec = vec![r.i.to_string()];
        rec.extend(r.theta.iter().map(|&v| fmt(v)));
        rec.extend(r.x.iter().map(|&v| fmt(v)));
        rec.extend(r.y.iter().map(|&v| fmt(v)));
        rec.push((r.accepted as u8).to_string());
        rec.push(r.alpha.map(fmt).unwrap_or_default());
        rec.push(r.gamma.map(fmt).unwrap_or_default());
        rec.extend([fmt(r.v), fmt(r.w), fmt(r.big_w)]);
        rec.push((r.in_c as u8).to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    write_trajectory_csv(traj, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ProposalSpec;

    pub(crate) fn coerced_config() -> ChainConfig {
        ChainConfig {
            target: TargetSpec::Gaussian {
                dim: Some(1),
                mean: None,
                cov: None,
            },
            proposal: ProposalSpec::compact_scalar(),
            rule: AdaptationRule::Coerced { alpha_star: 0.44 },
            schedule: StepsizeSchedule::Polynomial { c0: 0.5, c1: 10.0, a: 0.6 },
            theta0: KernelParam::scalar(0.0),
            x0: None,
            horizon: 200,
            seed: 7,
            stream: 0,
            recurrence: RecurrenceSet { m: 5f64.exp(), r: 3.0 },
            record_stride: 1,
            lyap_v: LyapunovV { eta: 0.5 },
            lyap_w: LyapunovW::ExpAbs,
            compound_exponents: (1.0, 1.0),
            acceptance_window: 50,
        }
    }

    #[test]
    fn single_step_records_two_rows() {
        let mut c = coerced_config();
        c.horizon = 1;
        let t = run_chain(&c).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].i, 0);
        assert_eq!(t.rows[0].theta, vec![0.0]);
        assert_eq!(t.rows[1].i, 1);
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let c = coerced_config();
        assert_eq!(run_chain(&c).unwrap(), run_chain(&c).unwrap());
        let mut d = c.clone();
        d.stream = 1;
        assert_ne!(run_chain(&c).unwrap(), run_chain(&d).unwrap());
    }

    #[test]
    fn recorded_gamma_matches_schedule() {
        let c = coerced_config();
        let t = run_chain(&c).unwrap();
        for r in &t.rows[1..] {
            assert_eq!(r.gamma.unwrap(), c.schedule.gamma_at::<f64>(r.i, 0));
        }
    }

    #[test]
    fn stats_inside_and_outside() {
        let mut c = coerced_config();
        c.recurrence = RecurrenceSet { m: 1e300, r: 1e300 };
        let t = run_chain(&c).unwrap();
        let s = recurrence_stats(&t, 1e300, 1e300).unwrap();
        assert_eq!(s.hitting_times, vec![0]);
        assert_eq!(s.visit_count, t.rows.len() as u64);
        assert_eq!(s.last_exit_time, None);
        assert!(!s.censored);
        let s = recurrence_stats(&t, 0.5, 1.0).unwrap();
        assert_eq!(s.visit_count, 0);
        assert!(s.censored);
        let empty = Trajectory { rows: vec![], ..t };
        assert!(matches!(recurrence_stats(&empty, 2.0, 1.0), Err(Error::EmptyTrajectory)));
    }

    #[test]
    fn one_replica_summary_matches_chain() {
        let c = coerced_config();
        let s = run_replicas(&c, 1, c.seed).unwrap();
        let t = run_chain(&c).unwrap();
        let st = recurrence_stats(&t, c.recurrence.m, c.recurrence.r).unwrap();
        assert_eq!(s.replicas[0].stats.as_ref().unwrap(), &st);
        assert_eq!(s.replicas[0].final_theta, t.rows.last().unwrap().theta);
    }

    #[test]
    fn csv_header_for_scalar_run() {
        let mut c = coerced_config();
        c.horizon = 3;
        let t = run_chain(&c).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,theta,x,y,accepted,alpha,gamma_i,V,w,W,in_C\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn zero_replicas_rejected() {
        assert!(run_replicas(&coerced_config(), 0, 1).is_err());
    }
}
