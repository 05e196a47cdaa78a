//! JSON experiment configuration.
//!
//! Parsing rejects unknown keys; [`ExperimentConfig::validate`] re-checks the numeric
//! constraints of every module and names the offending field path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptationRule, StepsizeSchedule};
use crate::error::{Error, Result};
use crate::kernels::{KernelMethod, KernelParam, ProposalSpec};
use crate::lyapunov::{default_iota, CompoundMode, CompoundSpec, DriftCoefficients, LyapunovV, LyapunovW, Scenario};
use crate::simulator::{ChainConfig, RecurrenceSet};
use crate::targets::{TailClass, Target, TargetSpec};
use crate::verifier::{log_spaced, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub proposal: Option<ProposalSpec>,
    #[serde(default)]
    pub adaptation: Option<AdaptationRule>,
    #[serde(default)]
    pub schedule: Option<StepsizeSchedule>,
    #[serde(default)]
    pub lyapunov: LyapunovSection,
    #[serde(default)]
    pub run: Option<RunSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Defaults from the adaptation rule and the target's tails.
    #[serde(default)]
    pub scenario: Option<Scenario>,
    /// Defaults to the scenario's `w`.
    #[serde(default)]
    pub w: Option<LyapunovW>,
    #[serde(default)]
    pub iota: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "one")]
    pub upsilon_v: f64,
    #[serde(default = "one")]
    pub upsilon_w: f64,
    #[serde(default = "half")]
    pub eps_poly: f64,
    #[serde(default)]
    pub gamma_max: Option<f64>,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self {
            eta: default_eta(),
            scenario: None,
            w: None,
            iota: None,
            beta: None,
            upsilon_v: 1.0,
            upsilon_w: 1.0,
            eps_poly: 0.5,
            gamma_max: None,
        }
    }
}

fn default_eta() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

/// A scalar parameter or a full [`KernelParam`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaInput {
    Scalar(f64),
    Param(KernelParam<f64>),
}

impl ThetaInput {
    pub fn param(&self) -> KernelParam<f64> {
        match self {
            Self::Scalar(t) => KernelParam::scalar(*t),
            Self::Param(p) => p.clone(),
        }
    }
}

/// A scalar state or a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointInput {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PointInput {
    pub fn vec(&self) -> Vec<f64> {
        match self {
            Self::Scalar(x) => vec![*x],
            Self::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: u64,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    #[serde(default)]
    pub seed: u64,
    pub theta0: ThetaInput,
    #[serde(default)]
    pub x0: Option<PointInput>,
    pub recurrence: RecurrenceSet,
    #[serde(default = "default_stride")]
    pub record_stride: u64,
    #[serde(default = "default_window")]
    pub acceptance_window: u64,
    /// Number of replicas, from index 0, whose trajectories are written as CSV.
    #[serde(default = "default_trajectories")]
    pub trajectories: u64,
}

fn default_replicas() -> u64 {
    1
}

fn default_stride() -> u64 {
    1
}

fn default_window() -> u64 {
    1000
}

fn default_trajectories() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub checks: Vec<CheckSpec>,
}

/// One requested verification. Omitted grids fall back to the defaults listed on
/// each variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Default `θ ∈ {-3, -2.5, …, 3}`.
    Toy {
        #[serde(default)]
        theta: Option<Vec<f64>>,
    },
    FixedThetaDrift {
        x: Vec<PointInput>,
        theta: Vec<ThetaInput>,
        #[serde(default = "quadrature")]
        method: KernelMethod,
        c_radius: f64,
        #[serde(default)]
        seed: u64,
    },
    WDrift {
        x: Vec<PointInput>,
        theta: Vec<ThetaInput>,
        gamma: Vec<f64>,
        #[serde(default = "quadrature")]
        method: KernelMethod,
        c_radius: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Default grid `θ ∈ {±3, ±5, ±8}`, `x ∈ {0, ±3, ±10}`, `γ = 0.05`, `R = 3`,
    /// antithetic Monte Carlo with `N = 10⁴`.
    CompoundDrift {
        #[serde(default)]
        x: Option<Vec<PointInput>>,
        #[serde(default)]
        theta: Option<Vec<ThetaInput>>,
        #[serde(default)]
        gamma: Option<Vec<f64>>,
        #[serde(default)]
        method: Option<KernelMethod>,
        #[serde(default)]
        c_radius: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
    /// Default `σ ∈ {10⁻³, …, 1} ∪ {10, 10², 10³}` and `x ∈ {0, 0.5, 1, 2, 5, 10, 20}`.
    AcceptanceBounds {
        #[serde(default)]
        sigma: Option<Vec<f64>>,
        #[serde(default)]
        x: Option<Vec<f64>>,
    },
    /// Default `σ` log-spaced over `[10⁻³, 10³]` (13 points), `x` log-spaced over
    /// `[50, 10³]` (5 points).
    Decomposition {
        #[serde(default)]
        sigma: Option<Vec<f64>>,
        #[serde(default)]
        x: Option<Vec<f64>>,
    },
}

fn quadrature() -> KernelMethod {
    KernelMethod::Quadrature
}

impl CheckSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Toy { .. } => "toy",
            Self::FixedThetaDrift { .. } => "fixed-theta-drift",
            Self::WDrift { .. } => "w-drift",
            Self::CompoundDrift { .. } => "compound-drift",
            Self::AcceptanceBounds { .. } => "acceptance-bounds",
            Self::Decomposition { .. } => "decomposition",
        }
    }

    /// Whether the check needs the `target` section.
    pub fn needs_target(&self) -> bool {
        !matches!(self, Self::Toy { .. })
    }
}

pub fn default_toy_grid() -> Vec<f64> {
    (-6..=6).map(|k| k as f64 * 0.5).collect()
}

pub fn default_acceptance_sigma() -> Vec<f64> {
    let mut s = log_spaced(1e-3, 1.0, 7);
    s.extend([10.0, 100.0, 1000.0]);
    s
}

pub fn default_acceptance_x() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0]
}

pub fn default_decomposition_sigma() -> Vec<f64> {
    log_spaced(1e-3, 1e3, 13)
}

pub fn default_decomposition_x() -> Vec<f64> {
    log_spaced(50.0, 1e3, 5)
}

/// The coerced compound-drift grid.
pub fn default_compound_grid(seed: u64) -> GridSpec {
    GridSpec::scalar(
        &[0.0, 3.0, -3.0, 10.0, -10.0],
        &[3.0, -3.0, 5.0, -5.0, 8.0, -8.0],
        &[0.05],
        KernelMethod::MonteCarlo {
            n: 10_000,
            antithetic: true,
        },
        3.0,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl ExperimentConfig {
    /// Parses JSON; schema errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn rule(&self) -> Option<AdaptationRule> {
        self.adaptation
    }

    fn is_toy(&self) -> bool {
        self.rule() == Some(AdaptationRule::Toy)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = &self.target {
            t.build().map_err(at("target"))?;
        }
        if let Some(p) = &self.proposal {
            p.validate().map_err(at("proposal"))?;
        }
        if let Some(r) = &self.adaptation {
            r.validate().map_err(at("adaptation"))?;
        }
        if let Some(s) = &self.schedule {
            s.validate().map_err(at("schedule"))?;
        }
        let l = &self.lyapunov;
        LyapunovV::new(l.eta).map_err(at("lyapunov.eta"))?;
        CompoundSpec::new(l.upsilon_v, l.upsilon_w, 1.0, CompoundMode::W).map_err(at("lyapunov.upsilon_v"))?;
        if !(l.eps_poly > 0.0) {
            return Err(Error::config("lyapunov.eps_poly", "must be positive"));
        }
        if let Some(run) = &self.run {
            if run.replicas < 1 {
                return Err(Error::config("run.replicas", "must be at least 1"));
            }
            if run.horizon < 1 {
                return Err(Error::config("run.horizon", "must be at least 1"));
            }
            if run.record_stride < 1 {
                return Err(Error::config("run.record_stride", "must be at least 1"));
            }
            if run.trajectories > run.replicas {
                return Err(Error::config("run.trajectories", "cannot exceed run.replicas"));
            }
            for (field, present) in [
                ("adaptation", self.adaptation.is_some()),
                ("schedule", self.schedule.is_some()),
            ] {
                if !present {
                    return Err(Error::config(field, "required by the run section"));
                }
            }
            if !self.is_toy() {
                if self.target.is_none() {
                    return Err(Error::config("target", "required by the run section"));
                }
                if self.proposal.is_none() {
                    return Err(Error::config("proposal", "required by the run section"));
                }
            }
            self.chain_config(run).map_err(at("run"))?.validate().map_err(at("run"))?;
        }
        if let Some(v) = &self.verify {
            if v.checks.is_empty() {
                return Err(Error::config("verify.checks", "must list at least one check"));
            }
            for (i, c) in v.checks.iter().enumerate() {
                let path = format!("verify.checks[{i}]");
                if c.needs_target() && self.target.is_none() {
                    return Err(Error::config(path, format!("{} needs a target", c.name())));
                }
                self.validate_check(c).map_err(|e| match e {
                    Error::Config { .. } => e,
                    other => Error::config(path.clone(), other.to_string()),
                })?;
            }
        }
        if self.run.is_none() && self.verify.is_none() {
            return Err(Error::config("<root>", "nothing to do: add a run or a verify section"));
        }
        Ok(())
    }

    fn validate_check(&self, c: &CheckSpec) -> Result<()> {
        match c {
            CheckSpec::Toy { .. } => Ok(()),
            CheckSpec::AcceptanceBounds { .. } | CheckSpec::Decomposition { .. } => {
                let t = self.target.as_ref().expect("checked").build()?;
                if !t.unimodal_1d() {
                    return Err(Error::InvalidParameter("needs a one-dimensional unimodal target".into()));
                }
                Ok(())
            }
            CheckSpec::FixedThetaDrift { .. } | CheckSpec::WDrift { .. } | CheckSpec::CompoundDrift { .. } => {
                if self.proposal.is_none() {
                    return Err(Error::InvalidParameter("needs the proposal section".into()));
                }
                if matches!(c, CheckSpec::WDrift { .. } | CheckSpec::CompoundDrift { .. }) && self.adaptation.is_none() {
                    return Err(Error::InvalidParameter("needs the adaptation section".into()));
                }
                let grid = self.grid(c)?.expect("drift check");
                grid.validate(!matches!(c, CheckSpec::FixedThetaDrift { .. }))?;
                self.coefficients_for(c)?.validate()
            }
        }
    }

    /// Chain settings of replica 0; `run_replicas` assigns the streams.
    pub fn chain_config(&self, run: &RunSection) -> Result<ChainConfig> {
        let rule = self.adaptation.ok_or_else(|| Error::config("adaptation", "missing"))?;
        Ok(ChainConfig {
            target: self.target.clone().unwrap_or(TargetSpec::Gaussian {
                dim: Some(1),
                mean: None,
                cov: None,
            }),
            proposal: self.proposal.unwrap_or_else(ProposalSpec::compact_scalar),
            rule,
            schedule: self.schedule.ok_or_else(|| Error::config("schedule", "missing"))?,
            theta0: run.theta0.param(),
            x0: run.x0.as_ref().map(PointInput::vec),
            horizon: run.horizon,
            seed: run.seed,
            stream: 0,
            recurrence: run.recurrence,
            record_stride: run.record_stride,
            lyap_v: LyapunovV::new(self.lyapunov.eta)?,
            lyap_w: self.lyap_w()?,
            compound_exponents: (self.lyapunov.upsilon_v, self.lyapunov.upsilon_w),
            acceptance_window: run.acceptance_window,
        })
    }

    /// Scenario from the config, else from the rule and the target's tails.
    pub fn scenario(&self) -> Option<Scenario> {
        if let Some(s) = self.lyapunov.scenario {
            return Some(s);
        }
        match self.adaptation? {
            AdaptationRule::Coerced { .. } => Some(Scenario::Coerced),
            AdaptationRule::FastCoerced { .. } => Some(Scenario::FastCoerced),
            AdaptationRule::Am => {
                let t = self.target.as_ref()?.build().ok()?;
                match t.tail_class() {
                    TailClass::Subexponential { .. } if t.dim() == 1 => Some(Scenario::AmSubexp1d),
                    _ => Some(Scenario::AmSuperexp),
                }
            }
            AdaptationRule::Toy => None,
        }
    }

    pub fn lyap_w(&self) -> Result<LyapunovW> {
        if let Some(w) = self.lyapunov.w {
            return Ok(w);
        }
        Ok(self
            .scenario()
            .map_or(LyapunovW::ExpAbs, |s| s.w_function(self.lyapunov.eps_poly)))
    }

    /// Coefficients for a drift check: `γmax` is `lyapunov.gamma_max` if set, else the
    /// largest stepsize on the check's grid, else the schedule's largest stepsize.
    pub fn coefficients_for(&self, check: &CheckSpec) -> Result<DriftCoefficients<f64>> {
        let mut c = self.coefficients()?;
        if self.lyapunov.gamma_max.is_none() {
            if let Some(g) = self.grid(check)?.and_then(|g| g.gamma_grid.iter().copied().reduce(f64::max)) {
                c.gamma_max = g;
            }
        }
        Ok(c)
    }

    pub fn coefficients(&self) -> Result<DriftCoefficients<f64>> {
        let scenario = self
            .scenario()
            .ok_or_else(|| Error::config("lyapunov.scenario", "cannot be inferred; set it explicitly"))?;
        let target = self
            .target
            .as_ref()
            .ok_or_else(|| Error::config("target", "missing"))?
            .build()?;
        let iota = self.lyapunov.iota.unwrap_or_else(|| default_iota(target.tail_class()));
        let mut c = DriftCoefficients::new(scenario, iota, target.dim());
        if let Some(b) = self.lyapunov.beta {
            c.beta = b;
        }
        c.eps_poly = self.lyapunov.eps_poly;
        if let Some(g) = self.lyapunov.gamma_max.or_else(|| self.schedule.map(|s| s.gamma_max())) {
            c.gamma_max = g;
        }
        if let Some(AdaptationRule::Coerced { alpha_star } | AdaptationRule::FastCoerced { alpha_star }) = self.adaptation {
            c.alpha_star = alpha_star;
        }
        if let Some(ProposalSpec {
            parametrization: crate::kernels::Parametrization::AmCovariance { eps_am },
            ..
        }) = self.proposal
        {
            c.eps_am = eps_am;
        }
        Ok(c)
    }

    /// Grid of a drift check; `None` for checks that take plain σ/x lists.
    pub fn grid(&self, c: &CheckSpec) -> Result<Option<GridSpec>> {
        let pts = |v: &[PointInput]| v.iter().map(PointInput::vec).collect::<Vec<_>>();
        let ths = |v: &[ThetaInput]| v.iter().map(ThetaInput::param).collect::<Vec<_>>();
        Ok(match c {
            CheckSpec::FixedThetaDrift {
                x,
                theta,
                method,
                c_radius,
                seed,
            } => Some(GridSpec::new(pts(x), ths(theta), Vec::new(), *method, *c_radius, *seed)),
            CheckSpec::WDrift {
                x,
                theta,
                gamma,
                method,
                c_radius,
                seed,
            } => Some(GridSpec::new(pts(x), ths(theta), gamma.clone(), *method, *c_radius, *seed)),
            CheckSpec::CompoundDrift {
                x,
                theta,
                gamma,
                method,
                c_radius,
                seed,
            } => {
                let mut g = default_compound_grid(*seed);
                if let Some(x) = x {
                    g.x_grid = pts(x);
                }
                if let Some(t) = theta {
                    g.theta_grid = ths(t);
                }
                if let Some(gm) = gamma {
                    g.gamma_grid = gm.clone();
                }
                if let Some(r) = c_radius {
                    g.c_radius = *r;
                }
                if let Some(m) = method {
                    g = GridSpec::new(g.x_grid, g.theta_grid, g.gamma_grid, *m, g.c_radius, *seed);
                }
                Some(g)
            }
            _ => None,
        })
    }

    /// Applies command-line overrides, then re-validates.
    pub fn with_overrides(mut self, seed: Option<u64>, replicas: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(run) = &mut self.run {
            if let Some(s) = seed {
                run.seed = s;
            }
            if let Some(n) = replicas {
                run.replicas = n;
            }
        } else if replicas.is_some() {
            return Err(Error::config("run", "--replicas needs a run section"));
        }
        if let Some(dir) = out {
            self.output.directory = dir;
        }
        self.validate()?;
        Ok(self)
    }
}
