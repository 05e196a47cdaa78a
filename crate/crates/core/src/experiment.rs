//! Runs a configured experiment: replicas, trajectory dumps, verification reports and
//! a summary. Also turns outputs into long-format plot data.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::{
    default_acceptance_sigma, default_acceptance_x, default_decomposition_sigma, default_decomposition_x,
    default_toy_grid, CheckSpec, ExperimentConfig, Format,
};
use crate::error::{Error, Result};
use crate::lyapunov::{CompoundMode, CompoundSpec, LyapunovV};
use crate::simulator::{run_chain, run_replicas, save_trajectory_csv, ReplicaSummary};
use crate::verifier::{
    verify_acceptance_bounds, verify_compound_drift, verify_decomposition, verify_fixed_theta_drift, verify_toy,
    verify_w_drift, DriftReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Simulations, then verifications.
    Run,
    /// Verifications only.
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: String,
    pub pass: bool,
    pub worst_margin: Option<f64>,
    pub fitted_constants: BTreeMap<String, f64>,
    pub file: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub name: Option<String>,
    pub exit_code: i32,
    pub simulation: Option<ReplicaSummary>,
    pub checks: Vec<CheckOutcome>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: ExperimentSummary,
    /// Human-readable table: check, pass/fail, worst margin.
    pub table: String,
}

/// Executes the config. Files land in `output.directory`; the exit code is the largest
/// severity over the tasks (2 for a diverged or failed replica, 3 for a failed check).
pub fn run_experiment(cfg: &ExperimentConfig, mode: Mode) -> Result<Outcome> {
    let dir = &cfg.output.directory;
    std::fs::create_dir_all(dir)?;
    let csv = cfg.output.formats.contains(&Format::Csv);
    let json = cfg.output.formats.contains(&Format::Json);
    let mut files = Vec::new();
    let mut exit = EXIT_OK;

    let mut simulation = None;
    if let (Mode::Run, Some(run)) = (mode, &cfg.run) {
        let chain = cfg.chain_config(run)?;
        let summary = run_replicas(&chain, run.replicas, run.seed)?;
        if summary.n_diverged > 0 || summary.n_failed > 0 {
            exit = exit.max(EXIT_DIVERGED);
        }
        if csv {
            for k in 0..run.trajectories {
                let mut c = chain.clone();
                c.stream = k;
                let traj = run_chain(&c)?;
                let name = format!("trajectory_{k}.csv");
                save_trajectory_csv(&traj, &dir.join(&name))?;
                files.push(name);
            }
            write_replicas_csv(&summary, &dir.join("replicas.csv"))?;
            files.push("replicas.csv".into());
        }
        simulation = Some(summary);
    }

    let mut checks = Vec::new();
    if let Some(v) = &cfg.verify {
        let mut used: BTreeMap<&str, usize> = BTreeMap::new();
        for spec in &v.checks {
            let n = used.entry(spec.name()).or_insert(0);
            let file = if *n == 0 {
                format!("{}.json", spec.name())
            } else {
                format!("{}_{}.json", spec.name(), n)
            };
            *n += 1;
            let outcome = match run_check(cfg, spec) {
                Ok(report) => {
                    if json {
                        report.save_json(&dir.join(&file))?;
                        files.push(file.clone());
                    }
                    CheckOutcome {
                        check: report.check.clone(),
                        pass: report.pass,
                        worst_margin: report.worst_margin(),
                        fitted_constants: report.fitted_constants.clone(),
                        file: json.then_some(file),
                        error: None,
                    }
                }
                Err(e) => CheckOutcome {
                    check: spec.name().into(),
                    pass: false,
                    worst_margin: None,
                    fitted_constants: BTreeMap::new(),
                    file: None,
                    error: Some(e.to_string()),
                },
            };
            if !outcome.pass {
                exit = exit.max(EXIT_VERIFY_FAILED);
            }
            checks.push(outcome);
        }
    }

    if json {
        files.push("summary.json".into());
    }
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        exit_code: exit,
        simulation,
        checks,
        files,
    };
    if json {
        let f = std::fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(f, &summary)?;
    }
    Ok(Outcome {
        exit_code: exit,
        table: summary_table(&summary),
        summary,
    })
}

/// Runs one configured check.
pub fn run_check(cfg: &ExperimentConfig, spec: &CheckSpec) -> Result<DriftReport> {
    let target = || -> Result<_> {
        cfg.target
            .as_ref()
            .ok_or_else(|| Error::config("target", "missing"))?
            .build()
    };
    let proposal = || cfg.proposal.ok_or_else(|| Error::config("proposal", "missing"));
    let rule = || cfg.adaptation.ok_or_else(|| Error::config("adaptation", "missing"));
    let lyap_v = LyapunovV::new(cfg.lyapunov.eta)?;
    match spec {
        CheckSpec::Toy { theta } => verify_toy(theta.as_deref().unwrap_or(&default_toy_grid())),
        CheckSpec::FixedThetaDrift { .. } => {
            let grid = cfg.grid(spec)?.expect("drift grid");
            verify_fixed_theta_drift(&target()?, &proposal()?, &lyap_v, &cfg.coefficients_for(spec)?, &grid)
        }
        CheckSpec::WDrift { .. } => {
            let grid = cfg.grid(spec)?.expect("drift grid");
            verify_w_drift(&target()?, &proposal()?, &rule()?, &lyap_v, &cfg.lyap_w()?, &cfg.coefficients_for(spec)?, &grid)
        }
        CheckSpec::CompoundDrift { .. } => {
            let grid = cfg.grid(spec)?.expect("drift grid");
            let compound = CompoundSpec::new(cfg.lyapunov.upsilon_v, cfg.lyapunov.upsilon_w, 1.0, CompoundMode::W)?;
            verify_compound_drift(
                &target()?,
                &proposal()?,
                &rule()?,
                &lyap_v,
                &cfg.lyap_w()?,
                &compound,
                &cfg.coefficients_for(spec)?,
                &grid,
            )
        }
        CheckSpec::AcceptanceBounds { sigma, x } => verify_acceptance_bounds(
            &target()?,
            sigma.as_deref().unwrap_or(&default_acceptance_sigma()),
            x.as_deref().unwrap_or(&default_acceptance_x()),
        ),
        CheckSpec::Decomposition { sigma, x } => verify_decomposition(
            &target()?,
            &lyap_v,
            sigma.as_deref().unwrap_or(&default_decomposition_sigma()),
            x.as_deref().unwrap_or(&default_decomposition_x()),
        ),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_replicas_csv(summary: &ReplicaSummary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "replica",
        "diverged_at",
        "first_hit",
        "visits",
        "exits",
        "last_exit",
        "max_abs_theta",
        "max_w",
        "tail_acceptance",
        "mu_error",
        "gamma_error",
        "final_theta",
        "error",
    ])?;
    for r in &summary.replicas {
        let s = r.stats.as_ref();
        w.write_record([
            r.index.to_string(),
            r.diverged.map(|d| d.to_string()).unwrap_or_default(),
            s.and_then(|s| s.hitting_times.first()).map(|t| t.to_string()).unwrap_or_default(),
            s.map(|s| s.visit_count.to_string()).unwrap_or_default(),
            s.map(|s| s.exit_count.to_string()).unwrap_or_default(),
            s.and_then(|s| s.last_exit_time).map(|t| t.to_string()).unwrap_or_default(),
            opt(s.map(|s| s.max_abs_theta)),
            opt(s.map(|s| s.max_w)),
            opt(r.tail_acceptance),
            opt(r.final_error.map(|e| e.0)),
            opt(r.final_error.map(|e| e.1)),
            r.final_theta.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" "),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_table(s: &ExperimentSummary) -> String {
    let mut rows: Vec<[String; 3]> = vec![["check".into(), "result".into(), "worst margin".into()]];
    if let Some(sim) = &s.simulation {
        let bad = sim.n_diverged + sim.n_failed;
        rows.push([
            "simulation".into(),
            if bad == 0 {
                "ok".into()
            } else {
                format!("DIVERGED {bad}/{}", sim.n_replicas)
            },
            String::new(),
        ]);
    }
    for c in &s.checks {
        rows.push([
            c.check.clone(),
            match (&c.error, c.pass) {
                (Some(_), _) => "ERROR".into(),
                (None, true) => "PASS".into(),
                (None, false) => "FAIL".into(),
            },
            c.worst_margin.map(|m| format!("{m:.3e}")).unwrap_or_else(|| "-".into()),
        ]);
    }
    let width = |k: usize| rows.iter().map(|r| r[k].chars().count()).max().unwrap_or(0);
    let (w0, w1) = (width(0), width(1));
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(out, "{:<w0$}  {:<w1$}  {}", r[0], r[1], r[2]);
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(w0 + w1 + 4 + width(2)));
        }
    }
    for c in &s.checks {
        if let Some(e) = &c.error {
            let _ = writeln!(out, "{}: {e}", c.check);
        }
    }
    out
}

pub const PLOT_KINDS: [&str; 3] = ["theta-trace", "drift-margin", "acceptance-rolling"];

/// Long-format plot data from a trajectory CSV (`theta-trace`, `acceptance-rolling`)
/// or a report JSON (`drift-margin`).
///
/// `theta-trace` writes `(i, theta)` for a scalar parameter and `(i, component, value)`
/// otherwise. `acceptance-rolling` averages `accepted` over the last `window` recorded
/// steps, so it reflects single steps only for stride-1 trajectories.
pub fn emit_plot_data<W: Write>(input: &Path, kind: &str, window: usize, out: W) -> Result<()> {
    if !PLOT_KINDS.contains(&kind) {
        return Err(Error::UnknownKind {
            kind: kind.into(),
            available: PLOT_KINDS.join(", "),
        });
    }
    let mut wtr = csv::Writer::from_writer(out);
    match kind {
        "drift-margin" => {
            let report: DriftReport = serde_json::from_reader(std::fs::File::open(input)?)?;
            wtr.write_record(["x", "sigma", "margin", "se"])?;
            let mut n = 0;
            for row in &report.rows {
                if let (Some(Value::Number(x)), Some(Value::Number(s))) = (row.point.get("x"), row.point.get("sigma")) {
                    wtr.write_record([x.to_string(), s.to_string(), format!("{}", row.margin), format!("{}", row.se)])?;
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::InvalidParameter(format!(
                    "report {} has no rows with scalar x and sigma",
                    input.display()
                )));
            }
        }
        _ => {
            let mut rdr = csv::Reader::from_path(input)?;
            let header = rdr.headers()?.clone();
            let col = |name: &str| header.iter().position(|h| h == name);
            let i_col = col("i").ok_or_else(|| Error::InvalidParameter("trajectory CSV needs an i column".into()))?;
            if kind == "theta-trace" {
                let first_x = header
                    .iter()
                    .position(|h| h == "x" || h == "x_1")
                    .ok_or_else(|| Error::InvalidParameter("trajectory CSV needs an x column".into()))?;
                let names: Vec<&str> = header.iter().take(first_x).skip(i_col + 1).collect();
                let scalar = names.len() == 1;
                if scalar {
                    wtr.write_record(["i", "theta"])?;
                } else {
                    wtr.write_record(["i", "component", "value"])?;
                }
                for rec in rdr.records() {
                    let rec = rec?;
                    for (k, name) in names.iter().enumerate() {
                        let v = &rec[i_col + 1 + k];
                        if scalar {
                            wtr.write_record([&rec[i_col], v])?;
                        } else {
                            wtr.write_record([&rec[i_col], name, v])?;
                        }
                    }
                }
            } else {
                if window == 0 {
                    return Err(Error::InvalidParameter("window must be positive".into()));
                }
                let a_col = col("accepted")
                    .ok_or_else(|| Error::InvalidParameter("trajectory CSV needs an accepted column".into()))?;
                wtr.write_record(["i", "acceptance"])?;
                let mut recent: VecDeque<bool> = VecDeque::with_capacity(window);
                let mut hits = 0usize;
                for rec in rdr.records() {
                    let rec = rec?;
                    if &rec[i_col] == "0" {
                        continue;
                    }
                    let a = &rec[a_col] == "1";
                    if recent.len() == window && recent.pop_front() == Some(true) {
                        hits -= 1;
                    }
                    recent.push_back(a);
                    hits += a as usize;
                    wtr.write_record([rec[i_col].to_string(), format!("{}", hits as f64 / recent.len() as f64)])?;
                }
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Default output path for plot data: `<input stem>_<kind>.csv` next to the input.
pub fn plot_output_path(input: &Path, kind: &str) -> PathBuf {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    input.with_file_name(format!("{stem}_{kind}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_only_config_writes_one_report() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            r#"{{"verify": {{"checks": [{{"check": "toy"}}]}}, "output": {{"directory": {:?}, "formats": ["json"]}}}}"#,
            dir.path().join("o")
        );
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let out = run_experiment(&cfg, Mode::Verify).unwrap();
        assert_eq!(out.exit_code, EXIT_OK);
        assert!(dir.path().join("o/toy.json").exists());
        assert!(out.table.contains("toy"));
    }

    #[test]
    fn unknown_plot_kind_lists_kinds() {
        let err = emit_plot_data(Path::new("nowhere.csv"), "histogram", 10, Vec::new()).unwrap_err();
        let msg = err.to_string();
        for k in PLOT_KINDS {
            assert!(msg.contains(k));
        }
    }
}
