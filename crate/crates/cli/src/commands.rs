//! Subcommand implementations.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use impulse_periodic::hypotheses::{hypothesis_report, HypothesisOptions, HypothesisReport};
use impulse_periodic::periodic::{
    solve_at_lambda, solve_periodic, PeriodicError, PeriodicSolution, PeriodicSolveConfig,
    SolveStatus, SweepRow,
};
use impulse_periodic::solver::breakpoint_set;
use impulse_periodic::testkit::regen_fixtures;
use impulse_periodic::transform::{verify_equivalence, Candidate, EquivalenceReport, TransformError};
use impulse_periodic::{Beta64, Problem64, Trajectory};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigFile, ProblemSection, ToleranceSection};
use crate::{CliError, Common};

pub const THREADS_ENV: &str = "IMPULSE_PERIODIC_THREADS";

#[derive(Serialize)]
struct Report<'a> {
    timestamp_unix: u64,
    problem_echo: &'a ProblemSection,
    hypothesis_report: &'a HypothesisReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<&'a Certificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<&'a [SweepRow]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<&'a Verification>,
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct Certificate {
    lambda: f64,
    iterations: usize,
    status: SolveStatus,
    certification: &'static str,
    sup_norm: f64,
    sup_norm_impulsive: f64,
    D: Option<f64>,
    l2_norm: f64,
    l2_bound: Option<f64>,
    within_bounds: Option<bool>,
    kernel_constant: f64,
    kernel_degenerate: bool,
    projected_mean: f64,
    plain_mean: f64,
    residuals: EquivalenceReport,
    residual_history: Vec<f64>,
}

impl Certificate {
    fn new(sol: &PeriodicSolution<f64>) -> Self {
        let b = &sol.bound_certificates;
        Self {
            lambda: sol.lambda,
            iterations: sol.iterations,
            status: sol.status,
            certification: if sol.certified { "CERTIFIED" } else { "UNCERTIFIED" },
            sup_norm: b.sup_norm,
            sup_norm_impulsive: b.sup_norm_impulsive,
            D: b.D,
            l2_norm: b.l2_norm,
            l2_bound: b.l2_bound,
            within_bounds: b.within_bounds,
            kernel_constant: sol.kernel_constant,
            kernel_degenerate: sol.kernel_degenerate,
            projected_mean: sol.projected_mean,
            plain_mean: sol.plain_mean,
            residuals: sol.residuals.clone(),
            residual_history: sol.residual_history.clone(),
        }
    }
}

#[derive(Serialize)]
struct Verification {
    trajectory: PathBuf,
    residuals: EquivalenceReport,
    tolerances: ToleranceSection,
    within_tolerances: bool,
}

struct Session {
    config: ConfigFile,
    spec: Problem64,
    beta: Beta64,
    report: HypothesisReport,
    out: PathBuf,
    quiet: bool,
}

impl Session {
    fn open(c: &Common) -> Result<Self, CliError> {
        let config = ConfigFile::load(&c.config)?;
        let spec = config.spec()?;
        let beta = spec.beta();
        let report = hypothesis_report(&spec, &beta, &HypothesisOptions::default());
        let out = c
            .out
            .clone()
            .or_else(|| config.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&out).map_err(|e| CliError::Input(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self {
            config,
            spec,
            beta,
            report,
            out,
            quiet: c.quiet,
        })
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn write_report(
        &self,
        certificate: Option<&Certificate>,
        sweep: Option<&[SweepRow]>,
        verification: Option<&Verification>,
    ) -> Result<(), CliError> {
        if !self.config.output.emit_report {
            return Ok(());
        }
        let report = Report {
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            problem_echo: &self.config.problem,
            hypothesis_report: &self.report,
            certificate,
            sweep,
            verification,
        };
        write_json(&self.out.join("report.json"), &report)
    }

    fn summary(&self) {
        let r = &self.report;
        self.say(format!(
            "k = {}, K = {}, H3 {} (margin {:e}), H4 {} (margin {:e}), H2 {:?}, H1 {:?}",
            r.k,
            r.K,
            verdict(r.h3.pass),
            r.h3.margin,
            verdict(r.h4.pass),
            r.h4.margin,
            r.h2.status,
            r.h1.status
        ));
        match (r.D, r.xprime_l2_bound) {
            (Some(d), Some(l2)) => self.say(format!("D = {d}, l2 bound = {l2}")),
            _ => self.say(format!(
                "a priori bounds unavailable: {}",
                r.bounds_error.as_deref().unwrap_or("unknown")
            )),
        }
    }

    fn gate(&self, force: bool) -> Result<(), CliError> {
        if self.report.gate_passes() || force {
            return Ok(());
        }
        self.write_report(None, None, None)?;
        Err(CliError::Semantic(
            "hypotheses (H3)/(H4) fail; rerun with --force to solve anyway".into(),
        ))
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn write_trajectory(path: &Path, tr: &Trajectory<f64>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    tr.write_csv(BufWriter::new(file)).map_err(|e| CliError::Input(e.to_string()))
}

fn periodic_error(e: PeriodicError) -> CliError {
    match e {
        PeriodicError::Config(m) => CliError::Input(m),
        other => CliError::Semantic(other.to_string()),
    }
}

fn residual_check(r: &EquivalenceReport, tol: &ToleranceSection) -> bool {
    r.within(tol.ode, tol.jump, tol.periodicity)
}

pub fn check(c: &Common) -> Result<(), CliError> {
    let s = Session::open(c)?;
    s.summary();
    s.write_report(None, None, None)?;
    if s.report.check_passes() {
        s.say("check: PASS");
        Ok(())
    } else {
        Err(CliError::Semantic("check: hypotheses not satisfied".into()))
    }
}

pub fn solve(c: &Common) -> Result<(), CliError> {
    let s = Session::open(c)?;
    s.summary();
    let cfg = s.config.solver_config(c.grid, c.force)?;
    s.gate(c.force)?;
    let sol = solve_periodic(&s.spec, &s.beta, &cfg)
        .map_err(periodic_error)?
        .ok_or_else(|| CliError::Input("solver.lambda_schedule is empty".into()))?;
    if s.config.output.emit_csv {
        write_trajectory(&s.out.join("solution_x.csv"), &sol.x)?;
        write_trajectory(&s.out.join("solution_u.csv"), &sol.u)?;
    }
    let cert = Certificate::new(&sol);
    write_json(&s.out.join("certificate.json"), &cert)?;
    s.write_report(Some(&cert), None, None)?;
    s.say(format!(
        "{:?} after {} iterations: sup|u| = {:e}, kernel constant = {}, {}",
        sol.status, sol.iterations, cert.sup_norm, sol.kernel_constant, cert.certification
    ));
    let r = &sol.residuals;
    s.say(format!(
        "residuals: ode {:e}, jump {:e}, periodicity {:e}",
        r.max_ode_residual, r.max_jump_residual, r.periodicity_residual
    ));
    if sol.status != SolveStatus::Converged {
        let last = sol.residual_history.last().copied().unwrap_or(f64::NAN);
        return Err(CliError::NotConverged(format!(
            "not converged after {} iterations (last residual {last:e})",
            sol.iterations
        )));
    }
    if !residual_check(r, &s.config.tolerances) {
        return Err(CliError::Semantic("residuals exceed tolerances".into()));
    }
    if cert.within_bounds == Some(false) {
        return Err(CliError::Semantic("a priori bound violated".into()));
    }
    Ok(())
}

pub fn verify(c: &Common, trajectory: &Path) -> Result<(), CliError> {
    let s = Session::open(c)?;
    let file = File::open(trajectory)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", trajectory.display())))?;
    let mut marks = breakpoint_set(&s.spec, s.beta.breakpoints());
    marks.extend(s.beta.breakpoints().iter().copied());
    let tr = Trajectory::read_csv(file, &marks)
        .map_err(|e| CliError::Input(format!("{}: {e}", trajectory.display())))?;
    let residuals = verify_equivalence(&s.spec, &s.beta, Candidate::Impulsive(&tr.x)).map_err(|e| match e {
        TransformError::MissingBreakpoint(_) | TransformError::WrongDomain { .. } => {
            CliError::Input(format!("{}: {e}", trajectory.display()))
        }
        other => CliError::Semantic(other.to_string()),
    })?;
    let tolerances = s.config.tolerances.clone();
    let within = residual_check(&residuals, &tolerances);
    s.say(format!(
        "residuals: ode {:e} at t = {}, jump {:e}, periodicity {:e} over {} nodes",
        residuals.max_ode_residual,
        residuals.max_ode_residual_at,
        residuals.max_jump_residual,
        residuals.periodicity_residual,
        residuals.checked_nodes
    ));
    let v = Verification {
        trajectory: trajectory.to_path_buf(),
        residuals,
        tolerances,
        within_tolerances: within,
    };
    s.write_report(None, None, Some(&v))?;
    if within {
        s.say("verify: PASS");
        Ok(())
    } else {
        Err(CliError::Semantic("verify: residuals exceed tolerances".into()))
    }
}

fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Input(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
    }
}

fn run_sweep(s: &Session, cfg: &PeriodicSolveConfig<f64>) -> Result<Vec<SweepRow>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap()?.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Input(e.to_string()))?;
    pool.install(|| {
        cfg.lambda_schedule
            .par_iter()
            .map(|&l| solve_at_lambda(&s.spec, &s.beta, cfg, l).map(|sol| SweepRow::from_solution(&sol)))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(periodic_error)
}

pub fn sweep(c: &Common) -> Result<(), CliError> {
    let s = Session::open(c)?;
    s.summary();
    let cfg = s.config.solver_config(c.grid, c.force)?;
    s.gate(c.force)?;
    let rows = run_sweep(&s, &cfg)?;
    if s.config.output.emit_csv {
        let path = s.out.join("sweep.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        let io = |e: csv::Error| CliError::Input(e.to_string());
        w.write_record(["lambda", "sup_norm", "l2_norm", "converged"]).map_err(io)?;
        for r in &rows {
            w.write_record([
                r.lambda.to_string(),
                r.sup_norm.to_string(),
                r.l2_norm.to_string(),
                r.converged.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Input(e.to_string()))?;
    }
    s.write_report(None, Some(&rows), None)?;
    for r in &rows {
        s.say(format!(
            "lambda {:<6} sup {:<24e} l2 {:<24e} converged {} bounds {:?}",
            r.lambda, r.sup_norm, r.l2_norm, r.converged, r.within_bounds
        ));
    }
    let violated: Vec<f64> = rows.iter().filter(|r| r.within_bounds == Some(false)).map(|r| r.lambda).collect();
    if !violated.is_empty() {
        return Err(CliError::Semantic(format!("a priori bound violated at lambda {violated:?}")));
    }
    let stalled: Vec<f64> = rows.iter().filter(|r| !r.converged).map(|r| r.lambda).collect();
    if !stalled.is_empty() {
        return Err(CliError::NotConverged(format!("not converged at lambda {stalled:?}")));
    }
    Ok(())
}

pub fn regen(out: &Path) -> Result<(), CliError> {
    let written = regen_fixtures(out).map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.display())))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
