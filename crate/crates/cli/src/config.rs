//! Strict JSON configuration.

use std::path::{Path, PathBuf};

use impulse_periodic::hypotheses::HypothesisOptions;
use impulse_periodic::periodic::{PeriodicSolveConfig, Projector};
use impulse_periodic::rhs_dsl::{parse, NoHistory};
use impulse_periodic::{ImpulseSchedule, ProblemSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A number, or a constant expression such as `"2*pi"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Constant {
    Number(f64),
    Expr(String),
}

impl Constant {
    pub fn value(&self, field: &str) -> Result<f64, CliError> {
        match self {
            Constant::Number(v) => Ok(*v),
            Constant::Expr(src) => {
                let e = parse(src, 0.0).map_err(|e| CliError::Input(format!("{field}: {e}")))?;
                let v = e
                    .eval_rhs(0.0, &NoHistory, &|_| f64::NAN)
                    .map_err(|e| CliError::Input(format!("{field}: {e}")))?;
                if !v.is_finite() {
                    return Err(CliError::Input(format!("{field}: '{src}' is not a finite constant")));
                }
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Impulse {
    pub t: Constant,
    pub b: Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ProblemSection {
    pub B: Constant,
    pub delta: Constant,
    pub r: Constant,
    pub T: Constant,
    #[serde(default)]
    pub impulses: Vec<Impulse>,
    pub rhs: String,
    pub d: Constant,
    pub lipschitz_b: Constant,
    #[serde(default)]
    pub S: Option<Constant>,
}

fn default_n() -> usize {
    2048
}
fn default_schedule() -> Vec<f64> {
    vec![1.0]
}
fn default_tol() -> f64 {
    1e-10
}
fn default_iters() -> usize {
    200
}
fn default_relaxation() -> f64 {
    0.5
}
fn default_depth() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct SolverSection {
    #[serde(default = "default_n")]
    pub N: usize,
    #[serde(default = "default_schedule")]
    pub lambda_schedule: Vec<f64>,
    #[serde(default = "default_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_tol")]
    pub mean_tol: f64,
    #[serde(default = "default_iters")]
    pub max_outer_iters: usize,
    #[serde(default)]
    pub root_bracket: Option<(f64, f64)>,
    #[serde(default)]
    pub projector: Projector,
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
    #[serde(default = "default_depth")]
    pub anderson_depth: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub emit_csv: bool,
    #[serde(default = "yes")]
    pub emit_report: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            emit_csv: true,
            emit_report: true,
        }
    }
}

fn default_ode() -> f64 {
    5e-3
}
fn default_jump() -> f64 {
    1e-12
}
fn default_periodicity() -> f64 {
    1e-9
}

/// Residual tolerances used by `solve` and `verify` to decide the exit code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    #[serde(default = "default_ode")]
    pub ode: f64,
    #[serde(default = "default_jump")]
    pub jump: f64,
    #[serde(default = "default_periodicity")]
    pub periodicity: f64,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&body).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn spec(&self) -> Result<ProblemSpec<f64>, CliError> {
        let p = &self.problem;
        let r = p.r.value("problem.r")?;
        let mut times = Vec::new();
        let mut coeffs = Vec::new();
        for (i, imp) in p.impulses.iter().enumerate() {
            times.push(imp.t.value(&format!("problem.impulses[{i}].t"))?);
            coeffs.push(imp.b.value(&format!("problem.impulses[{i}].b"))?);
        }
        let schedule = ImpulseSchedule::new(p.T.value("problem.T")?, p.delta.value("problem.delta")?, r, times, coeffs);
        let rhs = parse(&p.rhs, r).map_err(|e| CliError::Input(format!("problem.rhs: {e}")))?;
        let s = p.S.as_ref().map(|s| s.value("problem.S")).transpose()?;
        ProblemSpec::new(
            p.B.value("problem.B")?,
            schedule,
            rhs,
            p.d.value("problem.d")?,
            p.lipschitz_b.value("problem.lipschitz_b")?,
            s,
        )
        .map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn solver_config(&self, grid: Option<usize>, force: bool) -> Result<PeriodicSolveConfig<f64>, CliError> {
        let s = &self.solver;
        let cfg = PeriodicSolveConfig {
            n: grid.unwrap_or(s.N),
            lambda_schedule: s.lambda_schedule.clone(),
            max_outer_iters: s.max_outer_iters,
            fp_tol: s.fp_tol,
            mean_tol: s.mean_tol,
            root_bracket: s.root_bracket,
            projector: s.projector,
            relaxation: s.relaxation,
            anderson_depth: s.anderson_depth,
            force,
            hypotheses: HypothesisOptions::default(),
        };
        cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(cfg)
    }
}
