//! The solve pipelines. Each returns its artifacts and an outcome; nothing
//! touches the disk until the caller writes the artifacts.

use anyhow::{bail, Context, Result};
use serde::Serialize;
use svig_core::delay::{default_transition_step, delay_to_volterra, explicit_saddle, transition_function};
use svig_core::fbsvie::{feedback_saddle, FixedPointReport};
use svig_core::forward::MAX_DENSE_STEPS;
use svig_core::fredholm::{
    assemble_sigma, bsfvie_residual, saddle_from_lambda, solve_sfvie, SfvieMode, WEIGHT_DET_TOL,
};
use svig_core::game::{
    assemble_theta, check_conditions, lambda_for_controls, solve_saddle, verify_saddle, Conditions, Margins,
};
use svig_core::{evaluate_cost, solve_forward_svie, AdaptedProcess, Error, GameSpec, ScenarioTree};

use crate::config::{Pipeline, RunConfig};
use crate::csvio;
use crate::output::Artifacts;
use crate::verify;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The saddle-point conditions fail; a valid result, not an error.
    NoSaddle,
    /// Named properties of the verification battery failed.
    PropertyFailure(Vec<String>),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::NoSaddle => 2,
            Outcome::PropertyFailure(_) => 1,
        }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub outcome: Outcome,
    pub artifacts: Artifacts,
}

#[derive(Clone, Debug, Serialize)]
pub struct MarginSummary {
    pub perturbations: usize,
    pub seed: u64,
    pub min: f64,
    pub minimizer_min: f64,
    pub maximizer_min: f64,
    pub minimizer: Vec<f64>,
    pub maximizer: Vec<f64>,
}

impl MarginSummary {
    fn new(m: Margins, seed: u64) -> Self {
        let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            perturbations: m.len(),
            seed,
            min: m.min(),
            minimizer_min: lo(&m.minimizer),
            maximizer_min: lo(&m.maximizer),
            minimizer: m.minimizer,
            maximizer: m.maximizer,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FredholmSummary {
    pub mode: SfvieMode,
    pub condition: f64,
    pub sfvie_residual: f64,
    pub bsfvie_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DelaySummary {
    pub transition_step: f64,
    pub transition_points: usize,
    pub transition_warning: Option<String>,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub pipeline: &'static str,
    pub status: &'static str,
    pub steps: usize,
    pub horizon: f64,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditions: Option<Conditions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_dimension: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unique: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationarity_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margins: Option<MarginSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<FixedPointReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_inverse_discrepancy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fredholm: Option<FredholmSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelaySummary>,
}

impl Report {
    fn new(cfg: &RunConfig, tree: &ScenarioTree) -> Self {
        Self {
            pipeline: cfg.pipeline.name(),
            status: "saddle",
            steps: tree.steps(),
            horizon: tree.horizon(),
            seed: cfg.seed,
            conditions: None,
            kernel_dimension: None,
            unique: None,
            stationarity_residual: None,
            cost: None,
            margins: None,
            convergence: None,
            naive_inverse_discrepancy: None,
            fredholm: None,
            delay: None,
        }
    }
}

pub fn solve(cfg: &RunConfig) -> Result<RunOutput> {
    let tree = cfg.tree()?;
    let mut report = Report::new(cfg, &tree);
    let mut artifacts = Artifacts::default();
    let outcome = match cfg.pipeline {
        Pipeline::OperatorSaddle => operator_saddle(cfg, &tree, &mut report, &mut artifacts)?,
        Pipeline::FbsvieSaddle => fbsvie_saddle(cfg, &tree, &mut report, &mut artifacts)?,
        Pipeline::FredholmSaddle => fredholm_saddle(cfg, &tree, &mut report, &mut artifacts)?,
        Pipeline::DelayDemo => delay_demo(cfg, &tree, &mut report, &mut artifacts)?,
        Pipeline::VerifySuite => return verify::run(cfg),
    };
    if outcome == Outcome::NoSaddle {
        report.status = "no_saddle";
    }
    artifacts.add_json("report.json", &report)?;
    Ok(RunOutput { outcome, artifacts })
}

/// Sign and range conditions, when the tree is small enough for the dense
/// operator. Returns `false` when they are known to fail.
fn conditions(cfg: &RunConfig, spec: &GameSpec, report: &mut Report) -> Result<bool> {
    if spec.tree().steps() > MAX_DENSE_STEPS {
        return Ok(true);
    }
    let a = assemble_theta(spec)?;
    let c = check_conditions(&a, &cfg.solver.saddle());
    let ok = c.all_hold();
    report.conditions = Some(c);
    Ok(ok)
}

/// State, cost and seeded margins at a candidate saddle point.
fn finish_saddle(
    cfg: &RunConfig,
    spec: &GameSpec,
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
    report: &mut Report,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let fwd = solve_forward_svie(spec, u1, u2)?;
    let x = fwd.x.with_terminal(&fwd.x_terminal);
    report.cost = Some(evaluate_cost(spec, u1, u2)?);
    if cfg.solver.perturbations > 0 {
        let m = verify_saddle(spec, u1, u2, cfg.solver.perturbations, cfg.seed())?;
        report.margins = Some(MarginSummary::new(m, cfg.seed()));
    }
    artifacts.add("saddle_u.csv", csvio::process_csv(&["u1", "u2"], &[u1, u2])?);
    artifacts.add("state_x.csv", csvio::process_csv(&["x"], &[&x])?);
    Ok(())
}

fn add_lambda(artifacts: &mut Artifacts, l1: &AdaptedProcess, l2: &AdaptedProcess) -> Result<()> {
    artifacts.add("lambda.csv", csvio::process_csv(&["lambda1", "lambda2"], &[l1, l2])?);
    Ok(())
}

fn operator_saddle(cfg: &RunConfig, tree: &ScenarioTree, report: &mut Report, artifacts: &mut Artifacts) -> Result<Outcome> {
    let game = cfg.game.build(tree, &cfg.base)?;
    let spec = &game.spec;
    let a = assemble_theta(spec)?;
    let opts = cfg.solver.saddle();
    let c = check_conditions(&a, &opts);
    let holds = c.all_hold();
    report.conditions = Some(c);
    if !holds {
        return Ok(Outcome::NoSaddle);
    }
    let s = match solve_saddle(&a, &opts) {
        Err(Error::NoSaddle { .. }) => return Ok(Outcome::NoSaddle),
        r => r?,
    };
    report.kernel_dimension = Some(s.kernel_dimension);
    report.unique = Some(s.unique);
    report.stationarity_residual = Some(s.stationarity_residual);
    finish_saddle(cfg, spec, &s.u1, &s.u2, report, artifacts)?;
    let (l1, l2) = lambda_for_controls(spec, &s.u1, &s.u2)?;
    add_lambda(artifacts, &l1, &l2)?;
    Ok(Outcome::Success)
}

fn fbsvie_saddle(cfg: &RunConfig, tree: &ScenarioTree, report: &mut Report, artifacts: &mut Artifacts) -> Result<Outcome> {
    let game = cfg.game.build(tree, &cfg.base)?;
    let spec = &game.spec;
    if !conditions(cfg, spec, report)? {
        return Ok(Outcome::NoSaddle);
    }
    let fb = feedback_saddle(spec, &cfg.solver.fixed_point(), WEIGHT_DET_TOL)?;
    report.convergence = Some(fb.report.clone());
    report.naive_inverse_discrepancy = Some(fb.naive_inverse_discrepancy);
    finish_saddle(cfg, spec, &fb.u1, &fb.u2, report, artifacts)?;
    add_lambda(artifacts, &fb.lambda1, &fb.lambda2)?;
    Ok(Outcome::Success)
}

fn fredholm_saddle(cfg: &RunConfig, tree: &ScenarioTree, report: &mut Report, artifacts: &mut Artifacts) -> Result<Outcome> {
    let game = cfg.game.build(tree, &cfg.base)?;
    if !game.a1.is_zero() || !game.a2.is_zero() {
        bail!("fredholm-saddle needs a game without state feedback (game.a1 = game.a2 = 0)");
    }
    if !game.det.u2_is_zero() {
        bail!("fredholm-saddle needs player two out of the state equation (game.b2 = game.c2 = 0)");
    }
    if !conditions(cfg, &game.spec, report)? {
        return Ok(Outcome::NoSaddle);
    }
    let sigma = assemble_sigma(&game.det)?;
    let sol = solve_sfvie(&sigma, cfg.solver.sfvie_mode)?;
    let (u1, u2) = saddle_from_lambda(&game.det, &sol.lambda1, &sol.lambda2)?;
    report.fredholm = Some(FredholmSummary {
        mode: sol.mode,
        condition: sol.condition,
        sfvie_residual: sol.residual,
        bsfvie_residual: bsfvie_residual(&sigma, &sol.lambda1, &sol.lambda2),
    });
    finish_saddle(cfg, &game.spec, &u1, &u2, report, artifacts)?;
    add_lambda(artifacts, &sol.lambda1, &sol.lambda2)?;
    Ok(Outcome::Success)
}

fn delay_demo(cfg: &RunConfig, tree: &ScenarioTree, report: &mut Report, artifacts: &mut Artifacts) -> Result<Outcome> {
    let spec = cfg.delay.as_ref().context("missing [delay] section")?;
    let step = cfg.solver.transition_step.unwrap_or_else(|| default_transition_step(spec, tree));
    let table = transition_function(spec, step)?;
    report.delay = Some(DelaySummary {
        transition_step: table.step(),
        transition_points: table.points(),
        transition_warning: table.warning.clone(),
    });
    let game = delay_to_volterra(spec, tree, &table)?.to_game_spec()?;
    if !conditions(cfg, &game, report)? {
        return Ok(Outcome::NoSaddle);
    }
    let sol = explicit_saddle(spec, tree, &table, &cfg.solver.fixed_point())?;
    report.convergence = Some(sol.report.clone());
    finish_saddle(cfg, &sol.game, &sol.u1, &sol.u2, report, artifacts)?;
    let n = tree.steps();
    let phi = csvio::grid_csv(tree, 0..=n, 0..=n, |i, j| Ok(table.eval(tree.time(i), tree.time(j))?))?;
    artifacts.add("transition.csv", phi);
    Ok(Outcome::Success)
}

/// Sampled kernels of the `[game]` section as CSV tables.
pub fn export_kernels(cfg: &RunConfig) -> Result<Artifacts> {
    let tree = cfg.tree()?;
    let g = cfg.game.build(&tree, &cfg.base)?;
    let mut out = Artifacts::default();
    for (name, k) in [
        ("a1", &g.a1),
        ("a2", &g.a2),
        ("b1", &g.det.b1),
        ("b2", &g.det.b2),
        ("c1", &g.det.c1),
        ("c2", &g.det.c2),
        ("l", &g.det.l),
    ] {
        out.add(&format!("{name}.csv"), csvio::kernel_csv(k)?);
    }
    Ok(out)
}
