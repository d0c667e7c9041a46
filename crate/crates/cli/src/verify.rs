//! Invariant battery run by `svig verify` and the `verify-suite` pipeline.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use svig_core::bsvie::{
    adjoint_causal_with, adjoint_terminal, linear_bsvie_residual, m_condition_residual, solve_bsvie_picard,
    solve_linear_bsvie, FreeTerm, PicardOptions, TailSum,
};
use svig_core::delay::{benchmark_specs, form_gap};
use svig_core::fbsvie::{feedback_saddle, solve_coupled_fbsvie, CoupledOptions, FixedPointOptions};
use svig_core::forward::{causal_apply, terminal_apply, weighted, MAX_DENSE_STEPS};
use svig_core::fredholm::{assemble_sigma, bsfvie_residual, saddle_from_lambda, solve_sfvie, SfvieMode};
use svig_core::game::{
    assemble_theta, random_process, solve_saddle, stack_controls, stationarity_residual, theta11_form_via_fbsvie,
    theta22_form_via_fbsvie, verify_saddle, SaddleOptions,
};
use svig_core::sample::{random_kernel, random_terminal, sample_coupled, GameSampler};
use svig_core::{
    assemble_causal_operator, inner_product_process, inner_product_terminal, martingale_representation,
    stochastic_integral, AdaptedProcess, ScenarioTree,
};

use crate::config::RunConfig;
use crate::output::Artifacts;
use crate::pipeline::{Outcome, RunOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Property {
    pub name: &'static str,
    pub status: Status,
    pub measured: Option<f64>,
    pub limit: String,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Contents of `verify.json`.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
    pub samples: usize,
    pub mutate_diagonal: bool,
    pub passed: bool,
    pub failed: Vec<&'static str>,
    pub properties: Vec<Property>,
}

fn at_most(name: &'static str, measured: f64, tol: f64) -> Property {
    Property {
        name,
        status: if measured <= tol { Status::Pass } else { Status::Fail },
        measured: Some(measured),
        limit: format!("<= {tol:e}"),
        detail: String::new(),
    }
}

fn skipped(name: &'static str, why: String) -> Property {
    Property {
        name,
        status: Status::Skipped,
        measured: None,
        limit: String::new(),
        detail: why,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn norm(x: &AdaptedProcess) -> f64 {
    inner_product_process(x, x).unwrap_or(f64::NAN).sqrt()
}

struct Battery<'a> {
    cfg: &'a RunConfig,
    tree: ScenarioTree,
    rng: ChaCha8Rng,
}

impl Battery<'_> {
    fn samples(&self) -> usize {
        self.cfg.verify.samples
    }

    fn dense(&self) -> Option<String> {
        (self.tree.steps() > MAX_DENSE_STEPS)
            .then(|| format!("dense check limited to {MAX_DENSE_STEPS} steps"))
    }

    fn adjoint_identity(&mut self) -> Result<Property> {
        let tail = if self.cfg.verify.mutate_diagonal { TailSum::Closed } else { TailSum::Strict };
        let t = self.tree;
        let mut worst = 0.0f64;
        for _ in 0..self.samples() {
            let k1 = random_kernel(&t, &mut self.rng, 1.0, true);
            let k2 = random_kernel(&t, &mut self.rng, 1.0, true);
            let x = random_process(&t, &mut self.rng, 1.0);
            let rho = random_process(&t, &mut self.rng, 1.0);
            let eta = random_terminal(&t, &mut self.rng, -1.0, 1.0, true);
            let kx = causal_apply(&k1, &k2, &x)?.without_terminal();
            let lhs = inner_product_process(&kx, &rho)?;
            let rhs = inner_product_process(&x, &adjoint_causal_with(&k1, &k2, &rho, tail)?)?;
            worst = worst.max((lhs - rhs).abs() / (norm(&x) * norm(&rho)));
            let lhs = inner_product_terminal(&terminal_apply(&k1, &k2, &x)?, &eta)?;
            let rhs = inner_product_process(&x, &adjoint_terminal(&k1, &k2, &eta)?)?;
            let en = inner_product_terminal(&eta, &eta)?.sqrt();
            worst = worst.max((lhs - rhs).abs() / (norm(&x) * en));
        }
        Ok(at_most("adjoint_identity", worst, 1e-11))
    }

    fn nilpotency(&mut self) -> Result<Property> {
        if let Some(why) = self.dense() {
            return Ok(skipped("nilpotency", why));
        }
        let t = self.tree;
        let mut worst = 0.0f64;
        for _ in 0..self.samples() {
            let k1 = random_kernel(&t, &mut self.rng, 1.0, true);
            let k2 = random_kernel(&t, &mut self.rng, 1.0, true);
            let m = assemble_causal_operator(&k1, &k2, &t)?.matrix;
            let mut p = m.clone();
            for _ in 1..t.steps() {
                p = &p * &m;
            }
            worst = worst.max(p.amax());
        }
        let mut p = at_most("nilpotency", worst, 0.0);
        p.limit = "== 0".into();
        Ok(p)
    }

    fn tree_identities(&mut self) -> Result<Vec<Property>> {
        let t = self.tree;
        let n = t.steps();
        let (mut tower, mut ito, mut rep) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..self.samples() {
            let xi = random_terminal(&t, &mut self.rng, -2.0, 2.0, true);
            let j = self.rng.random_range(0..=n);
            let i = self.rng.random_range(0..=j);
            let twice = t.condition(&xi.conditional_expectation(j)?, j, i)?;
            let once = xi.conditional_expectation(i)?;
            for (a, b) in twice.iter().zip(&once) {
                tower = tower.max((a - b).abs());
            }
            let f = random_process(&t, &mut self.rng, 1.0);
            let it = stochastic_integral(&f).terminal().expect("integral carries its terminal value");
            ito = ito.max(rel(inner_product_terminal(&it, &it)?, inner_product_process(&f, &f)?));
            let (mean, theta) = martingale_representation(&xi);
            let back = stochastic_integral(&theta).terminal().expect("integral carries its terminal value");
            for (a, b) in back.values().iter().zip(xi.values()) {
                rep = rep.max((mean + a - b).abs() / xi.max_abs().max(1e-300));
            }
        }
        Ok(vec![
            at_most("tower_property", tower, 1e-14),
            at_most("ito_isometry", ito, 1e-12),
            at_most("martingale_representation", rep, 1e-12),
        ])
    }

    fn bsvie(&mut self) -> Result<Vec<Property>> {
        let t = self.tree;
        let (mut m_sol, mut picard) = (0.0f64, 0.0f64);
        for _ in 0..self.samples() {
            let k1 = random_kernel(&t, &mut self.rng, 1.0, true);
            let k2 = random_kernel(&t, &mut self.rng, 1.0, true);
            let psi = FreeTerm::adapted(&random_process(&t, &mut self.rng, 1.0));
            let sol = solve_linear_bsvie(&psi, &k1, &k2)?;
            m_sol = m_sol.max(linear_bsvie_residual(&psi, &k1, &k2, &sol)).max(m_condition_residual(&sol));
            let (a, b) = (self.rng.random_range(-0.5..=0.5), self.rng.random_range(-0.5..=0.5));
            let g = move |_: usize, _: usize, y: f64, _: f64, zeta: f64| a * y + b * zeta;
            let opts = PicardOptions { tol: 1e-13, max_iter: 400 };
            let (p, _) = solve_bsvie_picard(&psi, &g, opts, None)?;
            let lin = solve_linear_bsvie(
                &psi,
                &svig_core::Kernel::constant(&t, a),
                &svig_core::Kernel::constant(&t, b),
            )?;
            picard = picard.max(p.h2_distance(&lin));
        }
        Ok(vec![at_most("bsvie_m_solution", m_sol, 1e-10), at_most("bsvie_picard", picard, 1e-10)])
    }

    fn theta(&mut self) -> Result<Vec<Property>> {
        if let Some(why) = self.dense() {
            return Ok(vec![
                skipped("theta_routes", why.clone()),
                skipped("theta_self_adjoint", why.clone()),
                skipped("saddle_margins", why),
            ]);
        }
        let t = self.tree;
        let (mut routes, mut asym, mut margin) = (0.0f64, 0.0f64, f64::INFINITY);
        let convex = GameSampler {
            r11: (2.0, 3.0),
            r22: (-3.0, -2.0),
            ..GameSampler::default()
        };
        for _ in 0..self.samples() {
            let spec = convex.sample(&t, &mut self.rng);
            let a = assemble_theta(&spec)?;
            asym = asym.max(a.asymmetry());
            let u1 = random_process(&t, &mut self.rng, 1.0);
            let u2 = random_process(&t, &mut self.rng, 1.0);
            let (w1, w2) = (weighted(&u1), weighted(&u2));
            routes = routes
                .max(rel(w1.dot(&(a.theta11() * &w1)), theta11_form_via_fbsvie(&spec, &u1)?))
                .max(rel(w2.dot(&(a.theta22() * &w2)), theta22_form_via_fbsvie(&spec, &u2)?));
            let expected = &a.theta * stack_controls(&u1, &u2) + &a.theta1_phi;
            let (r1, r2) = stationarity_residual(&spec, &u1, &u2)?;
            routes = routes.max((stack_controls(&r1, &r2) - &expected).norm() / expected.norm().max(1e-300));
            let s = solve_saddle(&a, &SaddleOptions::default())?;
            let seed = self.rng.random();
            margin = margin.min(verify_saddle(&spec, &s.u1, &s.u2, 50, seed)?.min());
        }
        let mut m = at_most("saddle_margins", -margin, 1e-8);
        m.measured = Some(margin);
        m.limit = ">= -1e-8".into();
        Ok(vec![at_most("theta_routes", routes, 1e-9), at_most("theta_self_adjoint", asym, 1e-10), m])
    }

    fn fbsvie(&mut self) -> Result<Vec<Property>> {
        let t = self.tree;
        let mut ratio = 0.0f64;
        let mut iterations = 0;
        let mut residual = 0.0f64;
        for _ in 0..self.samples() {
            let spec = sample_coupled(&t, &mut self.rng, 0.5, 0.1);
            let sol = solve_coupled_fbsvie(&spec, &CoupledOptions::default())?;
            ratio = ratio.max(sol.report.ratio);
            iterations = iterations.max(sol.report.iterations);
            let r = &sol.report.residuals;
            residual = residual.max(r.forward).max(r.backward).max(r.coupling);
        }
        let mut c = at_most("fbsvie_contraction", ratio, 0.9);
        c.limit = "< 0.9 within 30 iterations".into();
        if !(ratio < 0.9 && iterations <= 30) {
            c.status = Status::Fail;
        }
        c.detail = format!("iterations {iterations}");
        let mut out = vec![c, at_most("fbsvie_residual", residual, 1e-10)];

        if let Some(why) = self.dense() {
            out.push(skipped("feedback_route", why.clone()));
            out.push(skipped("sfvie_collapse", why.clone()));
            out.push(skipped("sfvie_operator_route", why));
            return Ok(out);
        }
        let sampler = GameSampler {
            terminal_weight: 0.0,
            ..GameSampler::default()
        };
        let (mut feedback, mut bsfvie, mut cross) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..self.samples() {
            let spec = sampler.sample(&t, &mut self.rng);
            let op = solve_saddle(&assemble_theta(&spec)?, &SaddleOptions::default())?;
            let fb = feedback_saddle(&spec, &FixedPointOptions::default(), 1e-12)?;
            feedback = feedback.max(fb.u1.sub(&op.u1).max_abs()).max(fb.u2.sub(&op.u2).max_abs());

            let det = GameSampler::default().sample_deterministic(&t, &mut self.rng, true, true);
            let sigma = assemble_sigma(&det)?;
            let lam = solve_sfvie(&sigma, SfvieMode::Tree)?;
            bsfvie = bsfvie.max(bsfvie_residual(&sigma, &lam.lambda1, &lam.lambda2));
            let (u1, u2) = saddle_from_lambda(&det, &lam.lambda1, &lam.lambda2)?;
            let op = solve_saddle(&assemble_theta(&det.to_game_spec()?)?, &SaddleOptions::default())?;
            cross = cross.max(u1.sub(&op.u1).max_abs()).max(u2.sub(&op.u2).max_abs());
        }
        out.push(at_most("feedback_route", feedback, 1e-8));
        out.push(at_most("sfvie_collapse", bsfvie, 1e-9));
        out.push(at_most("sfvie_operator_route", cross, 1e-7));
        Ok(out)
    }

    fn delay(&mut self) -> Result<Property> {
        // Runs on its own trees: the benchmark delay is T/4, so both step
        // counts must be multiples of 4 for the delay to land on the grid.
        let m = 4;
        let spec = &benchmark_specs()[0];
        let coarse = ScenarioTree::new(m, spec.horizon)?;
        let fine = ScenarioTree::new(2 * m, spec.horizon)?;
        let step = fine.dt() / (fine.dt() / (spec.delay / 100.0)).ceil();
        let ratio = form_gap(spec, &coarse, step)? / form_gap(spec, &fine, step)?;
        Ok(Property {
            name: "delay_equivalence",
            status: if (1.4..=2.6).contains(&ratio) { Status::Pass } else { Status::Fail },
            measured: Some(ratio),
            limit: "in [1.4, 2.6]".into(),
            detail: format!("refinement {m} -> {} steps", 2 * m),
        })
    }
}

fn guarded(name: &'static str, r: Result<Vec<Property>>) -> Vec<Property> {
    r.unwrap_or_else(|e| {
        vec![Property {
            name,
            status: Status::Fail,
            measured: None,
            limit: String::new(),
            detail: format!("{e:#}"),
        }]
    })
}

pub fn battery(cfg: &RunConfig) -> Result<VerifyReport> {
    let tree = cfg.tree()?;
    let mut b = Battery {
        cfg,
        tree,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed()),
    };
    let mut props = Vec::new();
    props.extend(guarded("adjoint_identity", b.adjoint_identity().map(|p| vec![p])));
    props.extend(guarded("nilpotency", b.nilpotency().map(|p| vec![p])));
    props.extend(guarded("tree_identities", b.tree_identities()));
    props.extend(guarded("bsvie", b.bsvie()));
    props.extend(guarded("theta", b.theta()));
    props.extend(guarded("fbsvie", b.fbsvie()));
    props.extend(guarded("delay_equivalence", b.delay().map(|p| vec![p])));
    let failed: Vec<&'static str> = props.iter().filter(|p| p.status == Status::Fail).map(|p| p.name).collect();
    Ok(VerifyReport {
        steps: tree.steps(),
        horizon: tree.horizon(),
        seed: cfg.seed(),
        samples: cfg.verify.samples,
        mutate_diagonal: cfg.verify.mutate_diagonal,
        passed: failed.is_empty(),
        failed,
        properties: props,
    })
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let report = battery(cfg)?;
    let mut artifacts = Artifacts::default();
    artifacts.add_json("verify.json", &report)?;
    let outcome = if report.passed {
        Outcome::Success
    } else {
        Outcome::PropertyFailure(report.failed.iter().map(|s| s.to_string()).collect())
    };
    Ok(RunOutput { outcome, artifacts })
}
