//! Run configuration: one TOML file, kernels inline or as sidecar CSV tables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use svig_core::delay::DelaySpec;
use svig_core::fbsvie::{Beta, FixedPointOptions};
use svig_core::fredholm::{DeterministicGameSpec, SfvieMode};
use svig_core::game::SaddleOptions;
use svig_core::{GameSpec, Kernel, Profile, Profile2, ScenarioTree};

use crate::csvio;

/// Largest tree depth the CLI accepts.
pub const MAX_STEPS: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    OperatorSaddle,
    FbsvieSaddle,
    FredholmSaddle,
    DelayDemo,
    VerifySuite,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::OperatorSaddle => "operator-saddle",
            Pipeline::FbsvieSaddle => "fbsvie-saddle",
            Pipeline::FredholmSaddle => "fredholm-saddle",
            Pipeline::DelayDemo => "delay-demo",
            Pipeline::VerifySuite => "verify-suite",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: Pipeline,
    pub seed: Option<u64>,
    /// Output directory, relative to the config file.
    pub output: Option<PathBuf>,
    pub tree: TreeConfig,
    #[serde(default)]
    pub game: GameConfig,
    pub delay: Option<DelaySpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Directory of the config file; sidecar paths resolve against it.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub steps: usize,
    #[serde(default = "one")]
    pub horizon: f64,
}

fn one() -> f64 {
    1.0
}

fn minus_one() -> Profile {
    Profile::constant(-1.0)
}

fn profile_one() -> Profile {
    Profile::constant(1.0)
}

/// A kernel given inline (number, constant, separable) or as a CSV table.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum KernelSource {
    Csv(CsvRef),
    Inline(Profile2),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CsvRef {
    pub csv: PathBuf,
}

impl Default for KernelSource {
    fn default() -> Self {
        KernelSource::Inline(Profile2::default())
    }
}

impl KernelSource {
    pub fn build(&self, tree: &ScenarioTree, base: &Path) -> Result<Kernel> {
        match self {
            KernelSource::Inline(p) => {
                p.validate()?;
                Ok(Kernel::from_time_fn(tree, |t, s| p.eval(t, s)))
            }
            KernelSource::Csv(r) => {
                let path = base.join(&r.csv);
                csvio::read_kernel(&path, tree).with_context(|| format!("kernel table {}", path.display()))
            }
        }
    }
}

/// Game coefficients. Weights are deterministic functions of time; the
/// forcing is `phi(t) + int_0^t l(t,s) dW(s)`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(default)]
    pub a1: KernelSource,
    #[serde(default)]
    pub a2: KernelSource,
    #[serde(default)]
    pub b1: KernelSource,
    #[serde(default)]
    pub b2: KernelSource,
    #[serde(default)]
    pub c1: KernelSource,
    #[serde(default)]
    pub c2: KernelSource,
    #[serde(default)]
    pub l: KernelSource,
    #[serde(default)]
    pub q: Profile,
    #[serde(default)]
    pub s1: Profile,
    #[serde(default)]
    pub s2: Profile,
    #[serde(default = "profile_one")]
    pub r11: Profile,
    #[serde(default)]
    pub r12: Profile,
    #[serde(default)]
    pub r21: Profile,
    #[serde(default = "minus_one")]
    pub r22: Profile,
    #[serde(default)]
    pub g: f64,
    #[serde(default)]
    pub phi: Profile,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            a1: KernelSource::default(),
            a2: KernelSource::default(),
            b1: KernelSource::default(),
            b2: KernelSource::default(),
            c1: KernelSource::default(),
            c2: KernelSource::default(),
            l: KernelSource::default(),
            q: Profile::default(),
            s1: Profile::default(),
            s2: Profile::default(),
            r11: profile_one(),
            r12: Profile::default(),
            r21: Profile::default(),
            r22: minus_one(),
            g: 0.0,
            phi: Profile::default(),
        }
    }
}

/// Sampled game: the state kernels plus the deterministic-coefficient part.
#[derive(Clone, Debug)]
pub struct BuiltGame {
    pub a1: Kernel,
    pub a2: Kernel,
    pub det: DeterministicGameSpec,
    pub spec: GameSpec,
}

impl GameConfig {
    pub fn build(&self, tree: &ScenarioTree, base: &Path) -> Result<BuiltGame> {
        for (name, p) in [
            ("q", &self.q),
            ("s1", &self.s1),
            ("s2", &self.s2),
            ("r11", &self.r11),
            ("r12", &self.r12),
            ("r21", &self.r21),
            ("r22", &self.r22),
            ("phi", &self.phi),
        ] {
            p.validate().with_context(|| format!("game.{name}"))?;
        }
        if !self.g.is_finite() {
            bail!("game.g must be finite");
        }
        let n = tree.steps();
        let sample = |p: &Profile| (0..n).map(|i| p.eval(tree.time(i))).collect::<Vec<_>>();
        let kernel = |name: &str, k: &KernelSource| k.build(tree, base).with_context(|| format!("game.{name}"));
        let mut det = DeterministicGameSpec::new(tree);
        det.b1 = kernel("b1", &self.b1)?;
        det.b2 = kernel("b2", &self.b2)?;
        det.c1 = kernel("c1", &self.c1)?;
        det.c2 = kernel("c2", &self.c2)?;
        det.l = kernel("l", &self.l)?;
        det.q = sample(&self.q);
        det.s1 = sample(&self.s1);
        det.s2 = sample(&self.s2);
        det.r11 = sample(&self.r11);
        det.r12 = sample(&self.r12);
        det.r21 = sample(&self.r21);
        det.r22 = sample(&self.r22);
        det.g = self.g;
        det.phi1 = (0..=n).map(|i| self.phi.eval(tree.time(i))).collect();
        let a1 = kernel("a1", &self.a1)?;
        let a2 = kernel("a2", &self.a2)?;
        let mut spec = det.to_game_spec()?;
        spec.a1 = a1.clone();
        spec.a2 = a2.clone();
        Ok(BuiltGame { a1, a2, det, spec })
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum BetaConfig {
    Value(f64),
    Word(BetaWord),
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum BetaWord {
    Auto,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "auto")]
    pub beta: BetaConfig,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Seeded perturbations per player for the saddle check; 0 skips it.
    #[serde(default = "default_perturbations")]
    pub perturbations: usize,
    #[serde(default = "default_condition_tol")]
    pub condition_tol: f64,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    #[serde(default)]
    pub sfvie_mode: SfvieMode,
    /// Step of the fine grid for the delay transition function; defaults
    /// to the largest step not above `h / 100` that divides the tree step.
    pub transition_step: Option<f64>,
}

fn auto() -> BetaConfig {
    BetaConfig::Word(BetaWord::Auto)
}
fn default_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    500
}
fn default_perturbations() -> usize {
    100
}
fn default_condition_tol() -> f64 {
    SaddleOptions::default().condition_tol
}
fn default_truncation() -> f64 {
    SaddleOptions::default().truncation
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: auto(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            perturbations: default_perturbations(),
            condition_tol: default_condition_tol(),
            truncation: default_truncation(),
            sfvie_mode: SfvieMode::default(),
            transition_step: None,
        }
    }
}

impl SolverConfig {
    pub fn fixed_point(&self) -> FixedPointOptions {
        FixedPointOptions {
            beta: match self.beta {
                BetaConfig::Value(b) => Beta::Fixed(b),
                BetaConfig::Word(BetaWord::Auto) => Beta::Auto,
            },
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn saddle(&self) -> SaddleOptions {
        SaddleOptions {
            condition_tol: self.condition_tol,
            truncation: self.truncation,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Moves the diagonal term into the backward tail sum; the adjoint
    /// identity must then fail.
    #[serde(default)]
    pub mutate_diagonal: bool,
    /// Random instances per property.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    5
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { mutate_diagonal: false, samples: default_samples() }
    }
}

impl RunConfig {
    /// Parses without validating, so command-line overrides can be applied first.
    pub fn parse_unchecked(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("config schema error: {e}"))?;
        cfg.base = base.to_path_buf();
        Ok(cfg)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let cfg = Self::parse_unchecked(text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_unchecked(&text, &base).with_context(|| format!("in {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::load_unchecked(path)?;
        cfg.validate().with_context(|| format!("in {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tree;
        if t.steps == 0 || t.steps > MAX_STEPS {
            bail!("tree.steps must be in 1..={MAX_STEPS}, got {}", t.steps);
        }
        if !(t.horizon > 0.0 && t.horizon.is_finite()) {
            bail!("tree.horizon must be positive");
        }
        let s = &self.solver;
        if let BetaConfig::Value(b) = s.beta {
            if !(b >= 0.0 && b.is_finite()) {
                bail!("solver.beta must be a non-negative number or \"auto\"");
            }
        }
        if !(s.tol > 0.0) || s.max_iter == 0 {
            bail!("solver.tol must be positive and solver.max_iter at least 1");
        }
        let randomized = self.pipeline == Pipeline::VerifySuite || s.perturbations > 0;
        if randomized && self.seed.is_none() {
            bail!("seed is required for randomized verification (set `seed` or pass --seed)");
        }
        if self.pipeline == Pipeline::DelayDemo {
            let Some(d) = &self.delay else {
                bail!("pipeline delay-demo needs a [delay] section");
            };
            if (d.horizon - t.horizon).abs() > 1e-12 * t.horizon {
                bail!("delay.horizon ({}) must equal tree.horizon ({})", d.horizon, t.horizon);
            }
        }
        if self.verify.samples == 0 {
            bail!("verify.samples must be at least 1");
        }
        Ok(())
    }

    pub fn tree(&self) -> Result<ScenarioTree> {
        Ok(ScenarioTree::new(self.tree.steps, self.tree.horizon)?)
    }

    /// Seed after validation; zero only when no randomized step runs.
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base.join(self.output.clone().unwrap_or_else(|| PathBuf::from("out")))
    }
}
