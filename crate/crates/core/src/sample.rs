//! Seeded random coefficient generators for property checks and benchmarks.

use rand::Rng;

use crate::fbsvie::CoupledSpec;
use crate::forward::GameSpec;
use crate::fredholm::DeterministicGameSpec;
use crate::kernel::Kernel;
use crate::tree::{AdaptedProcess, ScenarioTree, TerminalVariable};

/// Kernel with entries uniform in `[-scale, scale]`; node-dependent when `random`.
pub fn random_kernel(tree: &ScenarioTree, rng: &mut impl Rng, scale: f64, random: bool) -> Kernel {
    let n = tree.steps();
    if random {
        let mut cells = Vec::with_capacity((n + 1) * n);
        for _ in 0..=n {
            for j in 0..n {
                cells.push(
                    (0..tree.level_size(j))
                        .map(|_| rng.random_range(-scale..=scale))
                        .collect::<Vec<f64>>(),
                );
            }
        }
        Kernel::from_node_fn(tree, |i, j, k| cells[i * n + j][k])
    } else {
        let cells: Vec<f64> = (0..(n + 1) * n)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Kernel::from_index_fn(tree, |i, j| cells[i * n + j])
    }
}

/// Process with values uniform in `[lo, hi]`; deterministic in time when not `random`.
pub fn random_weight(tree: &ScenarioTree, rng: &mut impl Rng, lo: f64, hi: f64, random: bool) -> AdaptedProcess {
    let mut p = AdaptedProcess::zeros(tree);
    for i in 0..tree.steps() {
        if random {
            for v in p.level_mut(i) {
                *v = rng.random_range(lo..=hi);
            }
        } else {
            let v = rng.random_range(lo..=hi);
            p.level_mut(i).fill(v);
        }
    }
    p
}

pub fn random_terminal(tree: &ScenarioTree, rng: &mut impl Rng, lo: f64, hi: f64, random: bool) -> TerminalVariable {
    if random {
        TerminalVariable::from_values(tree, (0..tree.leaves()).map(|_| rng.random_range(lo..=hi)).collect())
            .expect("finite values")
    } else {
        TerminalVariable::constant(tree, rng.random_range(lo..=hi))
    }
}

/// Shape of a sampled game.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameSampler {
    pub kernel_scale: f64,
    /// Node-dependent kernels and weights.
    pub random_coefficients: bool,
    pub state_weight: f64,
    pub cross_weight: f64,
    /// `R11` is drawn from `[r11.0, r11.1]`, `R22` from `[r22.0, r22.1]`.
    pub r11: (f64, f64),
    pub r22: (f64, f64),
    pub control_cross: f64,
    pub terminal_weight: f64,
    pub forcing: f64,
    /// Zero the state kernels `A1`, `A2`.
    pub no_state_feedback: bool,
}

impl Default for GameSampler {
    fn default() -> Self {
        Self {
            kernel_scale: 0.5,
            random_coefficients: true,
            state_weight: 0.5,
            cross_weight: 0.5,
            r11: (2.0, 3.0),
            r22: (-3.0, -2.0),
            control_cross: 0.3,
            terminal_weight: 0.5,
            forcing: 1.0,
            no_state_feedback: false,
        }
    }
}

impl GameSampler {
    pub fn sample(&self, tree: &ScenarioTree, rng: &mut impl Rng) -> GameSpec {
        let rc = self.random_coefficients;
        let ks = self.kernel_scale;
        let k = |rng: &mut _| random_kernel(tree, rng, ks, rc);
        let (a1, a2) = if self.no_state_feedback {
            (Kernel::zero(tree), Kernel::zero(tree))
        } else {
            (k(rng), k(rng))
        };
        let (b1, b2, c1, c2) = (k(rng), k(rng), k(rng), k(rng));
        let w = |rng: &mut _, lo: f64, hi: f64| random_weight(tree, rng, lo, hi, rc);
        let q = w(rng, -self.state_weight, self.state_weight);
        let s1 = w(rng, -self.cross_weight, self.cross_weight);
        let s2 = w(rng, -self.cross_weight, self.cross_weight);
        let r11 = w(rng, self.r11.0, self.r11.1);
        let r22 = w(rng, self.r22.0, self.r22.1);
        let r12 = w(rng, -self.control_cross, self.control_cross);
        let r21 = w(rng, -self.control_cross, self.control_cross);
        let g = random_terminal(tree, rng, -self.terminal_weight, self.terminal_weight, rc);
        let mut phi = AdaptedProcess::zeros_with_terminal(tree);
        for i in 0..=tree.steps() {
            for v in phi.level_mut(i) {
                *v = rng.random_range(-self.forcing..=self.forcing);
            }
        }
        GameSpec {
            a1,
            a2,
            b1,
            b2,
            c1,
            c2,
            q,
            s1,
            s2,
            r11,
            r12,
            r21,
            r22,
            g,
            phi,
        }
    }
}

impl GameSampler {
    /// Deterministic game with `A = 0`; `U2 = 0` when `no_noise_control`,
    /// and a random noise kernel `l` in the forcing when `noisy_forcing`.
    pub fn sample_deterministic(
        &self,
        tree: &ScenarioTree,
        rng: &mut impl Rng,
        no_noise_control: bool,
        noisy_forcing: bool,
    ) -> DeterministicGameSpec {
        let n = tree.steps();
        let ks = self.kernel_scale;
        let k = |rng: &mut _| random_kernel(tree, rng, ks, false);
        let b1 = k(rng);
        let c1 = k(rng);
        let (b2, c2) = if no_noise_control {
            (Kernel::zero(tree), Kernel::zero(tree))
        } else {
            (k(rng), k(rng))
        };
        let l = if noisy_forcing { k(rng) } else { Kernel::zero(tree) };
        let v = |rng: &mut _, lo: f64, hi: f64, len: usize| -> Vec<f64> {
            (0..len).map(|_| Rng::random_range(rng, lo..=hi)).collect()
        };
        DeterministicGameSpec {
            tree: *tree,
            b1,
            b2,
            c1,
            c2,
            q: v(rng, -self.state_weight, self.state_weight, n),
            s1: v(rng, -self.cross_weight, self.cross_weight, n),
            s2: v(rng, -self.cross_weight, self.cross_weight, n),
            r11: v(rng, self.r11.0, self.r11.1, n),
            r12: v(rng, -self.control_cross, self.control_cross, n),
            r21: v(rng, -self.control_cross, self.control_cross, n),
            r22: v(rng, self.r22.0, self.r22.1, n),
            g: rng.random_range(-self.terminal_weight..=self.terminal_weight),
            phi1: v(rng, -self.forcing, self.forcing, n + 1),
            l,
        }
    }
}

/// Coupled forward-backward system with node-dependent kernels. The state
/// and backward kernels are drawn at `scale`; everything that couples the
/// equations (`B`, `D`, `phi1`, `phi2`) at `coupling`.
pub fn sample_coupled(tree: &ScenarioTree, rng: &mut impl Rng, scale: f64, coupling: f64) -> CoupledSpec {
    let n = tree.steps();
    let mut spec = CoupledSpec::zero(tree);
    spec.a1 = random_kernel(tree, rng, scale, true);
    spec.a2 = random_kernel(tree, rng, scale, true);
    spec.b1 = random_kernel(tree, rng, coupling, true);
    spec.b2 = random_kernel(tree, rng, coupling, true);
    spec.c1 = random_kernel(tree, rng, scale, true);
    spec.c2 = random_kernel(tree, rng, scale, true);
    spec.d1 = random_kernel(tree, rng, coupling, true);
    spec.d2 = random_kernel(tree, rng, coupling, true);
    spec.phi1 = (0..n).map(|_| rng.random_range(-coupling..=coupling)).collect();
    spec.phi2 = (0..n).map(|_| rng.random_range(-coupling..=coupling)).collect();
    spec.phi = random_weight(tree, rng, -1.0, 1.0, true);
    spec
}
