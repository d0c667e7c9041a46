//! Coupled forward-backward Volterra systems solved by fixed-point
//! iteration in an exponentially weighted norm, and the feedback form of the
//! saddle point when there is no terminal cost.

use serde::Serialize;

use crate::bsvie::{adjoint_causal, lambda_process, solve_linear_bsvie, FreeTerm, MSolution};
use crate::error::{invalid, Error, Result};
use crate::forward::{causal_apply, causal_sum, GameSpec};
use crate::kernel::Kernel;
use crate::tree::{condition_all, AdaptedProcess, ScenarioTree, TwoTimeSurface};

/// `dt sum e^{-beta t_i} E x^2 + dt sum e^{beta t_i} E y^2 + dt^2 sum_i sum_j e^{beta t_i} E z(i,j)^2`.
///
/// This is the squared norm; distances between iterates use its square root.
pub fn weighted_norm(x: &AdaptedProcess, y: &AdaptedProcess, z: &TwoTimeSurface, beta: f64) -> f64 {
    let tree = x.tree();
    let dt = tree.dt();
    let mut total = 0.0;
    for i in 0..tree.steps() {
        let p = tree.probability(i);
        let t = tree.time(i);
        let sx: f64 = x.level(i).iter().map(|v| v * v).sum();
        let sy: f64 = y.level(i).iter().map(|v| v * v).sum();
        total += dt * p * ((-beta * t).exp() * sx + (beta * t).exp() * sy);
    }
    total + z.weighted_square_sum(|i| (beta * tree.time(i)).exp())
}

/// How the weight `beta` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Beta {
    Fixed(f64),
    /// Start at 2 and double until three probe iterations contract with
    /// ratio below 0.9, up to `2^10`.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPointOptions {
    pub beta: Beta,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            beta: Beta::Auto,
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Residuals {
    pub forward: f64,
    pub backward: f64,
    pub coupling: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPointReport {
    /// Weighted distances between successive iterates.
    pub history: Vec<f64>,
    /// Largest quotient of successive distances.
    pub ratio: f64,
    pub residuals: Residuals,
    pub beta: f64,
    pub iterations: usize,
}

/// A map whose fixed point is sought.
pub trait FixedPointMap {
    type State: Clone;
    fn apply(&self, state: &Self::State) -> Result<Self::State>;
    /// Distance in the `beta`-weighted norm.
    fn distance(&self, a: &Self::State, b: &Self::State, beta: f64) -> f64;
}

const AUTO_BETA_START: f64 = 2.0;
const AUTO_BETA_CAP: f64 = 1024.0;
const PROBE_ITERATIONS: usize = 3;
const PROBE_RATIO: f64 = 0.9;

fn probe_ratio<M: FixedPointMap>(map: &M, init: &M::State, beta: f64) -> Result<f64> {
    let mut cur = init.clone();
    let mut dists = Vec::new();
    for _ in 0..=PROBE_ITERATIONS {
        let next = map.apply(&cur)?;
        dists.push(map.distance(&next, &cur, beta));
        cur = next;
    }
    Ok(dists
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max))
}

fn max_quotient(history: &[f64]) -> f64 {
    history
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}

/// Picard iteration `s <- map(s)` until the weighted distance between
/// successive iterates falls below `tol`.
pub fn iterate<M: FixedPointMap>(
    map: &M,
    init: M::State,
    options: &FixedPointOptions,
) -> Result<(M::State, FixedPointReport)> {
    if !(options.tol > 0.0) {
        return invalid("fixed-point tolerance must be positive");
    }
    let beta = match options.beta {
        Beta::Fixed(b) => b,
        Beta::Auto => {
            let mut beta = AUTO_BETA_START;
            loop {
                let r = probe_ratio(map, &init, beta)?;
                if r < PROBE_RATIO {
                    break beta;
                }
                if beta >= AUTO_BETA_CAP {
                    return Err(Error::NonConvergence {
                        iterations: PROBE_ITERATIONS,
                        ratio: r,
                        beta,
                    });
                }
                beta *= 2.0;
            }
        }
    };
    let mut cur = init;
    let mut history = Vec::new();
    for it in 1..=options.max_iter {
        let next = map.apply(&cur)?;
        let d = map.distance(&next, &cur, beta);
        history.push(d);
        cur = next;
        if d < options.tol {
            let ratio = max_quotient(&history);
            return Ok((
                cur,
                FixedPointReport {
                    history,
                    ratio,
                    residuals: Residuals::default(),
                    beta,
                    iterations: it,
                },
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iter,
        ratio: max_quotient(&history),
        beta,
    })
}

/// Coefficients of the coupled system
/// `X = phi + int (A1 X + B1 P) ds + int (A2 X + B2 P) dW`,
/// `Y = phi1 X + phi2 P + int_t^T (C1 Y + C2 Z) ds - int_t^T Z dW`,
/// `P = E^{F_t} int_t^T (D1 Y + D2 Z) ds`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledSpec {
    pub a1: Kernel,
    pub a2: Kernel,
    pub b1: Kernel,
    pub b2: Kernel,
    pub c1: Kernel,
    pub c2: Kernel,
    pub d1: Kernel,
    pub d2: Kernel,
    /// Deterministic multipliers, one value per time index `0..N`.
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub phi: AdaptedProcess,
}

impl CoupledSpec {
    pub fn zero(tree: &ScenarioTree) -> Self {
        let z = Kernel::zero(tree);
        Self {
            a1: z.clone(),
            a2: z.clone(),
            b1: z.clone(),
            b2: z.clone(),
            c1: z.clone(),
            c2: z.clone(),
            d1: z.clone(),
            d2: z,
            phi1: vec![0.0; tree.steps()],
            phi2: vec![0.0; tree.steps()],
            phi: AdaptedProcess::zeros(tree),
        }
    }

    pub fn tree(&self) -> &ScenarioTree {
        self.phi.tree()
    }

    pub fn validate(&self) -> Result<()> {
        let tree = *self.tree();
        for k in [&self.a1, &self.a2, &self.b1, &self.b2, &self.c1, &self.c2, &self.d1, &self.d2] {
            k.check_tree(&tree)?;
        }
        if self.phi1.len() != tree.steps() || self.phi2.len() != tree.steps() {
            return invalid("phi1 and phi2 need one value per time index");
        }
        if self.phi1.iter().chain(&self.phi2).any(|v| !v.is_finite()) {
            return invalid("phi1 and phi2 must be finite");
        }
        Ok(())
    }

    /// `C'(s,t) = C(s,t) + phi2(t) D(s,t)` for both kernel pairs.
    pub fn merged_kernels(&self) -> (Kernel, Kernel) {
        let tree = *self.tree();
        let merge = |c: &Kernel, d: &Kernel| {
            if c.is_deterministic() && d.is_deterministic() {
                Kernel::from_index_fn(&tree, |s, t| c.det(s, t) + self.phi2[t] * d.det(s, t))
            } else {
                Kernel::from_node_fn(&tree, |s, t, k| c.value(s, t, k) + self.phi2[t] * d.value(s, t, k))
            }
        };
        (merge(&self.c1, &self.d1), merge(&self.c2, &self.d2))
    }
}

/// Which form of the coupled system is iterated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoupledForm {
    /// `P` eliminated through the merged kernels `C'`.
    #[default]
    Merged,
    /// `P` kept as an explicit free-term contribution `phi2 P`.
    ExplicitP,
}

/// Update order inside one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// `P` from the input, then the forward equation solved exactly, then
    /// the backward equation solved exactly from the new `X`.
    #[default]
    GaussSeidel,
    /// Every right-hand side evaluated at the input triple.
    Jacobi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    pub x: AdaptedProcess,
    pub sol: MSolution,
}

impl CoupledState {
    pub fn zeros(tree: &ScenarioTree) -> Self {
        Self {
            x: AdaptedProcess::zeros(tree),
            sol: MSolution::zeros(tree),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledSolution {
    pub x: AdaptedProcess,
    pub y: AdaptedProcess,
    pub z: TwoTimeSurface,
    pub p: AdaptedProcess,
    pub report: FixedPointReport,
}

struct CoupledMap<'a> {
    spec: &'a CoupledSpec,
    merged: (Kernel, Kernel),
    form: CoupledForm,
    sweep: Sweep,
}

impl CoupledMap<'_> {
    fn coupling(&self, sol: &MSolution) -> Result<AdaptedProcess> {
        lambda_process(sol, &self.spec.d1, &self.spec.d2)
    }

    fn forward(&self, x_in: &AdaptedProcess, p: &AdaptedProcess) -> Result<AdaptedProcess> {
        let s = self.spec;
        let tree = *s.tree();
        let drive = causal_apply(&s.b1, &s.b2, p)?;
        let mut x = AdaptedProcess::zeros(&tree);
        for i in 0..tree.steps() {
            for a in 0..tree.level_size(i) {
                let src = if self.sweep == Sweep::Jacobi { x_in } else { &x };
                let v = s.phi.at(i, a) + drive.at(i, a) + causal_sum(&tree, &s.a1, &s.a2, src, i, a);
                x.set(i, a, v);
            }
        }
        Ok(x)
    }
}

/// `E^{F_i} sum_{j>i} [K1(j,i) y(j) + K2(j,i) z(j,i)] dt` plus a free term,
/// with the representation of the bracket filling `Z(i, .)`.
fn explicit_backward(free: &AdaptedProcess, k1: &Kernel, k2: &Kernel, input: &MSolution) -> Result<MSolution> {
    let tail = lambda_process(input, k1, k2)?;
    let y = free.add(&tail);
    let tree = *free.tree();
    let n = tree.steps();
    let dt = tree.dt();
    // The bracket's martingale part gives Z(i, j) for j >= i.
    let mut z = TwoTimeSurface::zeros(&tree, n);
    let mut bracket = vec![0.0; tree.leaves()];
    for i in 0..n {
        for (leaf, b) in bracket.iter_mut().enumerate() {
            let bi = leaf >> (n - i);
            let mut acc = free.at(i, bi);
            for j in i + 1..n {
                let bj = leaf >> (n - j);
                acc += (k1.value(j, i, bi) * input.y.at(j, bj) + k2.value(j, i, bi) * input.z.at(j, i, bi)) * dt;
            }
            *b = acc;
        }
        let (_, theta) = crate::tree::represent_unchecked(&bracket, n, tree.sqrt_dt());
        let cond = condition_all(y.level(i), i);
        let (_, m) = crate::tree::represent_unchecked(&cond[i], i, tree.sqrt_dt());
        for j in 0..n {
            let src = if j < i { &m[j] } else { &theta[j] };
            z.slice_mut(i, j).copy_from_slice(src);
        }
    }
    Ok(MSolution { y, z })
}

impl FixedPointMap for CoupledMap<'_> {
    type State = CoupledState;

    fn apply(&self, st: &CoupledState) -> Result<CoupledState> {
        let s = self.spec;
        let tree = *s.tree();
        let p = self.coupling(&st.sol)?;
        let x = self.forward(&st.x, &p)?;
        let x_used = if self.sweep == Sweep::Jacobi { &st.x } else { &x };
        let mut free = AdaptedProcess::from_fn(&tree, |i, k| s.phi1[i] * x_used.at(i, k));
        let (k1, k2) = match self.form {
            CoupledForm::Merged => (&self.merged.0, &self.merged.1),
            CoupledForm::ExplicitP => {
                free = free.add(&AdaptedProcess::from_fn(&tree, |i, k| s.phi2[i] * p.at(i, k)));
                (&s.c1, &s.c2)
            }
        };
        let sol = match self.sweep {
            Sweep::GaussSeidel => solve_linear_bsvie(&FreeTerm::adapted(&free), k1, k2)?,
            Sweep::Jacobi => explicit_backward(&free, k1, k2, &st.sol)?,
        };
        Ok(CoupledState { x, sol })
    }

    fn distance(&self, a: &CoupledState, b: &CoupledState, beta: f64) -> f64 {
        weighted_norm(&a.x.sub(&b.x), &a.sol.y.sub(&b.sol.y), &a.sol.z.sub(&b.sol.z), beta).sqrt()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CoupledOptions {
    pub fixed_point: FixedPointOptions,
    pub form: CoupledForm,
    pub sweep: Sweep,
}

/// Solves the coupled system from a zero initial triple.
pub fn solve_coupled_fbsvie(spec: &CoupledSpec, options: &CoupledOptions) -> Result<CoupledSolution> {
    solve_coupled_fbsvie_from(spec, options, CoupledState::zeros(spec.tree()))
}

pub fn solve_coupled_fbsvie_from(
    spec: &CoupledSpec,
    options: &CoupledOptions,
    init: CoupledState,
) -> Result<CoupledSolution> {
    spec.validate()?;
    if init.x.tree() != spec.tree() {
        return invalid("initial state lives on a different tree");
    }
    let map = CoupledMap {
        spec,
        merged: spec.merged_kernels(),
        form: options.form,
        sweep: options.sweep,
    };
    let (st, mut report) = iterate(&map, init, &options.fixed_point)?;
    let p = map.coupling(&st.sol)?;
    // The merged form folds `phi2 P` into the bracket, which moves it into
    // Z(i, j >= i). Recompute that part from the explicit form so both forms
    // return the same triple.
    let tree = *spec.tree();
    let free = AdaptedProcess::from_fn(&tree, |i, k| spec.phi1[i] * st.x.at(i, k) + spec.phi2[i] * p.at(i, k));
    let st = CoupledState {
        sol: MSolution {
            z: explicit_backward(&free, &spec.c1, &spec.c2, &st.sol)?.z,
            y: st.sol.y,
        },
        x: st.x,
    };
    report.residuals = coupled_residuals(spec, &st.x, &st.sol, &p)?;
    Ok(CoupledSolution {
        x: st.x,
        y: st.sol.y,
        z: st.sol.z,
        p,
        report,
    })
}

/// Sup-norm residuals of the three equations of the coupled system.
pub fn coupled_residuals(
    spec: &CoupledSpec,
    x: &AdaptedProcess,
    sol: &MSolution,
    p: &AdaptedProcess,
) -> Result<Residuals> {
    let tree = *spec.tree();
    let n = tree.steps();
    let dt = tree.dt();
    let drive = causal_apply(&spec.b1, &spec.b2, p)?;
    let mut forward: f64 = 0.0;
    for i in 0..n {
        for a in 0..tree.level_size(i) {
            let rhs = spec.phi.at(i, a) + drive.at(i, a) + causal_sum(&tree, &spec.a1, &spec.a2, x, i, a);
            forward = forward.max((x.at(i, a) - rhs).abs());
        }
    }
    let mut backward: f64 = 0.0;
    for i in 0..n {
        for leaf in 0..tree.leaves() {
            let bi = leaf >> (n - i);
            let mut rhs = spec.phi1[i] * x.at(i, bi) + spec.phi2[i] * p.at(i, bi);
            for j in i + 1..n {
                let bj = leaf >> (n - j);
                rhs += (spec.c1.value(j, i, bi) * sol.y.at(j, bj) + spec.c2.value(j, i, bi) * sol.z.at(j, i, bi)) * dt;
            }
            for j in i..n {
                rhs -= sol.z.at(i, j, leaf >> (n - j)) * tree.increment(n, leaf, j);
            }
            backward = backward.max((sol.y.at(i, bi) - rhs).abs());
        }
    }
    let coupling = lambda_process(sol, &spec.d1, &spec.d2)?.sub(p).max_abs();
    Ok(Residuals {
        forward,
        backward,
        coupling,
    })
}

/// Inverse of the symmetric control weight at one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct WeightInverse {
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
}

impl WeightInverse {
    pub fn apply(&self, a: f64, b: f64) -> (f64, f64) {
        (self.m11 * a + self.m12 * b, self.m12 * a + self.m22 * b)
    }
}

pub(crate) fn invert_weight(r11: f64, r12: f64, r22: f64, tol: f64, i: usize, node: usize) -> Result<WeightInverse> {
    let det = r11 * r22 - r12 * r12;
    if !(det.abs() >= tol) {
        return Err(Error::SingularWeight {
            time_index: i,
            node,
            det: det.abs(),
        });
    }
    Ok(WeightInverse {
        m11: r22 / det,
        m12: -r12 / det,
        m22: r11 / det,
    })
}

/// Block inverse with `A = R11 - R12 R22 R21` in place of the Schur complement and
/// `B = R22 - R21 R11^{-1} R12`; entries in row-major order.
pub fn naive_block_inverse(r11: f64, r12: f64, r21: f64, r22: f64) -> [f64; 4] {
    let a = r11 - r12 * r22 * r21;
    let b = r22 - r21 * r12 / r11;
    [1.0 / a, -r12 / (a * r22), -r21 / (b * r11), 1.0 / b]
}

/// Output of the feedback construction.
#[derive(Clone, Debug)]
pub struct FeedbackSaddle {
    pub u1: AdaptedProcess,
    pub u2: AdaptedProcess,
    pub x: AdaptedProcess,
    pub sol: MSolution,
    pub lambda1: AdaptedProcess,
    pub lambda2: AdaptedProcess,
    pub report: FixedPointReport,
    /// Largest entrywise gap between [`naive_block_inverse`] and
    /// the direct inverse of `R` over all nodes.
    pub naive_inverse_discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct FeedbackState {
    x: AdaptedProcess,
    sol: MSolution,
    lambda1: AdaptedProcess,
    lambda2: AdaptedProcess,
}

struct FeedbackMap<'a> {
    spec: &'a GameSpec,
    inv: Vec<Vec<WeightInverse>>,
}

impl FeedbackMap<'_> {
    fn control(&self, i: usize, k: usize, x: f64, l1: f64, l2: f64) -> (f64, f64) {
        let s = self.spec;
        let (a, b) = self.inv[i][k].apply(s.s1.at(i, k) * x + l1, s.s2.at(i, k) * x + l2);
        (-a, -b)
    }

    fn controls(&self, st: &FeedbackState) -> (AdaptedProcess, AdaptedProcess) {
        let tree = *self.spec.tree();
        let mut u1 = AdaptedProcess::zeros(&tree);
        let mut u2 = AdaptedProcess::zeros(&tree);
        for i in 0..tree.steps() {
            for k in 0..tree.level_size(i) {
                let (a, b) = self.control(i, k, st.x.at(i, k), st.lambda1.at(i, k), st.lambda2.at(i, k));
                u1.set(i, k, a);
                u2.set(i, k, b);
            }
        }
        (u1, u2)
    }
}

impl FixedPointMap for FeedbackMap<'_> {
    type State = FeedbackState;

    fn apply(&self, st: &FeedbackState) -> Result<FeedbackState> {
        let s = self.spec;
        let tree = *s.tree();
        // Forward: the control at each node uses the state just computed there.
        let mut x = AdaptedProcess::zeros(&tree);
        let mut u1 = AdaptedProcess::zeros(&tree);
        let mut u2 = AdaptedProcess::zeros(&tree);
        for i in 0..tree.steps() {
            for a in 0..tree.level_size(i) {
                let v = s.phi.at(i, a)
                    + causal_sum(&tree, &s.a1, &s.a2, &x, i, a)
                    + causal_sum(&tree, &s.b1, &s.b2, &u1, i, a)
                    + causal_sum(&tree, &s.c1, &s.c2, &u2, i, a);
                x.set(i, a, v);
                let (c1, c2) = self.control(i, a, v, st.lambda1.at(i, a), st.lambda2.at(i, a));
                u1.set(i, a, c1);
                u2.set(i, a, c2);
            }
        }
        let psi = AdaptedProcess::from_fn(&tree, |i, k| {
            s.q.at(i, k) * x.at(i, k) + s.s1.at(i, k) * u1.at(i, k) + s.s2.at(i, k) * u2.at(i, k)
        });
        let sol = solve_linear_bsvie(&FreeTerm::adapted(&psi), &s.a1, &s.a2)?;
        let lambda1 = adjoint_causal(&s.b1, &s.b2, &sol.y)?;
        let lambda2 = adjoint_causal(&s.c1, &s.c2, &sol.y)?;
        Ok(FeedbackState { x, sol, lambda1, lambda2 })
    }

    fn distance(&self, a: &FeedbackState, b: &FeedbackState, beta: f64) -> f64 {
        let dl1 = a.lambda1.sub(&b.lambda1);
        let dl2 = a.lambda2.sub(&b.lambda2);
        let zero = TwoTimeSurface::zeros(a.x.tree(), 0);
        (weighted_norm(&a.x.sub(&b.x), &a.sol.y.sub(&b.sol.y), &a.sol.z.sub(&b.sol.z), beta)
            + weighted_norm(&AdaptedProcess::zeros(a.x.tree()), &dl1, &zero, beta)
            + weighted_norm(&AdaptedProcess::zeros(a.x.tree()), &dl2, &zero, beta))
        .sqrt()
    }
}

/// Saddle point in feedback form `u = -R^{-1}(S X + lambda)` for games
/// without terminal cost, by fixed-point iteration on the coupled
/// state/adjoint system.
pub fn feedback_saddle(spec: &GameSpec, options: &FixedPointOptions, det_tol: f64) -> Result<FeedbackSaddle> {
    spec.validate()?;
    if spec.has_terminal_cost() {
        return Err(Error::Unsupported(
            "feedback representation requires a zero terminal weight G".into(),
        ));
    }
    let tree = *spec.tree();
    let rc = spec.r_cross();
    let mut inv = Vec::with_capacity(tree.steps());
    let mut discrepancy: f64 = 0.0;
    for i in 0..tree.steps() {
        let mut row = Vec::with_capacity(tree.level_size(i));
        for k in 0..tree.level_size(i) {
            let (r11, r12, r22) = (spec.r11.at(i, k), rc.at(i, k), spec.r22.at(i, k));
            let w = invert_weight(r11, r12, r22, det_tol, i, k)?;
            let naive = naive_block_inverse(r11, r12, r12, r22);
            for (p, d) in naive.iter().zip([w.m11, w.m12, w.m12, w.m22]) {
                let gap = (p - d).abs();
                discrepancy = discrepancy.max(if gap.is_nan() { f64::INFINITY } else { gap });
            }
            row.push(w);
        }
        inv.push(row);
    }
    let map = FeedbackMap { spec, inv };
    let init = FeedbackState {
        x: AdaptedProcess::zeros(&tree),
        sol: MSolution::zeros(&tree),
        lambda1: AdaptedProcess::zeros(&tree),
        lambda2: AdaptedProcess::zeros(&tree),
    };
    let (st, mut report) = iterate(&map, init, options)?;
    let (u1, u2) = map.controls(&st);
    let forward = crate::forward::solve_forward_svie(spec, &u1, &u2)?;
    report.residuals = Residuals {
        forward: forward.x.sub(&st.x).max_abs(),
        backward: 0.0,
        coupling: adjoint_causal(&spec.b1, &spec.b2, &st.sol.y)?
            .sub(&st.lambda1)
            .max_abs()
            .max(adjoint_causal(&spec.c1, &spec.c2, &st.sol.y)?.sub(&st.lambda2).max_abs()),
    };
    Ok(FeedbackSaddle {
        u1,
        u2,
        x: st.x,
        sol: st.sol,
        lambda1: st.lambda1,
        lambda2: st.lambda2,
        report,
        naive_inverse_discrepancy: discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weighted_norm_examples() {
        let t = ScenarioTree::new(4, 1.0).unwrap();
        let zero = AdaptedProcess::zeros(&t);
        let zs = TwoTimeSurface::zeros(&t, 4);
        assert_eq!(weighted_norm(&zero, &zero, &zs, 3.0), 0.0);

        let one = AdaptedProcess::constant(&t, 1.0);
        let beta = 1.7;
        let expected: f64 = (0..4).map(|i| t.dt() * (-beta * t.time(i)).exp()).sum();
        assert_abs_diff_eq!(weighted_norm(&one, &zero, &zs, beta), expected, epsilon = 1e-15);

        let y = AdaptedProcess::from_fn(&t, |i, k| (i + k) as f64);
        let plain = crate::tree::inner_product_process(&one, &one).unwrap()
            + crate::tree::inner_product_process(&y, &y).unwrap();
        assert_abs_diff_eq!(weighted_norm(&one, &y, &zs, 0.0), plain, epsilon = 1e-13);
    }

    #[test]
    fn decoupled_system_converges_immediately() {
        let t = ScenarioTree::new(3, 1.0).unwrap();
        let mut spec = CoupledSpec::zero(&t);
        spec.a1 = Kernel::constant(&t, 0.5);
        spec.c1 = Kernel::constant(&t, 0.3);
        spec.phi1 = vec![0.4; 3];
        spec.phi = AdaptedProcess::brownian(&t).without_terminal().map(|v| 1.0 + v);
        let sol = solve_coupled_fbsvie(&spec, &CoupledOptions::default()).unwrap();
        assert_eq!(sol.report.iterations, 2);
        assert_eq!(sol.report.history[1], 0.0);
        let mut g = GameSpec::zero(&t);
        g.a1 = spec.a1.clone();
        g.phi = spec.phi.clone();
        let zero = AdaptedProcess::zeros(&t);
        let x = crate::forward::solve_forward_svie(&g, &zero, &zero).unwrap().x;
        assert!(sol.x.sub(&x).max_abs() < 1e-14);
        assert_eq!(sol.p.max_abs(), 0.0);
    }

    #[test]
    fn singular_and_terminal_weights_are_rejected() {
        let t = ScenarioTree::new(2, 1.0).unwrap();
        let mut spec = GameSpec::zero(&t);
        spec.r11 = AdaptedProcess::constant(&t, 1.0);
        spec.r22 = AdaptedProcess::from_fn(&t, |i, k| if i == 1 && k == 1 { 0.0 } else { -1.0 });
        match feedback_saddle(&spec, &FixedPointOptions::default(), 1e-12) {
            Err(Error::SingularWeight { time_index, node, .. }) => assert_eq!((time_index, node), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
        spec.r22 = AdaptedProcess::constant(&t, -1.0);
        spec.g = crate::tree::TerminalVariable::constant(&t, 1.0);
        spec.phi = AdaptedProcess::zeros_with_terminal(&t);
        assert!(matches!(
            feedback_saddle(&spec, &FixedPointOptions::default(), 1e-12),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn trivial_feedback_saddle_is_zero() {
        let t = ScenarioTree::new(3, 1.0).unwrap();
        let mut spec = GameSpec::zero(&t);
        spec.r11 = AdaptedProcess::constant(&t, 1.0);
        spec.r22 = AdaptedProcess::constant(&t, -1.0);
        let fb = feedback_saddle(&spec, &FixedPointOptions::default(), 1e-12).unwrap();
        assert_eq!(fb.u1.max_abs() + fb.u2.max_abs(), 0.0);
        assert_eq!(fb.naive_inverse_discrepancy, 0.0);
    }

    #[test]
    fn naive_inverse_differs_from_the_schur_complement() {
        let [a, b, c, d] = naive_block_inverse(2.0, 0.5, 0.5, -3.0);
        let det = 2.0 * -3.0 - 0.25;
        let direct = [-3.0 / det, -0.5 / det, -0.5 / det, 2.0 / det];
        let gap = [a, b, c, d].iter().zip(direct).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(gap > 1e-3);
        let [a, _, _, d] = naive_block_inverse(2.0, 0.0, 0.0, -3.0);
        assert_eq!((a, d), (0.5, -1.0 / 3.0));
    }
}
