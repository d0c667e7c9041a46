//! Forward controlled Volterra dynamics, the causal operators built from
//! kernels, their resolvent and the quadratic cost.
//!
//! Matrices act on weighted coordinates: a process `x` is represented by
//! `x(i, k) * sqrt(p_i dt)` and a terminal variable by `xi(leaf) * sqrt(p_N)`.
//! In these coordinates the `L^2` inner products are Euclidean, so adjoints
//! are transposes.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::kernel::Kernel;
use crate::tree::{AdaptedProcess, ScenarioTree, TerminalVariable};

/// Largest tree depth for which dense operator matrices are assembled.
pub const MAX_DENSE_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Adapted process to adapted process.
    Process,
    /// Adapted process to terminal variable.
    Terminal,
}

/// Dense linear map in the weighted orthonormal basis.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub matrix: DMatrix<f64>,
    pub kind: OperatorKind,
}

impl OperatorMatrix {
    pub fn transpose(&self) -> DMatrix<f64> {
        self.matrix.transpose()
    }

    pub fn apply(&self, x: &AdaptedProcess) -> DVector<f64> {
        &self.matrix * weighted(x)
    }
}

/// Level of a flattened process index.
#[inline]
pub(crate) fn level_of(index: usize) -> usize {
    (usize::BITS - 1 - (index + 1).leading_zeros()) as usize
}

pub(crate) fn check_dense(tree: &ScenarioTree) -> Result<()> {
    if tree.steps() > MAX_DENSE_STEPS {
        return invalid(format!(
            "dense operator assembly is limited to {MAX_DENSE_STEPS} steps, tree has {}",
            tree.steps()
        ));
    }
    Ok(())
}

/// Weighted coordinates of a process (levels `0..N`).
pub fn weighted(x: &AdaptedProcess) -> DVector<f64> {
    let tree = x.tree();
    let dt = tree.dt();
    let mut v = DVector::zeros(tree.process_dim());
    for i in 0..tree.steps() {
        let w = (tree.probability(i) * dt).sqrt();
        let off = ScenarioTree::offset(i);
        for (k, val) in x.level(i).iter().enumerate() {
            v[off + k] = val * w;
        }
    }
    v
}

/// Inverse of [`weighted`].
pub fn unweighted(tree: &ScenarioTree, v: &DVector<f64>) -> AdaptedProcess {
    let dt = tree.dt();
    AdaptedProcess::from_fn(tree, |i, k| {
        v[ScenarioTree::offset(i) + k] / (tree.probability(i) * dt).sqrt()
    })
}

pub fn weighted_terminal(xi: &TerminalVariable) -> DVector<f64> {
    let w = xi.tree().probability(xi.tree().steps()).sqrt();
    DVector::from_iterator(xi.values().len(), xi.values().iter().map(|v| v * w))
}

pub fn unweighted_terminal(tree: &ScenarioTree, v: &DVector<f64>) -> TerminalVariable {
    let w = tree.probability(tree.steps()).sqrt();
    TerminalVariable::from_fn(tree, |leaf| v[leaf] / w)
}

/// `sum_{j<i} [K1(i,j) x(j) dt + K2(i,j) x(j) dW(j)]` at `node` of level `i`.
#[inline]
pub(crate) fn causal_sum(
    tree: &ScenarioTree,
    k1: &Kernel,
    k2: &Kernel,
    x: &AdaptedProcess,
    i: usize,
    node: usize,
) -> f64 {
    let dt = tree.dt();
    let sq = tree.sqrt_dt();
    let mut acc = 0.0;
    for j in 0..i {
        let b = ScenarioTree::ancestor(i, node, j);
        let dw = ScenarioTree::branch_sign(ScenarioTree::ancestor(i, node, j + 1)) * sq;
        acc += (k1.value(i, j, b) * dt + k2.value(i, j, b) * dw) * x.at(j, b);
    }
    acc
}

fn check_kernels(tree: &ScenarioTree, kernels: &[&Kernel]) -> Result<()> {
    kernels.iter().try_for_each(|k| k.check_tree(tree))
}

/// `(Kx)(t_i) = sum_{j<i} K1(i,j) x(j) dt + sum_{j<i} K2(i,j) x(j) dW(j)`,
/// evaluated on levels `0..N` plus the terminal row.
pub fn causal_apply(k1: &Kernel, k2: &Kernel, x: &AdaptedProcess) -> Result<AdaptedProcess> {
    let tree = *x.tree();
    check_kernels(&tree, &[k1, k2])?;
    Ok(AdaptedProcess::from_fn_with_terminal(&tree, |i, a| {
        causal_sum(&tree, k1, k2, x, i, a)
    }))
}

/// Terminal operator `x -> sum_j K1(N,j) x(j) dt + K2(N,j) x(j) dW(j)`.
pub fn terminal_apply(k1: &Kernel, k2: &Kernel, x: &AdaptedProcess) -> Result<TerminalVariable> {
    let tree = *x.tree();
    check_kernels(&tree, &[k1, k2])?;
    let n = tree.steps();
    Ok(TerminalVariable::from_fn(&tree, |leaf| {
        causal_sum(&tree, k1, k2, x, n, leaf)
    }))
}

fn entry(tree: &ScenarioTree, k1: &Kernel, k2: &Kernel, i: usize, a: usize, j: usize) -> (usize, f64) {
    let b = ScenarioTree::ancestor(i, a, j);
    let dw = ScenarioTree::branch_sign(ScenarioTree::ancestor(i, a, j + 1)) * tree.sqrt_dt();
    (b, k1.value(i, j, b) * tree.dt() + k2.value(i, j, b) * dw)
}

/// Matrix of the causal operator `x -> Kx` on levels `0..N`.
pub fn assemble_causal_operator(k1: &Kernel, k2: &Kernel, tree: &ScenarioTree) -> Result<OperatorMatrix> {
    check_kernels(tree, &[k1, k2])?;
    check_dense(tree)?;
    let d = tree.process_dim();
    let mut m = DMatrix::zeros(d, d);
    for i in 1..tree.steps() {
        for a in 0..tree.level_size(i) {
            let row = ScenarioTree::offset(i) + a;
            for j in 0..i {
                let (b, v) = entry(tree, k1, k2, i, a, j);
                let scale = 0.5f64.powf(0.5 * (i - j) as f64);
                m[(row, ScenarioTree::offset(j) + b)] = v * scale;
            }
        }
    }
    Ok(OperatorMatrix {
        matrix: m,
        kind: OperatorKind::Process,
    })
}

/// Matrix of the terminal operator built from the rows `K1(T, .)`, `K2(T, .)`.
pub fn assemble_terminal_operator(k1: &Kernel, k2: &Kernel, tree: &ScenarioTree) -> Result<OperatorMatrix> {
    check_kernels(tree, &[k1, k2])?;
    check_dense(tree)?;
    let n = tree.steps();
    let mut m = DMatrix::zeros(tree.leaves(), tree.process_dim());
    for a in 0..tree.leaves() {
        for j in 0..n {
            let (b, v) = entry(tree, k1, k2, n, a, j);
            let scale = 0.5f64.powf(0.5 * (n - j) as f64) / tree.sqrt_dt();
            m[(a, ScenarioTree::offset(j) + b)] = v * scale;
        }
    }
    Ok(OperatorMatrix {
        matrix: m,
        kind: OperatorKind::Terminal,
    })
}

/// Rejects operators with entries on or above the time-block diagonal.
pub fn check_causal(m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        let lc = level_of(c);
        for r in 0..m.nrows() {
            if level_of(r) <= lc && m[(r, c)] != 0.0 {
                return invalid(format!(
                    "operator is not causal: entry ({r}, {c}) couples level {} to level {lc}",
                    level_of(r)
                ));
            }
        }
    }
    Ok(())
}

/// Solves `(I - A) x = y` by forward substitution over time blocks.
pub fn resolvent_apply(a: &OperatorMatrix, y: &AdaptedProcess) -> Result<AdaptedProcess> {
    if a.kind != OperatorKind::Process {
        return invalid("resolvent needs a process-to-process operator");
    }
    let d = y.tree().process_dim();
    if a.matrix.shape() != (d, d) {
        return invalid("operator dimension does not match the process");
    }
    check_causal(&a.matrix)?;
    let x = resolvent_solve(&a.matrix, &weighted(y));
    Ok(unweighted(y.tree(), &x))
}

/// Forward substitution for a strictly block-lower-triangular `a`, on a
/// vector or on every column of a matrix.
pub(crate) fn resolvent_solve(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut x = y.clone();
    for r in 0..x.len() {
        let lim = ScenarioTree::offset(level_of(r));
        let s: f64 = (0..lim).map(|c| a[(r, c)] * x[c]).sum();
        x[r] += s;
    }
    x
}

pub(crate) fn resolvent_solve_matrix(a: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = y.clone();
    for r in 0..x.nrows() {
        let lim = ScenarioTree::offset(level_of(r));
        if lim == 0 {
            continue;
        }
        let row = a.view((r, 0), (1, lim)) * x.rows(0, lim);
        let mut xr = x.row_mut(r);
        xr += row;
    }
    x
}

/// Coefficients of the controlled state equation and of the cost.
#[derive(Clone, Debug, PartialEq)]
pub struct GameSpec {
    pub a1: Kernel,
    pub a2: Kernel,
    pub b1: Kernel,
    pub b2: Kernel,
    pub c1: Kernel,
    pub c2: Kernel,
    pub q: AdaptedProcess,
    pub s1: AdaptedProcess,
    pub s2: AdaptedProcess,
    pub r11: AdaptedProcess,
    pub r12: AdaptedProcess,
    pub r21: AdaptedProcess,
    pub r22: AdaptedProcess,
    pub g: TerminalVariable,
    /// Forcing term; the terminal slot holds `phi(T)`.
    pub phi: AdaptedProcess,
}

impl GameSpec {
    /// All-zero game on `tree` with `phi(T) = 0` supplied.
    pub fn zero(tree: &ScenarioTree) -> Self {
        let z = Kernel::zero(tree);
        let p = AdaptedProcess::zeros(tree);
        Self {
            a1: z.clone(),
            a2: z.clone(),
            b1: z.clone(),
            b2: z.clone(),
            c1: z.clone(),
            c2: z,
            q: p.clone(),
            s1: p.clone(),
            s2: p.clone(),
            r11: p.clone(),
            r12: p.clone(),
            r21: p.clone(),
            r22: p,
            g: TerminalVariable::zeros(tree),
            phi: AdaptedProcess::zeros_with_terminal(tree),
        }
    }

    pub fn tree(&self) -> &ScenarioTree {
        self.phi.tree()
    }

    pub fn validate(&self) -> Result<()> {
        let tree = *self.tree();
        for k in [&self.a1, &self.a2, &self.b1, &self.b2, &self.c1, &self.c2] {
            k.check_tree(&tree)?;
        }
        for p in [&self.q, &self.s1, &self.s2, &self.r11, &self.r12, &self.r21, &self.r22] {
            if p.tree() != &tree {
                return invalid("weight lives on a different tree");
            }
            if p.interior().iter().any(|v| !v.is_finite()) {
                return invalid("weight has non-finite values");
            }
        }
        if self.g.tree() != &tree {
            return invalid("terminal weight lives on a different tree");
        }
        if self.g.max_abs() != 0.0 && !self.phi.has_terminal() {
            return invalid("phi(T) is required when the terminal weight G is nonzero");
        }
        Ok(())
    }

    pub fn has_terminal_cost(&self) -> bool {
        self.g.max_abs() != 0.0
    }

    /// `phi(T)`, or zero when the game carries no terminal forcing.
    pub fn phi_terminal(&self) -> TerminalVariable {
        self.phi
            .terminal()
            .unwrap_or_else(|| TerminalVariable::zeros(self.tree()))
    }

    /// Same spec with `phi` replaced.
    pub fn with_phi(&self, phi: AdaptedProcess) -> Self {
        Self { phi, ..self.clone() }
    }

    /// Symmetric part of the off-diagonal control weight.
    pub fn r_cross(&self) -> AdaptedProcess {
        self.r12.zip_map(&self.r21, |a, b| 0.5 * (a + b))
    }
}

/// State path and terminal value.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardSolution {
    pub x: AdaptedProcess,
    pub x_terminal: TerminalVariable,
}

/// Solves the controlled state equation by forward recursion along paths.
pub fn solve_forward_svie(
    spec: &GameSpec,
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
) -> Result<ForwardSolution> {
    spec.validate()?;
    let tree = *spec.tree();
    if u1.tree() != &tree || u2.tree() != &tree {
        return invalid("controls live on a different tree");
    }
    let d1 = causal_apply(&spec.b1, &spec.b2, u1)?;
    let d2 = causal_apply(&spec.c1, &spec.c2, u2)?;
    let phi_t = spec.phi_terminal();
    let n = tree.steps();
    let mut x = AdaptedProcess::zeros(&tree);
    for i in 0..n {
        for a in 0..tree.level_size(i) {
            let v = spec.phi.at(i, a)
                + d1.at(i, a)
                + d2.at(i, a)
                + causal_sum(&tree, &spec.a1, &spec.a2, &x, i, a);
            x.set(i, a, v);
        }
    }
    let x_terminal = TerminalVariable::from_fn(&tree, |leaf| {
        phi_t.values()[leaf]
            + d1.at(n, leaf)
            + d2.at(n, leaf)
            + causal_sum(&tree, &spec.a1, &spec.a2, &x, n, leaf)
    });
    Ok(ForwardSolution { x, x_terminal })
}

/// `J = <QX,X> + 2<XS,u> + <Ru,u> + E[G X(T)^2]`, cross weights used as given.
pub fn cost_functional(
    spec: &GameSpec,
    x: &AdaptedProcess,
    x_terminal: &TerminalVariable,
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
) -> Result<f64> {
    let tree = *spec.tree();
    if x.tree() != &tree || u1.tree() != &tree || u2.tree() != &tree || x_terminal.tree() != &tree
    {
        return invalid("cost inputs live on different trees");
    }
    let dt = tree.dt();
    let mut running = 0.0;
    for i in 0..tree.steps() {
        let mut level = 0.0;
        for k in 0..tree.level_size(i) {
            let (xv, a, b) = (x.at(i, k), u1.at(i, k), u2.at(i, k));
            level += spec.q.at(i, k) * xv * xv
                + 2.0 * xv * (spec.s1.at(i, k) * a + spec.s2.at(i, k) * b)
                + spec.r11.at(i, k) * a * a
                + spec.r12.at(i, k) * a * b
                + spec.r21.at(i, k) * b * a
                + spec.r22.at(i, k) * b * b;
        }
        running += level * tree.probability(i);
    }
    let terminal: f64 = spec
        .g
        .values()
        .iter()
        .zip(x_terminal.values())
        .map(|(g, x)| g * x * x)
        .sum::<f64>()
        * tree.probability(tree.steps());
    Ok(running * dt + terminal)
}

/// Solves the state equation and evaluates the cost in one call.
pub fn evaluate_cost(spec: &GameSpec, u1: &AdaptedProcess, u2: &AdaptedProcess) -> Result<f64> {
    let sol = solve_forward_svie(spec, u1, u2)?;
    cost_functional(spec, &sol.x, &sol.x_terminal, u1, u2)
}
