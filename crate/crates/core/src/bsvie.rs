//! Adjoints of the causal operators and M-solutions of backward Volterra
//! equations
//! `Y(t) = psi(t) + int_t^T g(t, s, Y(s), Z(t, s), Z(s, t)) ds - int_t^T Z(t, s) dW(s)`.
//!
//! Discrete conventions: the `ds` tail sum runs over `j > i`, which is the
//! exact transpose of the forward sum over `j < i`; the `dW` tail sum runs
//! over `j >= i`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kernel::Kernel;
use crate::tree::{condition_all, represent_unchecked, AdaptedProcess, ScenarioTree, TerminalVariable, TwoTimeSurface};

/// Which indices the backward `ds` tail sum covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TailSum {
    /// `j > i`: the exact adjoint of the forward convention.
    #[default]
    Strict,
    /// `j >= i`: also counts the diagonal kernel value. Breaks exact adjointness.
    Closed,
}

/// `sigma(i) = E^{F_i} sum_{j>i} [K1(j,i) rho(j) + K2(j,i) nu(j,i)] dt` where
/// `nu` is the M-decomposition of `rho`. This is the adjoint of
/// [`causal_apply`](crate::forward::causal_apply).
pub fn adjoint_causal(k1: &Kernel, k2: &Kernel, rho: &AdaptedProcess) -> Result<AdaptedProcess> {
    adjoint_causal_with(k1, k2, rho, TailSum::Strict)
}

pub fn adjoint_causal_with(
    k1: &Kernel,
    k2: &Kernel,
    rho: &AdaptedProcess,
    tail: TailSum,
) -> Result<AdaptedProcess> {
    let tree = *rho.tree();
    k1.check_tree(&tree)?;
    k2.check_tree(&tree)?;
    let dt = tree.dt();
    let mut sigma = AdaptedProcess::zeros(&tree);
    for j in 1..tree.steps() {
        let (_, nu) = represent_unchecked(rho.level(j), j, tree.sqrt_dt());
        let cond = condition_all(rho.level(j), j);
        for i in 0..j {
            let out = sigma.level_mut(i);
            for (k, o) in out.iter_mut().enumerate() {
                *o += (k1.value(j, i, k) * cond[i][k] + k2.value(j, i, k) * nu[i][k]) * dt;
            }
        }
    }
    if tail == TailSum::Closed {
        for i in 0..tree.steps() {
            for k in 0..tree.level_size(i) {
                let v = sigma.at(i, k) + k1.value(i, i, k) * rho.at(i, k) * dt;
                sigma.set(i, k, v);
            }
        }
    }
    Ok(sigma)
}

/// `(K_T^* eta)(s) = K1(T,s) E^{F_s} eta + K2(T,s) theta(s)`, the adjoint of
/// [`terminal_apply`](crate::forward::terminal_apply).
pub fn adjoint_terminal(k1: &Kernel, k2: &Kernel, eta: &TerminalVariable) -> Result<AdaptedProcess> {
    let tree = *eta.tree();
    k1.check_tree(&tree)?;
    k2.check_tree(&tree)?;
    let n = tree.steps();
    let cond = condition_all(eta.values(), n);
    let (_, theta) = represent_unchecked(eta.values(), n, tree.sqrt_dt());
    Ok(AdaptedProcess::from_fn(&tree, |j, k| {
        k1.value(n, j, k) * cond[j][k] + k2.value(n, j, k) * theta[j][k]
    }))
}

/// Free term `psi(t_i)`: row `i` is a random variable measurable at some
/// level `>= i` (up to `F_T`).
#[derive(Clone, Debug, PartialEq)]
pub struct FreeTerm {
    tree: ScenarioTree,
    rows: Vec<(usize, Vec<f64>)>,
}

impl FreeTerm {
    /// Adapted free term: row `i` lives on level `i`.
    pub fn adapted(p: &AdaptedProcess) -> Self {
        let tree = *p.tree();
        Self {
            tree,
            rows: (0..tree.steps()).map(|i| (i, p.level(i).to_vec())).collect(),
        }
    }

    /// `F_T`-measurable free term given per `(i, leaf)`.
    pub fn from_leaf_fn(tree: &ScenarioTree, f: impl Fn(usize, usize) -> f64) -> Self {
        let n = tree.steps();
        Self {
            tree: *tree,
            rows: (0..n).map(|i| (n, (0..tree.leaves()).map(|l| f(i, l)).collect())).collect(),
        }
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    /// `psi(t_i)` on the path ending at `leaf`.
    #[inline]
    pub fn at_leaf(&self, i: usize, leaf: usize) -> f64 {
        let (level, ref v) = self.rows[i];
        v[leaf >> (self.tree.steps() - level)]
    }

    /// `E^{F_{t_i}} psi(t_i)` as an adapted process.
    pub fn projected(&self) -> AdaptedProcess {
        let levels = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, (level, v))| condition_all(v, *level).swap_remove(i))
            .collect();
        AdaptedProcess::from_levels(&self.tree, levels, None)
    }
}

/// Adapted solution `(Y, Z)` of a backward Volterra equation in the M-sense.
#[derive(Clone, Debug, PartialEq)]
pub struct MSolution {
    pub y: AdaptedProcess,
    pub z: TwoTimeSurface,
}

impl MSolution {
    pub fn zeros(tree: &ScenarioTree) -> Self {
        Self {
            y: AdaptedProcess::zeros(tree),
            z: TwoTimeSurface::zeros(tree, tree.steps()),
        }
    }

    /// Discrete `H^2` norm `sqrt(E sum Y^2 dt + E sum sum Z^2 dt dt)`.
    pub fn h2_norm(&self) -> f64 {
        let y = crate::tree::inner_product_process(&self.y, &self.y).unwrap_or(0.0);
        (y + self.z.weighted_square_sum(|_| 1.0)).sqrt()
    }

    pub fn h2_distance(&self, other: &Self) -> f64 {
        Self {
            y: self.y.sub(&other.y),
            z: self.z.sub(&other.z),
        }
        .h2_norm()
    }
}

/// How the diagonal slice `Z(i, i)` is filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DiagonalZ {
    /// From the representation of the backward bracket.
    #[default]
    Representation,
    /// Set to zero. `Y` and every tail sum are unaffected.
    Zero,
}

/// Backward sweep shared by the linear solver and Picard iteration: `tail`
/// returns, for row `i` and a leaf, the sum `sum_{j>i} (...) dt` using the
/// already computed rows `j > i` of the solution.
fn backward_sweep(
    psi: &FreeTerm,
    diagonal: DiagonalZ,
    mut tail: impl FnMut(usize, usize, &MSolution) -> f64,
) -> MSolution {
    let tree = psi.tree;
    let n = tree.steps();
    let mut sol = MSolution::zeros(&tree);
    let mut bracket = vec![0.0; tree.leaves()];
    for i in (0..n).rev() {
        for (leaf, b) in bracket.iter_mut().enumerate() {
            *b = psi.at_leaf(i, leaf) + tail(i, leaf, &sol);
        }
        let (_, theta) = represent_unchecked(&bracket, n, tree.sqrt_dt());
        let cond = condition_all(&bracket, n);
        sol.y.level_mut(i).copy_from_slice(&cond[i]);
        for (j, th) in theta.iter().enumerate() {
            sol.z.slice_mut(i, j).copy_from_slice(th);
        }
        if diagonal == DiagonalZ::Zero {
            sol.z.slice_mut(i, i).fill(0.0);
        }
    }
    sol
}

/// Solves `Y(t) = psi(t) + int_t^T [K1(s,t) Y(s) + K2(s,t) Z(s,t)] ds - int_t^T Z(t,s) dW(s)`
/// in one backward sweep.
pub fn solve_linear_bsvie(psi: &FreeTerm, k1: &Kernel, k2: &Kernel) -> Result<MSolution> {
    solve_linear_bsvie_with(psi, k1, k2, DiagonalZ::Representation)
}

pub fn solve_linear_bsvie_with(
    psi: &FreeTerm,
    k1: &Kernel,
    k2: &Kernel,
    diagonal: DiagonalZ,
) -> Result<MSolution> {
    let tree = psi.tree;
    k1.check_tree(&tree)?;
    k2.check_tree(&tree)?;
    let n = tree.steps();
    let dt = tree.dt();
    Ok(backward_sweep(psi, diagonal, |i, leaf, sol| {
        let bi = leaf >> (n - i);
        let mut acc = 0.0;
        for j in i + 1..n {
            let bj = leaf >> (n - j);
            acc += k1.value(j, i, bi) * sol.y.at(j, bj) + k2.value(j, i, bi) * sol.z.at(j, i, bi);
        }
        acc * dt
    }))
}

/// Driver `g(i, j, y, z, zeta)` evaluated as `g(t_i, t_j, Y(t_j), Z(t_i, t_j), Z(t_j, t_i))`.
pub trait Driver {
    fn eval(&self, i: usize, j: usize, y: f64, z: f64, zeta: f64) -> f64;
}

impl<F: Fn(usize, usize, f64, f64, f64) -> f64> Driver for F {
    fn eval(&self, i: usize, j: usize, y: f64, z: f64, zeta: f64) -> f64 {
        self(i, j, y, z, zeta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PicardReport {
    /// Index of the accepted iterate (the first one the map left unchanged to within `tol`).
    pub iterations: usize,
    /// `H^2` distances between successive iterates.
    pub history: Vec<f64>,
    /// Largest quotient of successive distances, from the second quotient on.
    pub ratio: f64,
}

pub(crate) fn contraction_ratio(history: &[f64]) -> f64 {
    history
        .windows(2)
        .skip(1)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}

/// Picard iteration for a general driver: each step solves the backward
/// equation with the driver evaluated at the previous iterate.
pub fn solve_bsvie_picard(
    psi: &FreeTerm,
    g: &dyn Driver,
    options: PicardOptions,
    initial: Option<&MSolution>,
) -> Result<(MSolution, PicardReport)> {
    if !(options.tol > 0.0) {
        return invalid("Picard tolerance must be positive");
    }
    let tree = psi.tree;
    let n = tree.steps();
    let dt = tree.dt();
    let mut current = match initial {
        Some(s) if s.y.tree() == &tree => s.clone(),
        Some(_) => return invalid("initial guess lives on a different tree"),
        None => MSolution::zeros(&tree),
    };
    let mut history = Vec::new();
    for iter in 1..=options.max_iter {
        let prev = &current;
        let next = backward_sweep(psi, DiagonalZ::Representation, |i, leaf, _| {
            let bi = leaf >> (n - i);
            let mut acc = 0.0;
            for j in i + 1..n {
                let bj = leaf >> (n - j);
                acc += g.eval(i, j, prev.y.at(j, bj), prev.z.at(i, j, bj), prev.z.at(j, i, bi));
            }
            acc * dt
        });
        let d = next.h2_distance(&current);
        history.push(d);
        current = next;
        if iter > 1 && d < options.tol {
            let ratio = contraction_ratio(&history);
            return Ok((
                current,
                PicardReport {
                    iterations: iter - 1,
                    history,
                    ratio,
                },
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iter,
        ratio: contraction_ratio(&history),
        beta: 0.0,
    })
}

/// `lambda(t) = E^{F_t} sum_{j>i} [K1(s,t) Y(s) + K2(s,t) Z(s,t)] dt` with
/// `Z` taken from the supplied M-solution.
pub fn lambda_process(sol: &MSolution, k1: &Kernel, k2: &Kernel) -> Result<AdaptedProcess> {
    let tree = *sol.y.tree();
    k1.check_tree(&tree)?;
    k2.check_tree(&tree)?;
    let dt = tree.dt();
    let mut out = AdaptedProcess::zeros(&tree);
    for j in 1..tree.steps() {
        let cond = condition_all(sol.y.level(j), j);
        for i in 0..j {
            let z = sol.z.slice(j, i);
            for (k, o) in out.level_mut(i).iter_mut().enumerate() {
                *o += (k1.value(j, i, k) * cond[i][k] + k2.value(j, i, k) * z[k]) * dt;
            }
        }
    }
    Ok(out)
}

/// Both components of `lambda` for stacked kernels `(B1; C1)`, `(B2; C2)`.
pub fn lambda_pair(
    sol: &MSolution,
    b1: &Kernel,
    b2: &Kernel,
    c1: &Kernel,
    c2: &Kernel,
) -> Result<(AdaptedProcess, AdaptedProcess)> {
    Ok((lambda_process(sol, b1, b2)?, lambda_process(sol, c1, c2)?))
}

/// Sup over paths and rows of the residual of the linear backward equation.
pub fn linear_bsvie_residual(psi: &FreeTerm, k1: &Kernel, k2: &Kernel, sol: &MSolution) -> f64 {
    let tree = psi.tree;
    let n = tree.steps();
    let dt = tree.dt();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for leaf in 0..tree.leaves() {
            let bi = leaf >> (n - i);
            let mut rhs = psi.at_leaf(i, leaf);
            for j in i + 1..n {
                let bj = leaf >> (n - j);
                rhs += (k1.value(j, i, bi) * sol.y.at(j, bj) + k2.value(j, i, bi) * sol.z.at(j, i, bi)) * dt;
            }
            for j in i..n {
                rhs -= sol.z.at(i, j, leaf >> (n - j)) * tree.increment(n, leaf, j);
            }
            worst = worst.max((sol.y.at(i, bi) - rhs).abs());
        }
    }
    worst
}

/// Sup over paths of `|Y(t_i) - E Y(t_i) - sum_{j<i} Z(i,j) dW(j)|`.
pub fn m_condition_residual(sol: &MSolution) -> f64 {
    let tree = *sol.y.tree();
    let mut worst: f64 = 0.0;
    for i in 0..tree.steps() {
        let level = sol.y.level(i);
        let mean = level.iter().sum::<f64>() / level.len() as f64;
        for (k, &y) in level.iter().enumerate() {
            let mut rec = mean;
            for j in 0..i {
                rec += sol.z.at(i, j, ScenarioTree::ancestor(i, k, j)) * tree.increment(i, k, j);
            }
            worst = worst.max((y - rec).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_causal_operator, causal_apply, terminal_apply, unweighted, weighted};
    use crate::tree::{inner_product_process, inner_product_terminal, m_decompose};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn tree(n: usize) -> ScenarioTree {
        ScenarioTree::new(n, 1.0).unwrap()
    }

    fn wiggly_kernel(t: &ScenarioTree, seed: f64) -> Kernel {
        Kernel::from_node_fn(t, |i, j, k| ((i * 7 + j * 3 + k) as f64 * seed).sin())
    }

    fn wiggly_process(t: &ScenarioTree, seed: f64) -> AdaptedProcess {
        AdaptedProcess::from_fn(t, |i, k| ((i * 5 + k * 11) as f64 * seed + 0.3).cos())
    }

    #[test]
    fn adjoint_examples() {
        let t = tree(4);
        let z = Kernel::zero(&t);
        let rho = wiggly_process(&t, 0.7);
        assert_eq!(adjoint_causal(&z, &z, &rho).unwrap().max_abs(), 0.0);

        let one = AdaptedProcess::constant(&t, 1.0);
        let s = adjoint_causal(&Kernel::constant(&t, 1.0), &z, &one).unwrap();
        for i in 0..4 {
            let tail = (4 - i - 1) as f64 * t.dt();
            assert!(s.level(i).iter().all(|v| (v - tail).abs() < 1e-14));
        }

        let eta = TerminalVariable::constant(&t, 2.5);
        let s = adjoint_terminal(&Kernel::constant(&t, 1.0), &z, &eta).unwrap();
        assert!(s.sub(&AdaptedProcess::constant(&t, 2.5)).max_abs() < 1e-14);
        let s = adjoint_terminal(&z, &Kernel::constant(&t, 1.0), &TerminalVariable::brownian(&t)).unwrap();
        assert!(s.sub(&one).max_abs() < 1e-14);
        assert_eq!(adjoint_terminal(&z, &z, &TerminalVariable::zeros(&t)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn adjoint_matches_transpose() {
        let t = tree(3);
        let k1 = wiggly_kernel(&t, 0.37);
        let k2 = wiggly_kernel(&t, 1.91);
        let rho = wiggly_process(&t, 0.5);
        let m = assemble_causal_operator(&k1, &k2, &t).unwrap();
        let via_t = unweighted(&t, &(m.transpose() * weighted(&rho)));
        let direct = adjoint_causal(&k1, &k2, &rho).unwrap();
        assert!(via_t.sub(&direct).max_abs() < 1e-13);

        // Pairing against every basis direction.
        for c in 0..t.process_dim() {
            let mut e = nalgebra::DVector::zeros(t.process_dim());
            e[c] = 1.0;
            let x = unweighted(&t, &e);
            let kx = causal_apply(&k1, &k2, &x).unwrap().without_terminal();
            let lhs = inner_product_process(&kx, &rho).unwrap();
            let rhs = inner_product_process(&x, &direct).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-14);
        }

        let eta = TerminalVariable::from_fn(&t, |l| (l as f64 * 0.9).sin());
        let x = wiggly_process(&t, 0.21);
        let lhs = inner_product_terminal(&terminal_apply(&k1, &k2, &x).unwrap(), &eta).unwrap();
        let rhs = inner_product_process(&x, &adjoint_terminal(&k1, &k2, &eta).unwrap()).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-14);
    }

    #[test]
    fn closed_tail_breaks_adjointness() {
        let t = tree(3);
        let k1 = Kernel::constant(&t, 1.0);
        let z = Kernel::zero(&t);
        let rho = AdaptedProcess::constant(&t, 1.0);
        let x = AdaptedProcess::constant(&t, 1.0);
        let kx = causal_apply(&k1, &z, &x).unwrap().without_terminal();
        let lhs = inner_product_process(&kx, &rho).unwrap();
        let strict = adjoint_causal_with(&k1, &z, &rho, TailSum::Strict).unwrap();
        let closed = adjoint_causal_with(&k1, &z, &rho, TailSum::Closed).unwrap();
        assert_abs_diff_eq!(lhs, inner_product_process(&x, &strict).unwrap(), epsilon = 1e-14);
        assert!((lhs - inner_product_process(&x, &closed).unwrap()).abs() > 0.1);
    }

    #[test]
    fn linear_bsvie_examples() {
        let t = tree(5);
        let z = Kernel::zero(&t);
        let psi = AdaptedProcess::from_time_fn(&t, |s| 1.0 + s * s);
        let sol = solve_linear_bsvie(&FreeTerm::adapted(&psi), &z, &z).unwrap();
        assert!(sol.y.sub(&psi).max_abs() < 1e-15);
        assert_eq!(sol.z.max_abs(), 0.0);

        let a = 0.8;
        let one = FreeTerm::adapted(&AdaptedProcess::constant(&t, 1.0));
        let sol = solve_linear_bsvie(&one, &Kernel::constant(&t, a), &z).unwrap();
        let mut expected = [0.0; 5];
        for i in (0..5).rev() {
            let tail: f64 = expected[i + 1..].iter().sum();
            expected[i] = 1.0 + a * t.dt() * tail;
        }
        for i in 0..5 {
            assert!(sol.y.level(i).iter().all(|v| (v - expected[i]).abs() < 1e-14));
        }

        let w = AdaptedProcess::brownian(&t).without_terminal();
        let sol = solve_linear_bsvie(&FreeTerm::adapted(&w), &z, &z).unwrap();
        assert!(sol.y.sub(&w).max_abs() < 1e-14);
        for i in 0..5 {
            for j in 0..5 {
                let e = if j < i { 1.0 } else { 0.0 };
                assert!(sol.z.slice(i, j).iter().all(|v| (v - e).abs() < 1e-13));
            }
        }
    }

    #[test]
    fn linear_bsvie_residuals_and_m_condition() {
        let t = tree(5);
        let k1 = wiggly_kernel(&t, 0.41);
        let k2 = wiggly_kernel(&t, 1.3);
        let psi = FreeTerm::from_leaf_fn(&t, |i, l| ((i + 1) as f64 * 0.3 + l as f64 * 0.17).sin());
        let sol = solve_linear_bsvie(&psi, &k1, &k2).unwrap();
        assert!(linear_bsvie_residual(&psi, &k1, &k2, &sol) < 1e-12);
        assert!(m_condition_residual(&sol) < 1e-12);

        let md = m_decompose(&sol.y);
        for i in 0..5 {
            for j in 0..i {
                assert_eq!(md.slice(i, j), sol.z.slice(i, j));
            }
        }
    }

    #[test]
    fn linear_bsvie_is_the_adjoint_resolvent() {
        let t = tree(4);
        let k1 = wiggly_kernel(&t, 0.23);
        let k2 = wiggly_kernel(&t, 0.77);
        let psi = FreeTerm::from_leaf_fn(&t, |i, l| (i as f64 - l as f64 * 0.1).cos());
        let sol = solve_linear_bsvie(&psi, &k1, &k2).unwrap();
        let m = assemble_causal_operator(&k1, &k2, &t).unwrap();
        let lhs = DMatrix::identity(t.process_dim(), t.process_dim()) - m.transpose();
        let y = lhs.lu().solve(&weighted(&psi.projected())).unwrap();
        assert!(unweighted(&t, &y).sub(&sol.y).max_abs() < 1e-12);
    }

    #[test]
    fn diagonal_z_convention_is_unobservable() {
        let t = tree(4);
        let k1 = wiggly_kernel(&t, 0.5);
        let k2 = wiggly_kernel(&t, 0.9);
        let psi = FreeTerm::from_leaf_fn(&t, |i, l| (i * l) as f64 * 0.01 + 0.5);
        let a = solve_linear_bsvie_with(&psi, &k1, &k2, DiagonalZ::Representation).unwrap();
        let b = solve_linear_bsvie_with(&psi, &k1, &k2, DiagonalZ::Zero).unwrap();
        assert_eq!(a.y, b.y);
        assert!(a.z.sub(&b.z).max_abs() > 0.0);
        assert_eq!(lambda_process(&a, &k2, &k1).unwrap(), lambda_process(&b, &k2, &k1).unwrap());
    }

    #[test]
    fn picard_examples() {
        let t = tree(4);
        let psi = FreeTerm::from_leaf_fn(&t, |i, l| (i as f64 + 0.2 * l as f64).sin());
        let zero = |_: usize, _: usize, _: f64, _: f64, _: f64| 0.0;
        let (sol, rep) = solve_bsvie_picard(&psi, &zero, PicardOptions::default(), None).unwrap();
        assert_eq!(rep.iterations, 1);
        let z = Kernel::zero(&t);
        assert!(sol.h2_distance(&solve_linear_bsvie(&psi, &z, &z).unwrap()) < 1e-14);

        let linear = |_: usize, _: usize, y: f64, _: f64, zeta: f64| 0.4 * y - 0.3 * zeta;
        let (sol, _) = solve_bsvie_picard(&psi, &linear, PicardOptions::default(), None).unwrap();
        let lin = solve_linear_bsvie(&psi, &Kernel::constant(&t, 0.4), &Kernel::constant(&t, -0.3)).unwrap();
        assert!(sol.h2_distance(&lin) < 1e-10);

        let c = 0.3;
        let nonlinear = move |_: usize, _: usize, y: f64, _: f64, _: f64| c * y.sin();
        let (_, rep) = solve_bsvie_picard(&psi, &nonlinear, PicardOptions::default(), None).unwrap();
        assert!(rep.ratio < c * t.horizon());
        assert!(rep.iterations > 2);
    }

    #[test]
    fn picard_reports_non_convergence() {
        let t = tree(3);
        let psi = FreeTerm::adapted(&AdaptedProcess::constant(&t, 1.0));
        let g = |_: usize, _: usize, y: f64, _: f64, _: f64| y.sin();
        let opts = PicardOptions { tol: 1e-14, max_iter: 2 };
        assert!(matches!(
            solve_bsvie_picard(&psi, &g, opts, None),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn lambda_examples() {
        let t = tree(4);
        let z = Kernel::zero(&t);
        let zero = MSolution::zeros(&t);
        assert_eq!(lambda_process(&zero, &Kernel::constant(&t, 1.0), &z).unwrap().max_abs(), 0.0);

        let mut one = MSolution::zeros(&t);
        one.y = AdaptedProcess::constant(&t, 1.0);
        let l = lambda_process(&one, &Kernel::constant(&t, 1.0), &z).unwrap();
        for i in 0..4 {
            let tail = (4 - i - 1) as f64 * t.dt();
            assert!(l.level(i).iter().all(|v| (v - tail).abs() < 1e-14));
        }

        let k1 = wiggly_kernel(&t, 0.3);
        let k2 = wiggly_kernel(&t, 0.6);
        let psi = FreeTerm::from_leaf_fn(&t, |i, l| (i as f64 + 0.3 * l as f64).cos());
        let sol = solve_linear_bsvie(&psi, &wiggly_kernel(&t, 0.1), &z).unwrap();
        let l = lambda_process(&sol, &k1, &k2).unwrap();
        let a = adjoint_causal(&k1, &k2, &sol.y).unwrap();
        assert!(l.sub(&a).max_abs() < 1e-13);
    }
}
