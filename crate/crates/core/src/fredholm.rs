//! Deterministic-coefficient reduction of the game to a stochastic
//! Fredholm-Volterra equation for the multiplier `lambda`, with
//! `u = -R^{-1} lambda` as the saddle point.
//!
//! Kernels are read only on their causal domain: `U(a, b)` is treated as zero
//! unless `a > b`. With this convention every identity below holds exactly on
//! the tree, not just up to discretization error.

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fbsvie::invert_weight;
use crate::forward::{causal_apply, check_dense, solve_forward_svie, GameSpec};
use crate::kernel::Kernel;
use crate::tree::{condition_all, m_decompose, AdaptedProcess, ScenarioTree, TerminalVariable, TwoTimeSurface};

/// Determinant threshold below which `R(t)` counts as singular.
pub const WEIGHT_DET_TOL: f64 = 1e-12;
/// Condition estimate above which the discretized Fredholm system is rejected.
pub const MAX_CONDITION: f64 = 1e14;

/// Game with deterministic coefficients, no state feedback (`A1 = A2 = 0`)
/// and forcing `phi(t) = phi1(t) + int_0^t l(t,s) dW(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeterministicGameSpec {
    pub tree: ScenarioTree,
    pub b1: Kernel,
    pub b2: Kernel,
    pub c1: Kernel,
    pub c2: Kernel,
    /// Per time index `0..N`.
    pub q: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub r11: Vec<f64>,
    pub r12: Vec<f64>,
    pub r21: Vec<f64>,
    pub r22: Vec<f64>,
    pub g: f64,
    /// Per time index `0..=N`.
    pub phi1: Vec<f64>,
    pub l: Kernel,
}

impl DeterministicGameSpec {
    /// All coefficients zero except `R = diag(1, -1)`.
    pub fn new(tree: &ScenarioTree) -> Self {
        let n = tree.steps();
        let z = Kernel::zero(tree);
        Self {
            tree: *tree,
            b1: z.clone(),
            b2: z.clone(),
            c1: z.clone(),
            c2: z.clone(),
            q: vec![0.0; n],
            s1: vec![0.0; n],
            s2: vec![0.0; n],
            r11: vec![1.0; n],
            r12: vec![0.0; n],
            r21: vec![0.0; n],
            r22: vec![-1.0; n],
            g: 0.0,
            phi1: vec![0.0; n + 1],
            l: z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tree.steps();
        for (name, k) in [("B1", &self.b1), ("B2", &self.b2), ("C1", &self.c1), ("C2", &self.c2), ("l", &self.l)] {
            k.check_tree(&self.tree)?;
            if !k.is_deterministic() {
                return invalid(format!("kernel {name} must be deterministic"));
            }
        }
        for (name, v) in [
            ("Q", &self.q),
            ("S1", &self.s1),
            ("S2", &self.s2),
            ("R11", &self.r11),
            ("R12", &self.r12),
            ("R21", &self.r21),
            ("R22", &self.r22),
        ] {
            if v.len() != n {
                return invalid(format!("{name} needs {n} values, got {}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return invalid(format!("{name} has non-finite values"));
            }
        }
        if self.phi1.len() != n + 1 || self.phi1.iter().any(|x| !x.is_finite()) {
            return invalid(format!("phi1 needs {} finite values", n + 1));
        }
        if !self.g.is_finite() {
            return invalid("G must be finite");
        }
        Ok(())
    }

    pub fn u2_is_zero(&self) -> bool {
        self.b2.is_zero() && self.c2.is_zero()
    }

    /// `U1(a, b) = (B1, C1)(a, b)` for `a > b`, zero otherwise.
    pub fn u1(&self, a: usize, b: usize) -> RowVector2<f64> {
        if a > b {
            RowVector2::new(self.b1.det(a, b), self.c1.det(a, b))
        } else {
            RowVector2::zeros()
        }
    }

    pub fn u2(&self, a: usize, b: usize) -> RowVector2<f64> {
        if a > b {
            RowVector2::new(self.b2.det(a, b), self.c2.det(a, b))
        } else {
            RowVector2::zeros()
        }
    }

    fn l_at(&self, a: usize, b: usize) -> f64 {
        if a > b {
            self.l.det(a, b)
        } else {
            0.0
        }
    }

    pub fn s(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.s1[i], self.s2[i])
    }

    /// Symmetric control weight at time index `i`.
    pub fn r_sym(&self, i: usize) -> Matrix2<f64> {
        let c = 0.5 * (self.r12[i] + self.r21[i]);
        Matrix2::new(self.r11[i], c, c, self.r22[i])
    }

    pub fn r_inverse(&self) -> Result<Vec<Matrix2<f64>>> {
        (0..self.tree.steps())
            .map(|i| {
                let r = self.r_sym(i);
                let w = invert_weight(r[(0, 0)], r[(0, 1)], r[(1, 1)], WEIGHT_DET_TOL, i, 0)?;
                Ok(Matrix2::new(w.m11, w.m12, w.m12, w.m22))
            })
            .collect()
    }

    /// `phi` on the tree, including `phi(T)`.
    pub fn phi_process(&self) -> Result<AdaptedProcess> {
        let ones = AdaptedProcess::constant(&self.tree, 1.0);
        let noise = causal_apply(&Kernel::zero(&self.tree), &self.l, &ones)?;
        let base = AdaptedProcess::from_fn_with_terminal(&self.tree, |i, _| self.phi1[i]);
        Ok(base.add(&noise))
    }

    /// The same game as a general spec.
    pub fn to_game_spec(&self) -> Result<GameSpec> {
        self.validate()?;
        let t = &self.tree;
        let per_time = |v: &[f64]| AdaptedProcess::from_fn(t, |i, _| v[i]);
        let mut spec = GameSpec::zero(t);
        spec.b1 = self.b1.clone();
        spec.b2 = self.b2.clone();
        spec.c1 = self.c1.clone();
        spec.c2 = self.c2.clone();
        spec.q = per_time(&self.q);
        spec.s1 = per_time(&self.s1);
        spec.s2 = per_time(&self.s2);
        spec.r11 = per_time(&self.r11);
        spec.r12 = per_time(&self.r12);
        spec.r21 = per_time(&self.r21);
        spec.r22 = per_time(&self.r22);
        spec.g = TerminalVariable::constant(t, self.g);
        spec.phi = self.phi_process()?;
        Ok(spec)
    }
}

/// Deterministic `2 x 2` matrices on the `N x N` grid of time indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaTable {
    n: usize,
    data: Vec<Matrix2<f64>>,
}

impl SigmaTable {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Matrix2::zeros(); n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> Matrix2<f64>) -> Self {
        Self {
            n,
            data: (0..n * n).map(|c| f(c / n, c % n)).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, k: usize) -> Matrix2<f64> {
        self.data[i * self.n + k]
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_fn(self.n, |i, k| self.at(i, k) + other.at(i, k))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_fn(self.n, |i, k| self.at(i, k) - other.at(i, k))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }

    /// Entry `(r, c)` of every matrix as an `N x N` grid.
    pub fn entry_grid(&self, r: usize, c: usize) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|k| self.at(i, k)[(r, c)]).collect()).collect()
    }
}

/// Coefficients of the backward Fredholm-Volterra equation for `lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaCoefficients {
    pub tree: ScenarioTree,
    /// Two components of the free term.
    pub sigma1: (AdaptedProcess, AdaptedProcess),
    pub sigma2: SigmaTable,
    pub sigma3: SigmaTable,
    pub sigma4: SigmaTable,
    pub sigma5: SigmaTable,
    pub sigma6: SigmaTable,
    /// Diagonal coefficient, one matrix per time index.
    pub sigma7: Vec<Matrix2<f64>>,
    pub sigma8: SigmaTable,
    pub sigma9: SigmaTable,
    pub sigma2_p: SigmaTable,
    pub sigma3_p: SigmaTable,
    pub sigma5_p: SigmaTable,
    pub sigma6_p: SigmaTable,
    pub sigma2_pp: SigmaTable,
    pub sigma9_pp: SigmaTable,
    pub u2_zero: bool,
}

impl SigmaCoefficients {
    /// Every coefficient zero; fill the fields and call [`Self::recombine`].
    pub fn zeros(tree: &ScenarioTree) -> Self {
        let n = tree.steps();
        let z = SigmaTable::zeros(n);
        Self {
            tree: *tree,
            sigma1: (AdaptedProcess::zeros(tree), AdaptedProcess::zeros(tree)),
            sigma2: z.clone(),
            sigma3: z.clone(),
            sigma4: z.clone(),
            sigma5: z.clone(),
            sigma6: z.clone(),
            sigma7: vec![Matrix2::zeros(); n],
            sigma8: z.clone(),
            sigma9: z.clone(),
            sigma2_p: z.clone(),
            sigma3_p: z.clone(),
            sigma5_p: z.clone(),
            sigma6_p: z.clone(),
            sigma2_pp: z.clone(),
            sigma9_pp: z,
            u2_zero: true,
        }
    }

    /// Recomputes the primed and double-primed combinations.
    pub fn recombine(&mut self) {
        self.sigma2_p = self.sigma2.add(&self.sigma9);
        self.sigma3_p = self.sigma3.add(&self.sigma8);
        self.sigma5_p = self.sigma5.sub(&self.sigma9);
        self.sigma6_p = self.sigma6.sub(&self.sigma8);
        self.sigma2_pp = self.sigma2.add(&self.sigma5);
        self.sigma9_pp = self.sigma9.sub(&self.sigma5);
    }

    /// True when the free term is the same at every node of each level.
    pub fn sigma1_is_deterministic(&self) -> bool {
        let flat = |p: &AdaptedProcess| (0..self.tree.steps()).all(|i| p.level(i).iter().all(|v| *v == p.at(i, 0)));
        flat(&self.sigma1.0) && flat(&self.sigma1.1)
    }

    fn sigma1_at(&self, i: usize, a: usize) -> Vector2<f64> {
        Vector2::new(self.sigma1.0.at(i, a), self.sigma1.1.at(i, a))
    }
}

pub fn assemble_sigma(spec: &DeterministicGameSpec) -> Result<SigmaCoefficients> {
    spec.validate()?;
    let tree = spec.tree;
    let n = tree.steps();
    let dt = tree.dt();
    let rinv = spec.r_inverse()?;
    let g = spec.g;
    let q = &spec.q;
    let (u1, u2) = (|a, b| spec.u1(a, b), |a, b| spec.u2(a, b));
    // sum_{j > from} U(j,i)^T Q(j) V(j,k) dt
    let qsum = |from: usize, i: usize, k: usize, left: &dyn Fn(usize, usize) -> RowVector2<f64>, right: &dyn Fn(usize, usize) -> RowVector2<f64>| {
        let mut m = Matrix2::zeros();
        for j in from + 1..n {
            m += left(j, i).transpose() * right(j, k) * (q[j] * dt);
        }
        m
    };

    let sigma2 = SigmaTable::from_fn(n, |i, k| -g * u1(n, i).transpose() * u1(n, k) * rinv[k]);
    let sigma3 = SigmaTable::from_fn(n, |i, k| -g * u1(n, i).transpose() * u2(n, k) * rinv[k]);
    let sigma4 = SigmaTable::from_fn(n, |i, k| {
        (-g * u2(n, i).transpose() * u1(n, k) - u2(k, i).transpose() * spec.s(k).transpose() - qsum(k, i, k, &u2, &u1))
            * rinv[k]
    });
    let sigma5 = SigmaTable::from_fn(n, |i, k| {
        (-qsum(k, i, k, &u1, &u1) - u1(k, i).transpose() * spec.s(k).transpose()) * rinv[k]
    });
    let sigma6 = SigmaTable::from_fn(n, |i, k| -qsum(k, i, k, &u1, &u2) * rinv[k]);
    let sigma7 = (0..n)
        .map(|i| (-g * u2(n, i).transpose() * u2(n, i) - qsum(i, i, i, &u2, &u2)) * rinv[i])
        .collect();
    let sigma8 = SigmaTable::from_fn(n, |i, k| (-qsum(i, i, k, &u1, &u2) - spec.s(i) * u2(i, k)) * rinv[k]);
    let sigma9 = SigmaTable::from_fn(n, |i, k| (-qsum(i, i, k, &u1, &u1) - spec.s(i) * u1(i, k)) * rinv[k]);

    let phi = spec.phi_process()?;
    let cond: Vec<Vec<Vec<f64>>> = (0..=n).map(|j| condition_all(phi.level(j), j)).collect();
    let mut s1a = AdaptedProcess::zeros(&tree);
    let mut s1b = AdaptedProcess::zeros(&tree);
    for i in 0..n {
        for a in 0..tree.level_size(i) {
            let mut v = spec.s(i) * phi.at(i, a)
                + u1(n, i).transpose() * (g * cond[n][i][a])
                + u2(n, i).transpose() * (g * spec.l_at(n, i));
            for j in i + 1..n {
                v += (u1(j, i).transpose() * (q[j] * cond[j][i][a]) + u2(j, i).transpose() * (q[j] * spec.l_at(j, i))) * dt;
            }
            s1a.set(i, a, v[0]);
            s1b.set(i, a, v[1]);
        }
    }

    let mut out = SigmaCoefficients {
        tree,
        sigma1: (s1a, s1b),
        sigma2,
        sigma3,
        sigma4,
        sigma5,
        sigma6,
        sigma7,
        sigma8,
        sigma9,
        u2_zero: spec.u2_is_zero(),
        ..SigmaCoefficients::zeros(&tree)
    };
    out.recombine();
    Ok(out)
}

/// Value of a two-component process at `(i, a)`.
fn pair_at(l: &(AdaptedProcess, AdaptedProcess), i: usize, a: usize) -> Vector2<f64> {
    Vector2::new(l.0.at(i, a), l.1.at(i, a))
}

/// Conditional expectations `E^{F_i} lambda(k)` and `E^{F_i}[lambda(k) dW(k)]`
/// for every pair of levels.
struct Conditioned {
    /// `mean[c][k][i]`: component `c`, variable level `k`, conditioned to `i <= k`.
    mean: [Vec<Vec<Vec<f64>>>; 2],
    /// `noise[c][k][i]`: `lambda(k) dW(k)` (level `k+1`) conditioned to `i <= k+1`.
    noise: [Vec<Vec<Vec<f64>>>; 2],
}

impl Conditioned {
    fn new(l: &(AdaptedProcess, AdaptedProcess)) -> Self {
        let tree = *l.0.tree();
        let n = tree.steps();
        let build = |p: &AdaptedProcess| {
            let mean: Vec<_> = (0..n).map(|k| condition_all(p.level(k), k)).collect();
            let noise: Vec<_> = (0..n)
                .map(|k| {
                    let w: Vec<f64> = (0..tree.level_size(k + 1))
                        .map(|c| p.at(k, c >> 1) * ScenarioTree::branch_sign(c) * tree.sqrt_dt())
                        .collect();
                    condition_all(&w, k + 1)
                })
                .collect();
            (mean, noise)
        };
        let (m0, w0) = build(&l.0);
        let (m1, w1) = build(&l.1);
        Self {
            mean: [m0, m1],
            noise: [w0, w1],
        }
    }

    /// `E^{F_i} lambda(k)` at node `a` of level `i`.
    fn mean(&self, k: usize, i: usize, a: usize) -> Vector2<f64> {
        if k <= i {
            let b = a >> (i - k);
            Vector2::new(self.mean[0][k][k][b], self.mean[1][k][k][b])
        } else {
            Vector2::new(self.mean[0][k][i][a], self.mean[1][k][i][a])
        }
    }

    /// `E^{F_i}[lambda(k) dW(k)]` at node `a` of level `i`.
    fn noise(&self, k: usize, i: usize, a: usize) -> Vector2<f64> {
        if k < i {
            let b = a >> (i - k - 1);
            Vector2::new(self.noise[0][k][k + 1][b], self.noise[1][k][k + 1][b])
        } else {
            Vector2::new(self.noise[0][k][i][a], self.noise[1][k][i][a])
        }
    }
}

/// Sup over `(time, node)` of the residual of the full backward
/// Fredholm-Volterra equation, with `pi` the M-decomposition of `lambda`.
pub fn bsfvie_residual(sigma: &SigmaCoefficients, lambda1: &AdaptedProcess, lambda2: &AdaptedProcess) -> f64 {
    let tree = sigma.tree;
    let n = tree.steps();
    let dt = tree.dt();
    let lam = (lambda1.clone(), lambda2.clone());
    let pi = (m_decompose(lambda1), m_decompose(lambda2));
    let pi_at = |k: usize, i: usize, a: usize| Vector2::new(pi.0.at(k, i, a), pi.1.at(k, i, a));
    let c = Conditioned::new(&lam);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for a in 0..tree.level_size(i) {
            let mut rhs = sigma.sigma1_at(i, a) + sigma.sigma7[i] * pair_at(&lam, i, a);
            for k in 0..n {
                rhs += sigma.sigma2.at(i, k) * c.mean(k, i, a) * dt + sigma.sigma3.at(i, k) * c.noise(k, i, a);
                if k > i {
                    rhs += sigma.sigma4.at(i, k) * pi_at(k, i, a) * dt;
                }
                if k >= i {
                    rhs += sigma.sigma5.at(i, k) * c.mean(k, i, a) * dt + sigma.sigma6.at(i, k) * c.noise(k, i, a);
                } else {
                    rhs += sigma.sigma8.at(i, k) * c.noise(k, i, a) + sigma.sigma9.at(i, k) * c.mean(k, i, a) * dt;
                }
            }
            worst = worst.max((pair_at(&lam, i, a) - rhs).amax());
        }
    }
    worst
}

/// Same equation written with the primed combinations.
pub fn bsfvie_residual_primed(sigma: &SigmaCoefficients, lambda1: &AdaptedProcess, lambda2: &AdaptedProcess) -> f64 {
    let tree = sigma.tree;
    let n = tree.steps();
    let dt = tree.dt();
    let lam = (lambda1.clone(), lambda2.clone());
    let pi = (m_decompose(lambda1), m_decompose(lambda2));
    let pi_at = |k: usize, i: usize, a: usize| Vector2::new(pi.0.at(k, i, a), pi.1.at(k, i, a));
    let c = Conditioned::new(&lam);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for a in 0..tree.level_size(i) {
            let mut rhs = sigma.sigma1_at(i, a) + sigma.sigma7[i] * pair_at(&lam, i, a);
            for k in 0..n {
                rhs += sigma.sigma2_p.at(i, k) * c.mean(k, i, a) * dt + sigma.sigma3_p.at(i, k) * c.noise(k, i, a);
                if k > i {
                    rhs += sigma.sigma4.at(i, k) * pi_at(k, i, a) * dt;
                }
                if k >= i {
                    rhs += sigma.sigma5_p.at(i, k) * c.mean(k, i, a) * dt + sigma.sigma6_p.at(i, k) * c.noise(k, i, a);
                }
            }
            worst = worst.max((pair_at(&lam, i, a) - rhs).amax());
        }
    }
    worst
}

/// Sup residual of the forward equation
/// `lambda = Sigma1 + E^{F_t} int_0^T Sigma2'' lambda ds + int_0^t Sigma9'' lambda ds`.
pub fn sfvie_residual(sigma: &SigmaCoefficients, lambda1: &AdaptedProcess, lambda2: &AdaptedProcess) -> f64 {
    let tree = sigma.tree;
    let n = tree.steps();
    let dt = tree.dt();
    let lam = (lambda1.clone(), lambda2.clone());
    let c = Conditioned::new(&lam);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for a in 0..tree.level_size(i) {
            let mut rhs = sigma.sigma1_at(i, a);
            for k in 0..n {
                rhs += sigma.sigma2_pp.at(i, k) * c.mean(k, i, a) * dt;
                if k < i {
                    rhs += sigma.sigma9_pp.at(i, k) * c.mean(k, i, a) * dt;
                }
            }
            worst = worst.max((pair_at(&lam, i, a) - rhs).amax());
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SfvieMode {
    /// One unknown pair per tree node.
    #[default]
    Tree,
    /// One unknown pair per time index; needs a deterministic free term.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SfvieSolution {
    pub lambda1: AdaptedProcess,
    pub lambda2: AdaptedProcess,
    /// One-norm condition number of the discretized system.
    pub condition: f64,
    pub residual: f64,
    pub mode: SfvieMode,
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn dense_solve(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let norm = one_norm(&m);
    let inv = m.lu().try_inverse().ok_or(Error::SingularSystem {
        condition: f64::INFINITY,
    })?;
    let condition = norm * one_norm(&inv);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularSystem { condition });
    }
    Ok((inv * rhs, condition))
}

/// Solves the forward Fredholm-Volterra equation for `lambda` when `U2 = 0`.
pub fn solve_sfvie(sigma: &SigmaCoefficients, mode: SfvieMode) -> Result<SfvieSolution> {
    if !sigma.u2_zero {
        return Err(Error::Unsupported(
            "the forward Fredholm-Volterra reduction needs U2 = 0".into(),
        ));
    }
    let tree = sigma.tree;
    let n = tree.steps();
    let dt = tree.dt();
    let (lambda1, lambda2, condition) = match mode {
        SfvieMode::Deterministic => {
            if !sigma.sigma1_is_deterministic() {
                return invalid("deterministic mode needs a deterministic free term (l = 0)");
            }
            let mut m = DMatrix::identity(2 * n, 2 * n);
            let mut rhs = DVector::zeros(2 * n);
            for i in 0..n {
                rhs[2 * i] = sigma.sigma1.0.at(i, 0);
                rhs[2 * i + 1] = sigma.sigma1.1.at(i, 0);
                for k in 0..n {
                    let mut c = sigma.sigma2_pp.at(i, k) * dt;
                    if k < i {
                        c += sigma.sigma9_pp.at(i, k) * dt;
                    }
                    for (r, s) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        m[(2 * i + r, 2 * k + s)] -= c[(r, s)];
                    }
                }
            }
            let (x, condition) = dense_solve(m, &rhs)?;
            (
                AdaptedProcess::from_fn(&tree, |i, _| x[2 * i]),
                AdaptedProcess::from_fn(&tree, |i, _| x[2 * i + 1]),
                condition,
            )
        }
        SfvieMode::Tree => {
            check_dense(&tree)?;
            let d = tree.process_dim();
            let idx = |i: usize, a: usize| 2 * (ScenarioTree::offset(i) + a);
            let mut m = DMatrix::identity(2 * d, 2 * d);
            let mut rhs = DVector::zeros(2 * d);
            for i in 0..n {
                for a in 0..tree.level_size(i) {
                    let row = idx(i, a);
                    rhs[row] = sigma.sigma1.0.at(i, a);
                    rhs[row + 1] = sigma.sigma1.1.at(i, a);
                    let mut put = |col: usize, c: Matrix2<f64>| {
                        for (r, s) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            m[(row + r, col + s)] -= c[(r, s)];
                        }
                    };
                    for k in 0..n {
                        let c2 = sigma.sigma2_pp.at(i, k) * dt;
                        if k <= i {
                            let b = a >> (i - k);
                            let mut c = c2;
                            if k < i {
                                c += sigma.sigma9_pp.at(i, k) * dt;
                            }
                            put(idx(k, b), c);
                        } else {
                            let span = 1usize << (k - i);
                            let w = c2 / span as f64;
                            for b in a * span..(a + 1) * span {
                                put(idx(k, b), w);
                            }
                        }
                    }
                }
            }
            let (x, condition) = dense_solve(m, &rhs)?;
            (
                AdaptedProcess::from_fn(&tree, |i, a| x[idx(i, a)]),
                AdaptedProcess::from_fn(&tree, |i, a| x[idx(i, a) + 1]),
                condition,
            )
        }
    };
    let residual = sfvie_residual(sigma, &lambda1, &lambda2);
    Ok(SfvieSolution {
        lambda1,
        lambda2,
        condition,
        residual,
        mode,
    })
}

/// `u = -R^{-1} lambda` pointwise.
pub fn saddle_from_lambda(
    spec: &DeterministicGameSpec,
    lambda1: &AdaptedProcess,
    lambda2: &AdaptedProcess,
) -> Result<(AdaptedProcess, AdaptedProcess)> {
    let rinv = spec.r_inverse()?;
    let u = |c: usize| {
        AdaptedProcess::from_fn(&spec.tree, |i, a| {
            -(rinv[i] * Vector2::new(lambda1.at(i, a), lambda2.at(i, a)))[c]
        })
    };
    Ok((u(0), u(1)))
}

/// Residuals of the representation identities for the terminal integrand
/// `theta` of `G X(T)` and the integrand `K` of `X`, under `u = -R^{-1} lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RepresentationCheck {
    pub theta: f64,
    pub k: f64,
}

pub fn representation_check(
    spec: &DeterministicGameSpec,
    lambda1: &AdaptedProcess,
    lambda2: &AdaptedProcess,
) -> Result<RepresentationCheck> {
    let tree = spec.tree;
    let n = tree.steps();
    let dt = tree.dt();
    let rinv = spec.r_inverse()?;
    let (u1, u2) = saddle_from_lambda(spec, lambda1, lambda2)?;
    let game = spec.to_game_spec()?;
    let fwd = solve_forward_svie(&game, &u1, &u2)?;
    let (_, theta) = fwd.x_terminal.map(|v| spec.g * v).martingale_representation();
    let k_surface = m_decompose(&fwd.x);
    let pi = (m_decompose(lambda1), m_decompose(lambda2));
    let lam = |i: usize, a: usize| Vector2::new(lambda1.at(i, a), lambda2.at(i, a));
    let pi_at = |k: usize, i: usize, a: usize| Vector2::new(pi.0.at(k, i, a), pi.1.at(k, i, a));
    // sum_{s<k<t} U1(t,k) R^{-1}(k) pi(k,s) dt + U2(t,s) R^{-1}(s) lambda(s) - l(t,s)
    let integrand = |t: usize, s: usize, a: usize| {
        let mut v = -(spec.u2(t, s) * rinv[s] * lam(s, a))[0] + spec.l_at(t, s);
        for k in s + 1..t {
            v -= (spec.u1(t, k) * rinv[k] * pi_at(k, s, a))[0] * dt;
        }
        v
    };
    let mut theta_res: f64 = 0.0;
    for s in 0..n {
        for a in 0..tree.level_size(s) {
            theta_res = theta_res.max((theta.at(s, a) - spec.g * integrand(n, s, a)).abs());
        }
    }
    let mut k_res: f64 = 0.0;
    for t in 1..n {
        for s in 0..t {
            for a in 0..tree.level_size(s) {
                k_res = k_res.max((k_surface.at(t, s, a) - integrand(t, s, a)).abs());
            }
        }
    }
    Ok(RepresentationCheck {
        theta: theta_res,
        k: k_res,
    })
}

/// `pi`, the M-decomposition of both components of `lambda`.
pub fn lambda_integrands(lambda1: &AdaptedProcess, lambda2: &AdaptedProcess) -> (TwoTimeSurface, TwoTimeSurface) {
    (m_decompose(lambda1), m_decompose(lambda2))
}
