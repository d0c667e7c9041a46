//! The quadratic form of the game in the control variable,
//! `J(u) = <Theta u, u> + 2 <Theta1 phi, u> + c`, its saddle-point
//! conditions, and the backward-equation routes to `Theta`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bsvie::{adjoint_terminal, lambda_process, solve_linear_bsvie, FreeTerm};
use crate::error::{Error, Result};
use crate::forward::{
    assemble_causal_operator, assemble_terminal_operator, check_dense, resolvent_solve,
    resolvent_solve_matrix, solve_forward_svie, unweighted, weighted, weighted_terminal,
    evaluate_cost, GameSpec,
};
use crate::tree::{inner_product_process, AdaptedProcess, ScenarioTree, TerminalVariable};

/// `Theta`, `Theta1 phi` and the control-free part of the cost, in weighted
/// coordinates. Control vectors stack `u1` over `u2`.
#[derive(Clone, Debug)]
pub struct ThetaAssembly {
    tree: ScenarioTree,
    pub theta: DMatrix<f64>,
    pub theta1_phi: DVector<f64>,
    pub constant: f64,
}

impl ThetaAssembly {
    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    /// Dimension of one player's control space.
    pub fn player_dim(&self) -> usize {
        self.tree.process_dim()
    }

    pub fn block(&self, r: usize, c: usize) -> DMatrix<f64> {
        let d = self.player_dim();
        self.theta.view((r * d, c * d), (d, d)).into_owned()
    }

    pub fn theta11(&self) -> DMatrix<f64> {
        self.block(0, 0)
    }

    pub fn theta22(&self) -> DMatrix<f64> {
        self.block(1, 1)
    }

    /// Relative asymmetry `||Theta - Theta^T|| / ||Theta||` (Frobenius).
    pub fn asymmetry(&self) -> f64 {
        let n = self.theta.norm();
        if n == 0.0 {
            0.0
        } else {
            (&self.theta - self.theta.transpose()).norm() / n
        }
    }

    /// `J` evaluated through the quadratic form.
    pub fn cost(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.theta * u)) + 2.0 * u.dot(&self.theta1_phi) + self.constant
    }

    pub fn stack(&self, u1: &AdaptedProcess, u2: &AdaptedProcess) -> DVector<f64> {
        stack_controls(u1, u2)
    }

    pub fn split(&self, v: &DVector<f64>) -> (AdaptedProcess, AdaptedProcess) {
        split_controls(&self.tree, v)
    }
}

pub fn stack_controls(u1: &AdaptedProcess, u2: &AdaptedProcess) -> DVector<f64> {
    let a = weighted(u1);
    let b = weighted(u2);
    let d = a.len();
    DVector::from_fn(2 * d, |r, _| if r < d { a[r] } else { b[r - d] })
}

pub fn split_controls(tree: &ScenarioTree, v: &DVector<f64>) -> (AdaptedProcess, AdaptedProcess) {
    let d = tree.process_dim();
    (
        unweighted(tree, &v.rows(0, d).into_owned()),
        unweighted(tree, &v.rows(d, d).into_owned()),
    )
}

fn diag(p: &AdaptedProcess) -> DVector<f64> {
    DVector::from_column_slice(p.interior())
}

/// Scales row `r` of `m` by `w[r]`.
fn scale_rows(w: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        row *= w[r];
    }
    out
}

/// Builds `Theta` by composing the state map `u -> X` with the cost weights.
pub fn assemble_theta(spec: &GameSpec) -> Result<ThetaAssembly> {
    spec.validate()?;
    let tree = *spec.tree();
    check_dense(&tree)?;
    let d = tree.process_dim();

    let a = assemble_causal_operator(&spec.a1, &spec.a2, &tree)?.matrix;
    let b = assemble_causal_operator(&spec.b1, &spec.b2, &tree)?.matrix;
    let c = assemble_causal_operator(&spec.c1, &spec.c2, &tree)?.matrix;
    let delta_t = assemble_terminal_operator(&spec.a1, &spec.a2, &tree)?.matrix;
    let lambda_t = assemble_terminal_operator(&spec.b1, &spec.b2, &tree)?.matrix;
    let pi_t = assemble_terminal_operator(&spec.c1, &spec.c2, &tree)?.matrix;

    let mut u = DMatrix::zeros(d, 2 * d);
    u.view_mut((0, 0), (d, d)).copy_from(&b);
    u.view_mut((0, d), (d, d)).copy_from(&c);
    let mut gamma = DMatrix::zeros(tree.leaves(), 2 * d);
    gamma.view_mut((0, 0), (tree.leaves(), d)).copy_from(&lambda_t);
    gamma.view_mut((0, d), (tree.leaves(), d)).copy_from(&pi_t);

    let m_x = resolvent_solve_matrix(&a, &u);
    let m_t = &delta_t * &m_x + gamma;

    let q = diag(&spec.q);
    let g = DVector::from_column_slice(spec.g.values());
    let mut s = DMatrix::zeros(2 * d, d);
    for r in 0..d {
        s[(r, r)] = spec.s1.interior()[r];
        s[(d + r, r)] = spec.s2.interior()[r];
    }
    let r_cross = spec.r_cross();
    let mut r = DMatrix::zeros(2 * d, 2 * d);
    for k in 0..d {
        r[(k, k)] = spec.r11.interior()[k];
        r[(d + k, d + k)] = spec.r22.interior()[k];
        r[(k, d + k)] = r_cross.interior()[k];
        r[(d + k, k)] = r_cross.interior()[k];
    }

    let s_mx = &s * &m_x;
    let theta = m_x.transpose() * scale_rows(&q, &m_x)
        + &s_mx
        + s_mx.transpose()
        + r
        + m_t.transpose() * scale_rows(&g, &m_t);

    let x_phi = resolvent_solve(&a, &weighted(&spec.phi.without_terminal()));
    let xt_phi = &delta_t * &x_phi + weighted_terminal(&spec.phi_terminal());
    let q_x = q.component_mul(&x_phi);
    let g_xt = g.component_mul(&xt_phi);
    let theta1_phi = m_x.transpose() * &q_x + &s * &x_phi + m_t.transpose() * &g_xt;
    let constant = x_phi.dot(&q_x) + xt_phi.dot(&g_xt);

    Ok(ThetaAssembly {
        tree,
        theta,
        theta1_phi,
        constant,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SaddleOptions {
    /// Relative tolerance for the sign checks and for range membership.
    pub condition_tol: f64,
    /// Eigenvalues with `|lambda| <= truncation * ||Theta||` count as kernel.
    pub truncation: f64,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            condition_tol: 1e-9,
            truncation: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Conditions {
    pub theta11_min_eigenvalue: f64,
    pub theta22_max_eigenvalue: f64,
    /// `||Theta u* + Theta1 phi|| / ||Theta1 phi||` at the least-squares `u*`.
    pub range_residual: f64,
    pub theta11_nonnegative: bool,
    pub theta22_nonpositive: bool,
    pub in_range: bool,
}

impl Conditions {
    pub fn all_hold(&self) -> bool {
        self.theta11_nonnegative && self.theta22_nonpositive && self.in_range
    }
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn spectral_norm(eig: &DVector<f64>) -> f64 {
    eig.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix by spectral truncation;
/// returns the inverse and the dimension of the numerical kernel.
pub fn pseudo_inverse(m: &DMatrix<f64>, truncation: f64) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(symmetric_part(m));
    let cut = truncation * spectral_norm(&eig.eigenvalues);
    let mut inv_vals = eig.eigenvalues.clone();
    let mut kernel = 0;
    for v in inv_vals.iter_mut() {
        if v.abs() <= cut {
            *v = 0.0;
            kernel += 1;
        } else {
            *v = 1.0 / *v;
        }
    }
    let vecs = &eig.eigenvectors;
    let inv = vecs * DMatrix::from_diagonal(&inv_vals) * vecs.transpose();
    (inv, kernel)
}

fn extreme_eigenvalue(m: &DMatrix<f64>, min: bool) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(symmetric_part(m));
    let norm = spectral_norm(&eig.eigenvalues);
    let v = if min { eig.eigenvalues.min() } else { eig.eigenvalues.max() };
    (v, norm)
}

fn relative_residual(theta: &DMatrix<f64>, u: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
    let r = (theta * u + rhs).norm();
    let b = rhs.norm();
    if b == 0.0 {
        if r == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        r / b
    }
}

/// Evaluates the three saddle-point conditions.
pub fn check_conditions(assembly: &ThetaAssembly, options: &SaddleOptions) -> Conditions {
    let (min11, n11) = extreme_eigenvalue(&assembly.theta11(), true);
    let (max22, n22) = extreme_eigenvalue(&assembly.theta22(), false);
    let (pinv, _) = pseudo_inverse(&assembly.theta, options.truncation);
    let u = -(&pinv * &assembly.theta1_phi);
    let range_residual = relative_residual(&assembly.theta, &u, &assembly.theta1_phi);
    Conditions {
        theta11_min_eigenvalue: min11,
        theta22_max_eigenvalue: max22,
        range_residual,
        theta11_nonnegative: min11 >= -options.condition_tol * n11,
        theta22_nonpositive: max22 <= options.condition_tol * n22,
        in_range: range_residual <= options.condition_tol,
    }
}

/// Perturbation margins around a candidate saddle point.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Margins {
    /// `J(u1, u2_hat) - J(u1_hat, u2_hat)` per perturbation of player 1.
    pub minimizer: Vec<f64>,
    /// `J(u1_hat, u2_hat) - J(u1_hat, u2)` per perturbation of player 2.
    pub maximizer: Vec<f64>,
}

impl Margins {
    pub fn min(&self) -> f64 {
        self.minimizer
            .iter()
            .chain(&self.maximizer)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.minimizer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minimizer.is_empty()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SaddleReport {
    pub conditions: Conditions,
    pub u1: AdaptedProcess,
    pub u2: AdaptedProcess,
    pub kernel_dimension: usize,
    pub unique: bool,
    /// Residual `||Theta u + Theta1 phi||` at the returned control.
    pub stationarity_residual: f64,
    pub margins: Margins,
}

/// `u = -Theta^+ Theta1 phi`. Fails with [`Error::NoSaddle`] when
/// `Theta1 phi` is outside the range of `Theta`; the sign conditions are
/// reported but not enforced.
pub fn solve_saddle(assembly: &ThetaAssembly, options: &SaddleOptions) -> Result<SaddleReport> {
    let conditions = check_conditions(assembly, options);
    if !conditions.in_range {
        return Err(Error::NoSaddle {
            residual: conditions.range_residual,
        });
    }
    let (pinv, kernel_dimension) = pseudo_inverse(&assembly.theta, options.truncation);
    let u = -(&pinv * &assembly.theta1_phi);
    let (u1, u2) = assembly.split(&u);
    Ok(SaddleReport {
        stationarity_residual: (&assembly.theta * &u + &assembly.theta1_phi).norm(),
        conditions,
        u1,
        u2,
        kernel_dimension,
        unique: kernel_dimension == 0,
        margins: Margins::default(),
    })
}

/// Uniform random perturbation in `[-scale, scale]` at every node.
pub fn random_process(tree: &ScenarioTree, rng: &mut impl Rng, scale: f64) -> AdaptedProcess {
    let mut p = AdaptedProcess::zeros(tree);
    for i in 0..tree.steps() {
        for v in p.level_mut(i) {
            *v = scale * rng.random_range(-1.0..=1.0);
        }
    }
    p
}

/// Draws `n` seeded perturbations per player and evaluates the saddle
/// inequalities through the state equation and the cost.
pub fn verify_saddle(
    spec: &GameSpec,
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
    n: usize,
    seed: u64,
) -> Result<Margins> {
    verify_saddle_scaled(spec, u1, u2, n, seed, 1.0)
}

pub fn verify_saddle_scaled(
    spec: &GameSpec,
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
    n: usize,
    seed: u64,
    scale: f64,
) -> Result<Margins> {
    if n == 0 {
        return crate::error::invalid("at least one perturbation is required");
    }
    let tree = *spec.tree();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j_hat = evaluate_cost(spec, u1, u2)?;
    let mut margins = Margins::default();
    for _ in 0..n {
        let d1 = random_process(&tree, &mut rng, scale);
        let d2 = random_process(&tree, &mut rng, scale);
        margins.minimizer.push(evaluate_cost(spec, &u1.add(&d1), u2)? - j_hat);
        margins.maximizer.push(j_hat - evaluate_cost(spec, u1, &u2.add(&d2))?);
    }
    Ok(margins)
}

/// Eigenvector of `Theta11` for its most negative eigenvalue, when that
/// eigenvalue is below `-threshold`. Moving player 1 along it lowers `J`.
pub fn negative_direction(assembly: &ThetaAssembly, threshold: f64) -> Option<(f64, AdaptedProcess)> {
    let eig = SymmetricEigen::new(symmetric_part(&assembly.theta11()));
    let (idx, &val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    if val > -threshold {
        return None;
    }
    let v = eig.eigenvectors.column(idx).into_owned();
    Some((val, unweighted(&assembly.tree, &v)))
}

/// The backward-equation route to `Theta`: given the state driven by
/// `(u1, u2)` with forcing `phi`, returns the backward solution data.
struct AdjointState {
    x: AdaptedProcess,
    eta: TerminalVariable,
    y: crate::bsvie::MSolution,
}

fn adjoint_state(
    spec: &GameSpec,
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
) -> Result<AdjointState> {
    let fwd = solve_forward_svie(spec, u1, u2)?;
    let eta = fwd
        .x_terminal
        .zip_map(&spec.g, |x, g| g * x);
    let mut psi = AdaptedProcess::zeros(spec.tree());
    let terminal = adjoint_terminal(&spec.a1, &spec.a2, &eta)?;
    for i in 0..spec.tree().steps() {
        for k in 0..spec.tree().level_size(i) {
            let v = spec.q.at(i, k) * fwd.x.at(i, k)
                + spec.s1.at(i, k) * u1.at(i, k)
                + spec.s2.at(i, k) * u2.at(i, k)
                + terminal.at(i, k);
            psi.set(i, k, v);
        }
    }
    let y = solve_linear_bsvie(&FreeTerm::adapted(&psi), &spec.a1, &spec.a2)?;
    Ok(AdjointState { x: fwd.x, eta, y })
}

fn zero_forcing(spec: &GameSpec) -> GameSpec {
    spec.with_phi(AdaptedProcess::zeros_with_terminal(spec.tree()))
}

/// `<Theta11 u1, u1>` computed from the decoupled forward-backward system
/// of player 1 (no matrices).
pub fn theta11_form_via_fbsvie(spec: &GameSpec, u1: &AdaptedProcess) -> Result<f64> {
    let spec0 = zero_forcing(spec);
    let zero = AdaptedProcess::zeros(spec.tree());
    let st = adjoint_state(&spec0, u1, &zero)?;
    let lambda = lambda_process(&st.y, &spec.b1, &spec.b2)?;
    let terminal = adjoint_terminal(&spec.b1, &spec.b2, &st.eta)?;
    let mut integrand = lambda.add(&terminal);
    integrand = integrand.add(&spec.s1.zip_map(&st.x, |s, x| s * x));
    integrand = integrand.add(&spec.r11.zip_map(u1, |r, u| r * u));
    inner_product_process(&integrand, u1)
}

/// `<Theta22 u2, u2>` from the decoupled system of player 2.
pub fn theta22_form_via_fbsvie(spec: &GameSpec, u2: &AdaptedProcess) -> Result<f64> {
    let spec0 = zero_forcing(spec);
    let zero = AdaptedProcess::zeros(spec.tree());
    let st = adjoint_state(&spec0, &zero, u2)?;
    let lambda = lambda_process(&st.y, &spec.c1, &spec.c2)?;
    let terminal = adjoint_terminal(&spec.c1, &spec.c2, &st.eta)?;
    let mut integrand = lambda.add(&terminal);
    integrand = integrand.add(&spec.s2.zip_map(&st.x, |s, x| s * x));
    integrand = integrand.add(&spec.r22.zip_map(u2, |r, u| r * u));
    inner_product_process(&integrand, u2)
}

/// `lambda + S X + R u + Xi1 E^F G X(T) + Xi2 theta`, which equals
/// `Theta u + Theta1 phi` in unweighted coordinates. Both components.
pub fn stationarity_residual(
    spec: &GameSpec,
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
) -> Result<(AdaptedProcess, AdaptedProcess)> {
    let st = adjoint_state(spec, u1, u2)?;
    let r_cross = spec.r_cross();
    let tree = *spec.tree();
    let mut out = Vec::with_capacity(2);
    for (k1, k2, s, r_own, r_other, own, other) in [
        (&spec.b1, &spec.b2, &spec.s1, &spec.r11, &r_cross, u1, u2),
        (&spec.c1, &spec.c2, &spec.s2, &spec.r22, &r_cross, u2, u1),
    ] {
        let lambda = lambda_process(&st.y, k1, k2)?;
        let terminal = adjoint_terminal(k1, k2, &st.eta)?;
        let p = AdaptedProcess::from_fn(&tree, |i, k| {
            lambda.at(i, k)
                + terminal.at(i, k)
                + s.at(i, k) * st.x.at(i, k)
                + r_own.at(i, k) * own.at(i, k)
                + r_other.at(i, k) * other.at(i, k)
        });
        out.push(p);
    }
    let r2 = out.pop().unwrap();
    let r1 = out.pop().unwrap();
    Ok((r1, r2))
}

/// `lambda` pair of the full system driven by `(u1, u2)`.
pub fn lambda_for_controls(
    spec: &GameSpec,
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
) -> Result<(AdaptedProcess, AdaptedProcess)> {
    let st = adjoint_state(spec, u1, u2)?;
    Ok((
        lambda_process(&st.y, &spec.b1, &spec.b2)?,
        lambda_process(&st.y, &spec.c1, &spec.c2)?,
    ))
}
