//! Stochastic delay dynamics with delayed controls, their transition
//! function, the equivalent Volterra form, and the explicit saddle point when
//! there is no cross weighting.

use serde::{Deserialize, Serialize};

use crate::bsvie::{adjoint_causal, adjoint_terminal};
use crate::error::{invalid, Error, Result};
use crate::fbsvie::{iterate, weighted_norm, FixedPointMap, FixedPointOptions, FixedPointReport, Residuals};
use crate::forward::{solve_forward_svie, GameSpec};
use crate::fredholm::DeterministicGameSpec;
use crate::kernel::Kernel;
use crate::profile::{Profile, Profile2};
use crate::tree::{AdaptedProcess, ScenarioTree, TwoTimeSurface};

fn one() -> Profile {
    Profile::constant(1.0)
}

fn minus_one() -> Profile {
    Profile::constant(-1.0)
}

/// `dX = [A1 X(t) + A2 X(t-h) + int_{t-h}^t A0(t,s) X(s) ds + B1 u1(t) + B2 u1(t-h)
///        + C1 u2(t) + C2 u2(t-h)] dt + D dW`, `X = k` on `[-h, 0]`,
/// with a quadratic cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    pub delay: f64,
    pub horizon: f64,
    #[serde(default)]
    pub a0: Profile2,
    #[serde(default)]
    pub a1: Profile,
    #[serde(default)]
    pub a2: Profile,
    #[serde(default)]
    pub b1: Profile,
    /// Treated as zero for `t < h`.
    #[serde(default)]
    pub b2: Profile,
    #[serde(default)]
    pub c1: Profile,
    /// Treated as zero for `t < h`.
    #[serde(default)]
    pub c2: Profile,
    #[serde(default)]
    pub d: Profile,
    /// Initial segment `k(t)`, `t` in `[-h, 0]`.
    #[serde(default)]
    pub initial: Profile,
    #[serde(default)]
    pub q: Profile,
    #[serde(default)]
    pub s1: Profile,
    #[serde(default)]
    pub s2: Profile,
    #[serde(default = "one")]
    pub r11: Profile,
    #[serde(default)]
    pub r12: Profile,
    #[serde(default)]
    pub r21: Profile,
    #[serde(default = "minus_one")]
    pub r22: Profile,
    #[serde(default)]
    pub g: f64,
}

impl DelaySpec {
    /// Zero dynamics and cost except `R = diag(1, -1)`.
    pub fn new(delay: f64, horizon: f64) -> Self {
        Self {
            delay,
            horizon,
            a0: Profile2::default(),
            a1: Profile::default(),
            a2: Profile::default(),
            b1: Profile::default(),
            b2: Profile::default(),
            c1: Profile::default(),
            c2: Profile::default(),
            d: Profile::default(),
            initial: Profile::default(),
            q: Profile::default(),
            s1: Profile::default(),
            s2: Profile::default(),
            r11: one(),
            r12: Profile::default(),
            r21: Profile::default(),
            r22: minus_one(),
            g: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay > 0.0 && self.delay.is_finite()) {
            return invalid("delay must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return invalid("horizon must be positive");
        }
        self.a0.validate()?;
        for p in [
            &self.a1, &self.a2, &self.b1, &self.b2, &self.c1, &self.c2, &self.d, &self.initial, &self.q, &self.s1,
            &self.s2, &self.r11, &self.r12, &self.r21, &self.r22,
        ] {
            p.validate()?;
        }
        if !self.g.is_finite() {
            return invalid("G must be finite");
        }
        Ok(())
    }

    fn before_delay(&self, t: f64) -> bool {
        t < self.delay * (1.0 - 1e-12)
    }

    pub fn b2_at(&self, t: f64) -> f64 {
        if self.before_delay(t) {
            0.0
        } else {
            self.b2.eval(t)
        }
    }

    pub fn c2_at(&self, t: f64) -> f64 {
        if self.before_delay(t) {
            0.0
        } else {
            self.c2.eval(t)
        }
    }
}

/// `Phi(t_n, s_j)` on a uniform grid `t_n = n * step` covering `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionTable {
    step: f64,
    points: usize,
    #[serde(skip)]
    data: Vec<f64>,
    /// Set when the requested step was adjusted to divide the delay.
    pub warning: Option<String>,
}

impl TransitionTable {
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of grid points, `0..points`.
    pub fn points(&self) -> usize {
        self.points
    }

    /// `Phi(t_n, s_j)`; zero for `n < j`.
    pub fn at(&self, n: usize, j: usize) -> f64 {
        if n < j {
            0.0
        } else {
            self.data[n * self.points + j]
        }
    }

    fn index(&self, t: f64) -> Result<usize> {
        let q = t / self.step;
        let r = q.round();
        if (q - r).abs() > 1e-9 * q.abs().max(1.0) || r < 0.0 {
            return invalid(format!("time {t} is not on the transition grid (step {})", self.step));
        }
        Ok(r as usize)
    }

    /// `Phi(t, s)` for grid times; zero when `t < s`.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        let (n, j) = (self.index(t)?, self.index(s)?);
        if n < j {
            return Ok(0.0);
        }
        if n >= self.points {
            return invalid(format!("transition table does not cover t = {t}"));
        }
        Ok(self.at(n, j))
    }

    /// Rows `t_n`, columns `s_j`.
    pub fn to_grid(&self) -> Vec<Vec<f64>> {
        (0..self.points).map(|n| (0..self.points).map(|j| self.at(n, j)).collect()).collect()
    }
}

/// Integrates `d/dt Phi(t,s) = A1(t) Phi(t,s) + A2(t) Phi(t-h,s) + int_{t-h}^t A0(t,u) Phi(u,s) du`
/// with `Phi(s,s) = 1`, column by column with the classical fourth-order
/// Runge-Kutta scheme. Delayed values between grid points come from cubic
/// Hermite interpolation; the memory integral uses the trapezoid rule.
pub fn transition_function(spec: &DelaySpec, step: f64) -> Result<TransitionTable> {
    spec.validate()?;
    let h = spec.delay;
    if !(step > 0.0 && step.is_finite()) {
        return invalid("transition step must be positive");
    }
    if step > h {
        return invalid(format!("transition step {step} exceeds the delay {h}"));
    }
    let ratio = h / step;
    let lag = ratio.round() as usize;
    let mut warning = None;
    let step = if (ratio - lag as f64).abs() > 1e-9 * ratio {
        let adjusted = h / lag as f64;
        warning = Some(format!("transition step {step} adjusted to {adjusted} to divide the delay"));
        adjusted
    } else {
        step
    };
    let m = (spec.horizon / step - 1e-9).ceil() as usize;
    let points = m + 1;
    let mut data = vec![0.0; points * points];
    let memory = !spec.a0.is_zero();
    let mut vals = vec![0.0; points];
    // Derivatives at the start (right limit) and end (left limit) of each
    // segment; they differ where the delayed term switches on.
    let mut ders = vec![0.0; points];
    let mut ends = vec![0.0; points];
    for j in 0..points {
        vals.iter_mut().for_each(|v| *v = 0.0);
        ders.iter_mut().for_each(|v| *v = 0.0);
        ends.iter_mut().for_each(|v| *v = 0.0);
        vals[j] = 1.0;
        for n in j..points {
            // Delayed segment of this step is [n - lag, n - lag + 1]; before
            // the column start Phi vanishes, so the left limit is used.
            let delayed = |c: f64, vals: &[f64], ders: &[f64], ends: &[f64]| -> f64 {
                if n < j + lag {
                    return 0.0;
                }
                let p = n - lag;
                if c == 0.0 {
                    vals[p]
                } else if c == 1.0 {
                    vals[p + 1]
                } else {
                    0.5 * (vals[p] + vals[p + 1]) + step * (ders[p] - ends[p + 1]) / 8.0
                }
            };
            let rhs = |c: f64, y: f64, vals: &[f64], ders: &[f64], ends: &[f64]| -> f64 {
                let tau = (n as f64 + c) * step;
                let del = delayed(c, vals, ders, ends);
                let mut f = spec.a1.eval(tau) * y + spec.a2.eval(tau) * del;
                if memory {
                    f += memory_integral(spec, tau, n, c, j, lag, step, y, del, vals);
                }
                f
            };
            let y0 = vals[n];
            let k1 = rhs(0.0, y0, &vals, &ders, &ends);
            ders[n] = k1;
            if n + 1 == points {
                break;
            }
            let k2 = rhs(0.5, y0 + 0.5 * step * k1, &vals, &ders, &ends);
            let k3 = rhs(0.5, y0 + 0.5 * step * k2, &vals, &ders, &ends);
            let k4 = rhs(1.0, y0 + step * k3, &vals, &ders, &ends);
            let y1 = y0 + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            vals[n + 1] = y1;
            ends[n + 1] = rhs(1.0, y1, &vals, &ders, &ends);
        }
        for n in j..points {
            data[n * points + j] = vals[n];
        }
    }
    Ok(TransitionTable {
        step,
        points,
        data,
        warning,
    })
}

/// Trapezoid rule for `int_{max(tau-h, s_j)}^{tau} A0(tau,u) Phi(u) du` at
/// stage time `tau = (n + c) step` with stage value `y`.
#[allow(clippy::too_many_arguments)]
fn memory_integral(
    spec: &DelaySpec,
    tau: f64,
    n: usize,
    c: f64,
    j: usize,
    lag: usize,
    step: f64,
    y: f64,
    delayed: f64,
    vals: &[f64],
) -> f64 {
    // Nodes (time, value) from the lower limit up to tau.
    let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(lag + 2);
    let first_grid = if n + 1 > j + lag || (n >= j + lag && c == 0.0) {
        // Lower limit tau - h lies at or after s_j.
        nodes.push((tau - spec.delay, delayed));
        n + 1 - lag
    } else {
        nodes.push((j as f64 * step, 1.0));
        j + 1
    };
    for (p, v) in vals.iter().enumerate().take(n + 1).skip(first_grid) {
        let t = p as f64 * step;
        if t < tau {
            nodes.push((t, *v));
        }
    }
    if c > 0.0 || nodes.last().map(|x| x.0) != Some(tau) {
        nodes.push((tau, y));
    }
    nodes
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (spec.a0.eval(tau, w[0].0) * w[0].1 + spec.a0.eval(tau, w[1].0) * w[1].1))
        .sum()
}

/// Default transition step: the largest divisor of the tree step not above
/// `h / 100`.
pub fn default_transition_step(spec: &DelaySpec, tree: &ScenarioTree) -> f64 {
    let dt = tree.dt();
    let target = spec.delay / 100.0;
    dt / (dt / target).ceil()
}

fn grid_ratio(coarse: f64, fine: f64) -> Result<usize> {
    let q = coarse / fine;
    let r = q.round();
    if r < 1.0 || (q - r).abs() > 1e-9 * q {
        return invalid(format!("step {coarse} is not a multiple of step {fine}"));
    }
    Ok(r as usize)
}

fn check_horizon(spec: &DelaySpec, tree: &ScenarioTree) -> Result<()> {
    if (spec.horizon - tree.horizon()).abs() > 1e-12 * spec.horizon {
        return invalid(format!(
            "tree horizon {} differs from the delay horizon {}",
            tree.horizon(),
            spec.horizon
        ));
    }
    Ok(())
}

/// Volterra form `X = X0 + int (K1 u1 + K2 u2) ds + int Phi D dW` sampled on
/// the tree grid, as a deterministic game with `U1 = (K1, K2)` and `U2 = 0`.
pub fn delay_to_volterra(spec: &DelaySpec, tree: &ScenarioTree, table: &TransitionTable) -> Result<DeterministicGameSpec> {
    spec.validate()?;
    check_horizon(spec, tree)?;
    let n = tree.steps();
    let step = table.step();
    let r = grid_ratio(tree.dt(), step)?;
    let lag = grid_ratio(spec.delay, step)?;
    if n * r >= table.points() {
        return invalid("transition table does not cover the tree horizon");
    }
    let t = |i: usize| tree.time(i);
    let phi = |i: usize, p: usize| if p < table.points() { table.at(i * r, p) } else { 0.0 };
    let k1 = Kernel::from_index_fn(tree, |i, j| {
        phi(i, j * r) * spec.b1.eval(t(j)) + phi(i, j * r + lag) * spec.b2_at(t(j) + spec.delay)
    });
    let k2 = Kernel::from_index_fn(tree, |i, j| {
        phi(i, j * r) * spec.c1.eval(t(j)) + phi(i, j * r + lag) * spec.c2_at(t(j) + spec.delay)
    });
    let l = Kernel::from_index_fn(tree, |i, j| phi(i, j * r) * spec.d.eval(t(j)));

    let memory = !spec.a0.is_zero();
    let phi1 = (0..=n)
        .map(|i| {
            // int_{-h}^0 [Phi(t, s+h) A2(s+h) + int_0^{s+h} Phi(t,u) A0(u,s) du] k(s) ds
            let outer = |q: usize| {
                let s = q as f64 * step - spec.delay;
                let mut v = phi(i, q) * spec.a2.eval(s + spec.delay);
                if memory && q > 0 {
                    v += (0..=q)
                        .map(|p| {
                            let w = if p == 0 || p == q { 0.5 } else { 1.0 };
                            w * step * phi(i, p) * spec.a0.eval(p as f64 * step, s)
                        })
                        .sum::<f64>();
                }
                v * spec.initial.eval(s)
            };
            let integral: f64 = (0..=lag)
                .map(|q| if q == 0 || q == lag { 0.5 } else { 1.0 } * step * outer(q))
                .sum();
            phi(i, 0) * spec.initial.eval(0.0) + integral
        })
        .collect();

    let per_time = |p: &Profile| (0..n).map(|i| p.eval(t(i))).collect::<Vec<f64>>();
    Ok(DeterministicGameSpec {
        tree: *tree,
        b1: k1,
        b2: Kernel::zero(tree),
        c1: k2,
        c2: Kernel::zero(tree),
        q: per_time(&spec.q),
        s1: per_time(&spec.s1),
        s2: per_time(&spec.s2),
        r11: per_time(&spec.r11),
        r12: per_time(&spec.r12),
        r21: per_time(&spec.r21),
        r22: per_time(&spec.r22),
        g: spec.g,
        phi1,
        l,
    })
}

/// Euler scheme for the delay equation on every path of the tree, with the
/// memory integral by the trapezoid rule on the tree grid. The delay must be
/// a multiple of the tree step.
pub fn simulate_delay_sde(
    spec: &DelaySpec,
    tree: &ScenarioTree,
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
) -> Result<AdaptedProcess> {
    spec.validate()?;
    check_horizon(spec, tree)?;
    let lag = grid_ratio(spec.delay, tree.dt())?;
    let n = tree.steps();
    let dt = tree.dt();
    let memory = !spec.a0.is_zero();
    let mut x = AdaptedProcess::zeros_with_terminal(tree);
    x.set(0, 0, spec.initial.eval(0.0));
    for i in 0..n {
        let ti = tree.time(i);
        for a in 0..tree.level_size(i) {
            // X(t_m) on this path, with the initial segment for m < 0.
            let past = |m: isize| -> f64 {
                if m < 0 {
                    spec.initial.eval(m as f64 * dt)
                } else {
                    let m = m as usize;
                    x.at(m, a >> (i - m))
                }
            };
            let ii = i as isize;
            let lagi = lag as isize;
            let mut drift = spec.a1.eval(ti) * x.at(i, a) + spec.a2.eval(ti) * past(ii - lagi);
            if memory {
                drift += (ii - lagi..=ii)
                    .map(|m| {
                        let w = if m == ii - lagi || m == ii { 0.5 } else { 1.0 };
                        w * dt * spec.a0.eval(ti, m as f64 * dt) * past(m)
                    })
                    .sum::<f64>();
            }
            drift += spec.b1.eval(ti) * u1.at(i, a) + spec.c1.eval(ti) * u2.at(i, a);
            if i >= lag {
                let b = a >> lag;
                drift += spec.b2_at(ti) * u1.at(i - lag, b) + spec.c2_at(ti) * u2.at(i - lag, b);
            }
            let base = x.at(i, a) + drift * dt;
            let noise = spec.d.eval(ti) * tree.sqrt_dt();
            for c in [2 * a, 2 * a + 1] {
                x.set(i + 1, c, base + ScenarioTree::branch_sign(c) * noise);
            }
        }
    }
    Ok(x)
}

/// Saddle point from the closing formulas
/// `u1 = -R11^{-1} [K1(T,t) E^{F_t} G X(T) + E^{F_t} int_t^T K1(s,t) Q(s) X(s) ds]`
/// and the analogue for `u2`, solved jointly with the state by Picard iteration.
#[derive(Clone, Debug)]
pub struct ExplicitSaddle {
    pub volterra: DeterministicGameSpec,
    pub game: GameSpec,
    pub x: AdaptedProcess,
    pub u1: AdaptedProcess,
    pub u2: AdaptedProcess,
    pub report: FixedPointReport,
}

struct ExplicitMap<'a> {
    game: &'a GameSpec,
    r11: Vec<f64>,
    r22: Vec<f64>,
}

impl ExplicitMap<'_> {
    fn controls(&self, x: &AdaptedProcess) -> Result<(AdaptedProcess, AdaptedProcess)> {
        let g = self.game;
        let tree = *g.tree();
        let zero = Kernel::zero(&tree);
        let eta = x
            .terminal()
            .ok_or_else(|| Error::InvalidArgument("state without terminal value".into()))?
            .zip_map(&g.g, |a, b| a * b);
        let qx = AdaptedProcess::from_fn(&tree, |i, a| g.q.at(i, a) * x.at(i, a));
        let bracket = |k: &Kernel| -> Result<AdaptedProcess> {
            Ok(adjoint_terminal(k, &zero, &eta)?.add(&adjoint_causal(k, &zero, &qx)?))
        };
        let v1 = bracket(&g.b1)?;
        let v2 = bracket(&g.c1)?;
        Ok((
            AdaptedProcess::from_fn(&tree, |i, a| -v1.at(i, a) / self.r11[i]),
            AdaptedProcess::from_fn(&tree, |i, a| -v2.at(i, a) / self.r22[i]),
        ))
    }
}

impl FixedPointMap for ExplicitMap<'_> {
    type State = (AdaptedProcess, AdaptedProcess);

    fn apply(&self, (u1, u2): &Self::State) -> Result<Self::State> {
        let fwd = solve_forward_svie(self.game, u1, u2)?;
        self.controls(&fwd.x.with_terminal(&fwd.x_terminal))
    }

    fn distance(&self, a: &Self::State, b: &Self::State, beta: f64) -> f64 {
        let tree = a.0.tree();
        let zero = AdaptedProcess::zeros(tree);
        let zs = TwoTimeSurface::zeros(tree, 0);
        (weighted_norm(&zero, &a.0.sub(&b.0), &zs, beta) + weighted_norm(&zero, &a.1.sub(&b.1), &zs, beta)).sqrt()
    }
}

pub fn explicit_saddle(
    spec: &DelaySpec,
    tree: &ScenarioTree,
    table: &TransitionTable,
    options: &FixedPointOptions,
) -> Result<ExplicitSaddle> {
    let volterra = delay_to_volterra(spec, tree, table)?;
    for (name, v) in [("S1", &volterra.s1), ("S2", &volterra.s2), ("R12", &volterra.r12), ("R21", &volterra.r21)] {
        if v.iter().any(|x| *x != 0.0) {
            return Err(Error::Unsupported(format!(
                "the explicit saddle formulas need {name} = 0"
            )));
        }
    }
    for (i, (a, b)) in volterra.r11.iter().zip(&volterra.r22).enumerate() {
        let det = a * b;
        if !(det.abs() >= crate::fredholm::WEIGHT_DET_TOL) {
            return Err(Error::SingularWeight {
                time_index: i,
                node: 0,
                det: det.abs(),
            });
        }
    }
    let game = volterra.to_game_spec()?;
    let map = ExplicitMap {
        game: &game,
        r11: volterra.r11.clone(),
        r22: volterra.r22.clone(),
    };
    let init = (AdaptedProcess::zeros(tree), AdaptedProcess::zeros(tree));
    let ((u1, u2), mut report) = iterate(&map, init, options)?;
    let fwd = solve_forward_svie(&game, &u1, &u2)?;
    let x = fwd.x.with_terminal(&fwd.x_terminal);
    let (w1, w2) = map.controls(&x)?;
    report.residuals = Residuals {
        forward: 0.0,
        backward: 0.0,
        coupling: w1.sub(&u1).max_abs().max(w2.sub(&u2).max_abs()),
    };
    Ok(ExplicitSaddle {
        volterra,
        game,
        x,
        u1,
        u2,
        report,
    })
}

/// Three small specs (h = 1/4, T = 1) for the delay/Volterra equivalence
/// check: pure delay with control, memory kernel with a delayed control
/// and a sloped initial segment, and a delayed second control with
/// additive noise.
pub fn benchmark_specs() -> Vec<DelaySpec> {
    let mut a = DelaySpec::new(0.25, 1.0);
    a.a1 = Profile::constant(-0.5);
    a.a2 = Profile::constant(0.3);
    a.initial = Profile::constant(1.0);
    a.b1 = Profile::constant(1.0);

    let mut b = DelaySpec::new(0.25, 1.0);
    b.a0 = Profile2::separable(0.2, Profile::exponential(1.0, -1.0), Profile::exponential(1.0, 1.0));
    b.a1 = Profile::constant(0.2);
    b.initial = Profile::polynomial(vec![1.0, 1.0]);
    b.b2 = Profile::constant(0.5);
    b.c1 = Profile::constant(0.4);

    let mut c = DelaySpec::new(0.25, 1.0);
    c.a1 = Profile::constant(-0.3);
    c.a2 = Profile::constant(0.2);
    c.c2 = Profile::constant(0.3);
    c.b1 = Profile::constant(0.5);
    c.initial = Profile::constant(0.5);
    c.d = Profile::constant(0.1);
    vec![a, b, c]
}

/// Largest difference over all nodes between the Volterra form and the
/// direct Euler simulation, both driven by `u1 = sin 2t`, `u2 = cos(t) / 2`.
pub fn form_gap(spec: &DelaySpec, tree: &ScenarioTree, step: f64) -> Result<f64> {
    let table = transition_function(spec, step)?;
    let game = delay_to_volterra(spec, tree, &table)?.to_game_spec()?;
    let u1 = AdaptedProcess::from_time_fn(tree, |t| (2.0 * t).sin());
    let u2 = AdaptedProcess::from_time_fn(tree, |t| 0.5 * t.cos());
    let f = solve_forward_svie(&game, &u1, &u2)?;
    let xv = f.x.with_terminal(&f.x_terminal);
    let xd = simulate_delay_sde(spec, tree, &u1, &u2)?;
    Ok(xv.sub(&xd).max_abs())
}
