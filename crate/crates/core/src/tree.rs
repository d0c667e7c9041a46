//! Exact finite filtration: a non-recombining binary scenario tree.
//!
//! Level `i` of the tree carries the `2^i` atoms of `F_{t_i}`. Node `k` at
//! level `i` has children `2k` (increment `+sqrt(dt)`) and `2k + 1`
//! (increment `-sqrt(dt)`), each with conditional probability one half, so
//! every node at level `i` has probability `2^-i`. All random objects in the
//! crate live on this tree, which makes conditional expectations, Itô sums
//! and martingale representations exact finite computations.
//!
//! Storage conventions:
//! * an [`AdaptedProcess`] stores levels `0..N` (and optionally the terminal
//!   level `N`) contiguously, level `i` starting at offset `2^i - 1`;
//! * a [`TerminalVariable`] stores the `2^N` leaf values;
//! * a [`TwoTimeSurface`] stores `Z(i, j)` as a vector over the nodes of
//!   level `j`, since `s -> Z(t, s)` is adapted.

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{invalid, Result};

/// Largest number of time steps a tree may have. Beyond this the `2^N`
/// storage stops being a desk-scale object.
pub const MAX_STEPS: usize = 20;

/// Uniform grid `t_i = i T / N` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return invalid("time grid needs at least one step");
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return invalid(format!("horizon must be positive and finite, got {horizon}"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Knot `t_i`; `t_N` is exactly `T`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }
}

/// Binary scenario tree carrying the discrete Brownian filtration.
///
/// The tree is implicit: parent/child links are index arithmetic, so the
/// value is `Copy` and comparing two trees compares their grids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioTree {
    grid: TimeGrid,
    sqrt_dt: f64,
}

impl Serialize for ScenarioTree {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.grid.serialize(serializer)
    }
}

impl ScenarioTree {
    /// Builds the tree with `steps` levels of branching over `[0, horizon]`.
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        let grid = TimeGrid::new(steps, horizon)?;
        if steps > MAX_STEPS {
            return invalid(format!("tree depth {steps} exceeds the cap of {MAX_STEPS}"));
        }
        Ok(Self {
            grid,
            sqrt_dt: grid.dt().sqrt(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, i: usize) -> f64 {
        self.grid.time(i)
    }

    /// Number of nodes at `level`.
    pub fn level_size(&self, level: usize) -> usize {
        1usize << level
    }

    /// Probability of each node at `level`.
    pub fn probability(&self, level: usize) -> f64 {
        0.5f64.powi(level as i32)
    }

    pub fn leaves(&self) -> usize {
        1usize << self.steps()
    }

    /// Offset of `level` inside a flattened process.
    pub fn offset(level: usize) -> usize {
        (1usize << level) - 1
    }

    /// Dimension of the adapted-process space (levels `0..N`).
    pub fn process_dim(&self) -> usize {
        Self::offset(self.steps())
    }

    /// Ancestor at level `at` of node `node` at level `level` (`at <= level`).
    #[inline]
    pub fn ancestor(level: usize, node: usize, at: usize) -> usize {
        debug_assert!(at <= level);
        node >> (level - at)
    }

    /// Children (up, down) of a node.
    #[inline]
    pub fn children(node: usize) -> (usize, usize) {
        (2 * node, 2 * node + 1)
    }

    /// Sign of the increment that led into `node` (`+1` for even, `-1` for odd).
    #[inline]
    pub fn branch_sign(node: usize) -> f64 {
        if node & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Increment `W(t_{step+1}) - W(t_step)` on the path through `node` at
    /// `level`; requires `step < level`.
    #[inline]
    pub fn increment(&self, level: usize, node: usize, step: usize) -> f64 {
        debug_assert!(step < level);
        Self::branch_sign(Self::ancestor(level, node, step + 1)) * self.sqrt_dt
    }

    /// `W(t_level)` at `node`.
    pub fn brownian(&self, level: usize, node: usize) -> f64 {
        (0..level).map(|j| self.increment(level, node, j)).sum()
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level > self.steps() {
            return invalid(format!("level {level} exceeds tree depth {}", self.steps()));
        }
        Ok(())
    }

    /// Conditional expectation of a level-`from` variable onto level `to`.
    pub fn condition(&self, values: &[f64], from: usize, to: usize) -> Result<Vec<f64>> {
        self.check_level(from)?;
        if to > from {
            return invalid(format!(
                "cannot condition a level-{from} variable on the later level {to}"
            ));
        }
        if values.len() != self.level_size(from) {
            return invalid(format!(
                "expected {} values at level {from}, got {}",
                self.level_size(from),
                values.len()
            ));
        }
        Ok(condition_unchecked(values, from, to))
    }

    /// Martingale representation of a level-`level` variable:
    /// `xi = mean + sum_{j<level} theta(j) dW(j)` exactly on every path.
    /// `theta[j]` holds the integrand on the nodes of level `j`.
    pub fn represent(&self, values: &[f64], level: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        self.check_level(level)?;
        if values.len() != self.level_size(level) {
            return invalid("values do not match the level size");
        }
        Ok(represent_unchecked(values, level, self.sqrt_dt))
    }
}

/// Successive pairwise averaging from `from` down to `to`.
pub(crate) fn condition_unchecked(values: &[f64], from: usize, to: usize) -> Vec<f64> {
    let mut cur = values.to_vec();
    for _ in to..from {
        cur = cur.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
    }
    cur
}

/// All conditional expectations of a level-`level` variable, indexed by level.
pub(crate) fn condition_all(values: &[f64], level: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); level + 1];
    out[level] = values.to_vec();
    for l in (0..level).rev() {
        out[l] = out[l + 1]
            .chunks_exact(2)
            .map(|c| 0.5 * (c[0] + c[1]))
            .collect();
    }
    out
}

pub(crate) fn represent_unchecked(
    values: &[f64],
    level: usize,
    sqrt_dt: f64,
) -> (f64, Vec<Vec<f64>>) {
    let cond = condition_all(values, level);
    let denom = 2.0 * sqrt_dt;
    let theta = (0..level)
        .map(|j| {
            cond[j + 1]
                .chunks_exact(2)
                .map(|c| (c[0] - c[1]) / denom)
                .collect()
        })
        .collect();
    (cond[0][0], theta)
}

/// `F_T`-measurable random variable: one value per leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalVariable {
    tree: ScenarioTree,
    values: Vec<f64>,
}

impl TerminalVariable {
    pub fn zeros(tree: &ScenarioTree) -> Self {
        Self::constant(tree, 0.0)
    }

    pub fn constant(tree: &ScenarioTree, c: f64) -> Self {
        Self {
            tree: *tree,
            values: vec![c; tree.leaves()],
        }
    }

    pub fn from_values(tree: &ScenarioTree, values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.leaves() {
            return invalid(format!(
                "terminal variable needs {} leaf values, got {}",
                tree.leaves(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("terminal variable has non-finite values");
        }
        Ok(Self {
            tree: *tree,
            values,
        })
    }

    pub fn from_fn(tree: &ScenarioTree, f: impl Fn(usize) -> f64) -> Self {
        Self {
            tree: *tree,
            values: (0..tree.leaves()).map(f).collect(),
        }
    }

    /// `W(T)` on every leaf.
    pub fn brownian(tree: &ScenarioTree) -> Self {
        let n = tree.steps();
        Self::from_fn(tree, |leaf| tree.brownian(n, leaf))
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            tree: self.tree,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.tree, other.tree);
        Self {
            tree: self.tree,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `E[xi | F_{t_i}]` on the nodes of level `i`.
    pub fn conditional_expectation(&self, i: usize) -> Result<Vec<f64>> {
        self.tree.condition(&self.values, self.tree.steps(), i)
    }

    /// `xi = mean + sum_j theta(j) dW(j)` with `theta` returned as an adapted
    /// process on levels `0..N`.
    pub fn martingale_representation(&self) -> (f64, AdaptedProcess) {
        let n = self.tree.steps();
        let (mean, theta) = represent_unchecked(&self.values, n, self.tree.sqrt_dt());
        (mean, AdaptedProcess::from_levels(&self.tree, theta, None))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Adapted process on the tree: one value per node of levels `0..N`, plus an
/// optional terminal slot at level `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedProcess {
    tree: ScenarioTree,
    values: Vec<f64>,
    terminal: bool,
}

impl Serialize for AdaptedProcess {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let levels: Vec<&[f64]> = (0..self.levels()).map(|i| self.level(i)).collect();
        let mut st = serializer.serialize_struct("AdaptedProcess", 3)?;
        st.serialize_field("steps", &self.tree.steps())?;
        st.serialize_field("horizon", &self.tree.horizon())?;
        st.serialize_field("levels", &levels)?;
        st.end()
    }
}

impl AdaptedProcess {
    pub fn zeros(tree: &ScenarioTree) -> Self {
        Self {
            tree: *tree,
            values: vec![0.0; tree.process_dim()],
            terminal: false,
        }
    }

    pub fn zeros_with_terminal(tree: &ScenarioTree) -> Self {
        Self {
            tree: *tree,
            values: vec![0.0; ScenarioTree::offset(tree.steps() + 1)],
            terminal: true,
        }
    }

    pub fn constant(tree: &ScenarioTree, c: f64) -> Self {
        Self::from_fn(tree, |_, _| c)
    }

    /// Process on levels `0..N` from a rule `(time index, node) -> value`.
    pub fn from_fn(tree: &ScenarioTree, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut p = Self::zeros(tree);
        p.fill_with(f);
        p
    }

    /// Like [`from_fn`](Self::from_fn) but also fills the terminal level.
    pub fn from_fn_with_terminal(tree: &ScenarioTree, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut p = Self::zeros_with_terminal(tree);
        p.fill_with(f);
        p
    }

    /// Deterministic process `t_i -> f(t_i)`.
    pub fn from_time_fn(tree: &ScenarioTree, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(tree, |i, _| f(tree.time(i)))
    }

    /// `W(t_i)`, including the terminal level.
    pub fn brownian(tree: &ScenarioTree) -> Self {
        Self::from_fn_with_terminal(tree, |i, k| tree.brownian(i, k))
    }

    fn fill_with(&mut self, f: impl Fn(usize, usize) -> f64) {
        for i in 0..self.levels() {
            let off = ScenarioTree::offset(i);
            for k in 0..self.tree.level_size(i) {
                self.values[off + k] = f(i, k);
            }
        }
    }

    /// Builds from per-level vectors; `terminal` supplies the optional level `N`.
    pub fn from_levels(
        tree: &ScenarioTree,
        levels: Vec<Vec<f64>>,
        terminal: Option<Vec<f64>>,
    ) -> Self {
        let mut values: Vec<f64> = levels.into_iter().flatten().collect();
        let has_terminal = terminal.is_some();
        if let Some(t) = terminal {
            values.extend(t);
        }
        assert_eq!(
            values.len(),
            ScenarioTree::offset(tree.steps() + has_terminal as usize),
            "level sizes do not match the tree"
        );
        Self {
            tree: *tree,
            values,
            terminal: has_terminal,
        }
    }

    /// Validating constructor from a flat vector over levels `0..N`.
    pub fn from_flat(tree: &ScenarioTree, values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.process_dim() {
            return invalid(format!(
                "adapted process needs {} values, got {}",
                tree.process_dim(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("adapted process has non-finite values");
        }
        Ok(Self {
            tree: *tree,
            values,
            terminal: false,
        })
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn has_terminal(&self) -> bool {
        self.terminal
    }

    /// Number of stored levels (`N`, or `N + 1` with a terminal slot).
    pub fn levels(&self) -> usize {
        self.tree.steps() + self.terminal as usize
    }

    pub fn level(&self, i: usize) -> &[f64] {
        let off = ScenarioTree::offset(i);
        &self.values[off..off + self.tree.level_size(i)]
    }

    pub fn level_mut(&mut self, i: usize) -> &mut [f64] {
        let off = ScenarioTree::offset(i);
        let len = self.tree.level_size(i);
        &mut self.values[off..off + len]
    }

    #[inline]
    pub fn at(&self, i: usize, node: usize) -> f64 {
        self.values[ScenarioTree::offset(i) + node]
    }

    #[inline]
    pub fn set(&mut self, i: usize, node: usize, v: f64) {
        self.values[ScenarioTree::offset(i) + node] = v;
    }

    /// Values on levels `0..N` (terminal slot excluded).
    pub fn interior(&self) -> &[f64] {
        &self.values[..self.tree.process_dim()]
    }

    pub fn terminal(&self) -> Option<TerminalVariable> {
        self.terminal.then(|| TerminalVariable {
            tree: self.tree,
            values: self.level(self.tree.steps()).to_vec(),
        })
    }

    pub fn without_terminal(&self) -> Self {
        Self {
            tree: self.tree,
            values: self.interior().to_vec(),
            terminal: false,
        }
    }

    pub fn with_terminal(&self, xi: &TerminalVariable) -> Self {
        let mut values = self.interior().to_vec();
        values.extend_from_slice(xi.values());
        Self {
            tree: self.tree,
            values,
            terminal: true,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            tree: self.tree,
            values: self.values.iter().map(|&v| f(v)).collect(),
            terminal: self.terminal,
        }
    }

    /// Pointwise combination on the common levels of both processes.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.tree, other.tree);
        let terminal = self.terminal && other.terminal;
        let len = ScenarioTree::offset(self.tree.steps() + terminal as usize);
        Self {
            tree: self.tree,
            values: self.values[..len]
                .iter()
                .zip(&other.values[..len])
                .map(|(&a, &b)| f(a, b))
                .collect(),
            terminal,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Node value at level `i` seen from a descendant `node` at level `level`.
    #[inline]
    pub fn along(&self, i: usize, level: usize, node: usize) -> f64 {
        self.at(i, ScenarioTree::ancestor(level, node, i))
    }
}

/// Two-time adapted surface `Z(i, j)` with `i in 0..rows` and `j in 0..N`;
/// the slice `j -> Z(i, j)` lives on the nodes of level `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoTimeSurface {
    tree: ScenarioTree,
    rows: usize,
    data: Vec<Vec<f64>>,
}

impl TwoTimeSurface {
    pub fn zeros(tree: &ScenarioTree, rows: usize) -> Self {
        let n = tree.steps();
        let data = (0..rows * n)
            .map(|idx| vec![0.0; tree.level_size(idx % n)])
            .collect();
        Self {
            tree: *tree,
            rows,
            data,
        }
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn slice(&self, i: usize, j: usize) -> &[f64] {
        &self.data[i * self.tree.steps() + j]
    }

    pub fn slice_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let n = self.tree.steps();
        &mut self.data[i * n + j]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, node: usize) -> f64 {
        self.data[i * self.tree.steps() + j][node]
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            tree: self.tree,
            rows: self.rows,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }

    /// `sum_i dt sum_j dt E[w_i Z(i,j)^2]` with a per-row weight.
    pub(crate) fn weighted_square_sum(&self, weight: impl Fn(usize) -> f64) -> f64 {
        let n = self.tree.steps();
        let dt = self.tree.dt();
        let mut total = 0.0;
        for i in 0..self.rows {
            let mut row = 0.0;
            for j in 0..n {
                let s = self.slice(i, j);
                row += s.iter().map(|v| v * v).sum::<f64>() * self.tree.probability(j);
            }
            total += weight(i) * row * dt * dt;
        }
        total
    }
}

fn check_same_tree(a: &ScenarioTree, b: &ScenarioTree) -> Result<()> {
    if a != b {
        return invalid("operands live on different trees");
    }
    Ok(())
}

/// `<u, v>_2 = E sum_i u(t_i) v(t_i) dt`.
pub fn inner_product_process(u: &AdaptedProcess, v: &AdaptedProcess) -> Result<f64> {
    check_same_tree(u.tree(), v.tree())?;
    let tree = u.tree();
    let mut total = 0.0;
    for i in 0..tree.steps() {
        let s: f64 = u.level(i).iter().zip(v.level(i)).map(|(a, b)| a * b).sum();
        total += s * tree.probability(i);
    }
    Ok(total * tree.dt())
}

/// `<xi, eta>_1 = E[xi eta]`.
pub fn inner_product_terminal(xi: &TerminalVariable, eta: &TerminalVariable) -> Result<f64> {
    check_same_tree(xi.tree(), eta.tree())?;
    let s: f64 = xi.values().iter().zip(eta.values()).map(|(a, b)| a * b).sum();
    Ok(s * xi.tree().probability(xi.tree().steps()))
}

/// Itô sum `I(i) = sum_{j<i} f(j) dW(j)`, returned with its terminal value.
pub fn stochastic_integral(f: &AdaptedProcess) -> AdaptedProcess {
    let tree = *f.tree();
    let mut out = AdaptedProcess::zeros_with_terminal(&tree);
    for i in 1..=tree.steps() {
        for k in 0..tree.level_size(i) {
            let parent = k >> 1;
            let v = out.at(i - 1, parent)
                + f.at(i - 1, parent) * ScenarioTree::branch_sign(k) * tree.sqrt_dt();
            out.set(i, k, v);
        }
    }
    out
}

/// Conditional expectation of a terminal variable onto level `i`.
pub fn conditional_expectation(xi: &TerminalVariable, i: usize) -> Result<Vec<f64>> {
    xi.conditional_expectation(i)
}

/// Exact martingale representation `xi = mean + sum_j theta(j) dW(j)`.
pub fn martingale_representation(xi: &TerminalVariable) -> (f64, AdaptedProcess) {
    xi.martingale_representation()
}

/// M-decomposition of an adapted process: `Z(i, j)` for `j < i` is the
/// representation integrand of the level-`i` variable `Y(t_i)`, so that
/// `Y(t_i) = E Y(t_i) + sum_{j<i} Z(i, j) dW(j)` on every path. Entries with
/// `j >= i` are zero.
pub fn m_decompose(y: &AdaptedProcess) -> TwoTimeSurface {
    let tree = *y.tree();
    let mut z = TwoTimeSurface::zeros(&tree, tree.steps());
    for i in 1..tree.steps() {
        let (_, theta) = represent_unchecked(y.level(i), i, tree.sqrt_dt());
        for (j, th) in theta.into_iter().enumerate() {
            z.slice_mut(i, j).copy_from_slice(&th);
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn build_tree_shapes() {
        let t = ScenarioTree::new(1, 1.0).unwrap();
        assert_eq!(t.level_size(0), 1);
        assert_eq!(t.leaves(), 2);
        assert_eq!(t.increment(1, 0, 0), 1.0);
        assert_eq!(t.increment(1, 1, 0), -1.0);
        assert_eq!(t.probability(1), 0.5);

        let t = ScenarioTree::new(3, 1.0).unwrap();
        let sizes: Vec<_> = (0..=3).map(|l| t.level_size(l)).collect();
        assert_eq!(sizes, vec![1, 2, 4, 8]);
        assert_abs_diff_eq!(t.dt(), 1.0 / 3.0);

        let t = ScenarioTree::new(2, 2.0).unwrap();
        for leaf in 0..4 {
            for j in 0..2 {
                assert_eq!(t.increment(2, leaf, j).abs(), 1.0);
            }
        }
    }

    #[test]
    fn build_tree_rejects_bad_arguments() {
        assert!(ScenarioTree::new(0, 1.0).is_err());
        assert!(ScenarioTree::new(3, 0.0).is_err());
        assert!(ScenarioTree::new(3, -1.0).is_err());
        assert!(ScenarioTree::new(MAX_STEPS + 1, 1.0).is_err());
    }

    #[test]
    fn increments_have_exact_moments() {
        let t = ScenarioTree::new(4, 0.7).unwrap();
        for level in 0..4 {
            for node in 0..t.level_size(level) {
                let (u, d) = ScenarioTree::children(node);
                let up = t.increment(level + 1, u, level);
                let down = t.increment(level + 1, d, level);
                assert_eq!(up + down, 0.0);
                assert_abs_diff_eq!(0.5 * (up * up + down * down), t.dt(), epsilon = 1e-15);
            }
            let total: f64 = (0..t.level_size(level)).map(|_| t.probability(level)).sum();
            assert_eq!(total, 1.0);
        }
    }

    #[test]
    fn conditional_expectation_examples() {
        let t = ScenarioTree::new(1, 1.0).unwrap();
        let w = TerminalVariable::brownian(&t);
        assert_eq!(w.conditional_expectation(0).unwrap(), vec![0.0]);

        let c = TerminalVariable::constant(&t, 3.5);
        assert_eq!(c.conditional_expectation(0).unwrap(), vec![3.5]);

        // W(T)^2 on two steps: E[W_2^2 | F_1] = W_1^2 + dt.
        let t = ScenarioTree::new(2, 1.0).unwrap();
        let w2 = TerminalVariable::brownian(&t).map(|v| v * v);
        let ce = w2.conditional_expectation(1).unwrap();
        for (k, v) in ce.iter().enumerate() {
            let w1 = t.brownian(1, k);
            assert_abs_diff_eq!(*v, w1 * w1 + t.dt(), epsilon = 1e-14);
        }
    }

    #[test]
    fn conditioning_on_a_later_level_is_rejected() {
        let t = ScenarioTree::new(2, 1.0).unwrap();
        assert!(t.condition(&[1.0, 2.0], 1, 2).is_err());
        assert!(t.condition(&[1.0, 2.0, 3.0, 4.0, 5.0], 2, 1).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let t = ScenarioTree::new(4, 1.3).unwrap();
        let one = AdaptedProcess::constant(&t, 1.0);
        assert_abs_diff_eq!(inner_product_process(&one, &one).unwrap(), 1.3, epsilon = 1e-14);

        // v(i) at a level-i node is the sign of the increment that led there,
        // which has mean zero at each level i >= 1.
        let v = AdaptedProcess::from_fn(&t, |i, k| if i == 0 { 0.0 } else { ScenarioTree::branch_sign(k) });
        assert_abs_diff_eq!(inner_product_process(&one, &v).unwrap(), 0.0, epsilon = 1e-15);

        let t = ScenarioTree::new(2, 1.0).unwrap();
        let w = AdaptedProcess::brownian(&t).without_terminal();
        assert_abs_diff_eq!(inner_product_process(&w, &w).unwrap(), 0.25, epsilon = 1e-15);

        let other = ScenarioTree::new(3, 1.0).unwrap();
        assert!(inner_product_process(&w, &AdaptedProcess::zeros(&other)).is_err());
    }

    #[test]
    fn terminal_inner_product_examples() {
        let t = ScenarioTree::new(5, 1.0).unwrap();
        let one = TerminalVariable::constant(&t, 1.0);
        let w = TerminalVariable::brownian(&t);
        assert_eq!(inner_product_terminal(&one, &one).unwrap(), 1.0);
        assert_abs_diff_eq!(inner_product_terminal(&w, &one).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(inner_product_terminal(&w, &w).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn stochastic_integral_examples() {
        let t = ScenarioTree::new(3, 1.0).unwrap();
        let zero = stochastic_integral(&AdaptedProcess::zeros(&t));
        assert_eq!(zero.max_abs(), 0.0);

        let w = stochastic_integral(&AdaptedProcess::constant(&t, 1.0));
        let expected = AdaptedProcess::brownian(&t);
        assert!(w.sub(&expected).max_abs() < 1e-14);

        // f = W(t_j) on two steps: terminal value W(t_1) dW_1 per path.
        let t = ScenarioTree::new(2, 1.0).unwrap();
        let f = AdaptedProcess::brownian(&t).without_terminal();
        let i = stochastic_integral(&f).terminal().unwrap();
        for leaf in 0..4 {
            let w1 = t.brownian(1, leaf >> 1);
            let dw1 = t.increment(2, leaf, 1);
            assert_abs_diff_eq!(i.values()[leaf], w1 * dw1, epsilon = 1e-15);
        }
    }

    #[test]
    fn martingale_representation_examples() {
        let t = ScenarioTree::new(3, 1.0).unwrap();
        let (m, th) = TerminalVariable::constant(&t, 2.0).martingale_representation();
        assert_eq!(m, 2.0);
        assert_eq!(th.max_abs(), 0.0);

        let (m, th) = TerminalVariable::brownian(&t).martingale_representation();
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-15);
        assert!(th.sub(&AdaptedProcess::constant(&t, 1.0)).max_abs() < 1e-14);

        // W(T)^2 = T + sum_j 2 W(t_j) dW(j) on the tree.
        let t = ScenarioTree::new(2, 1.0).unwrap();
        let (m, th) = TerminalVariable::brownian(&t)
            .map(|v| v * v)
            .martingale_representation();
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-14);
        for j in 0..2 {
            for k in 0..t.level_size(j) {
                assert_abs_diff_eq!(th.at(j, k), 2.0 * t.brownian(j, k), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn m_decompose_examples() {
        let t = ScenarioTree::new(4, 1.0).unwrap();
        let det = AdaptedProcess::from_time_fn(&t, |s| s * s + 1.0);
        assert_eq!(m_decompose(&det).max_abs(), 0.0);

        let w = AdaptedProcess::brownian(&t).without_terminal();
        let z = m_decompose(&w);
        for i in 0..4 {
            for j in 0..4 {
                for &v in z.slice(i, j) {
                    let expected = if j < i { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(v, expected, epsilon = 1e-13);
                }
            }
        }

        let w2 = w.map(|v| v * v);
        let z = m_decompose(&w2);
        for i in 0..4 {
            for j in 0..i {
                for k in 0..t.level_size(j) {
                    assert_abs_diff_eq!(z.at(i, j, k), 2.0 * t.brownian(j, k), epsilon = 1e-13);
                }
            }
        }
    }
}
