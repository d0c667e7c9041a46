//! Two-time coefficient functions sampled on the tree grid.

use crate::error::{invalid, Result};
use crate::tree::ScenarioTree;

/// Kernel `K(t_i, t_j)` sampled for `i in 0..=N` and `j in 0..N`.
///
/// Random kernels are adapted in the second argument: the value at `(i, j)`
/// is one number per node of level `j`. Deterministic kernels store one
/// number per pair. Every formula in the crate evaluates kernels with the
/// first argument strictly later than the second, so the same object serves
/// as a forward kernel `A(t, s)`, a backward kernel `A(s, t)` and, through
/// row `N`, as a terminal row `A(T, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    tree: ScenarioTree,
    deterministic: bool,
    data: Vec<Vec<f64>>,
}

impl Kernel {
    fn index(&self, i: usize, j: usize) -> usize {
        i * self.tree.steps() + j
    }

    pub fn zero(tree: &ScenarioTree) -> Self {
        Self::constant(tree, 0.0)
    }

    pub fn constant(tree: &ScenarioTree, c: f64) -> Self {
        Self::from_index_fn(tree, |_, _| c)
    }

    /// Deterministic kernel from a rule on grid indices `(i, j)`.
    pub fn from_index_fn(tree: &ScenarioTree, f: impl Fn(usize, usize) -> f64) -> Self {
        let n = tree.steps();
        let data = (0..=n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| vec![f(i, j)])
            .collect();
        Self {
            tree: *tree,
            deterministic: true,
            data,
        }
    }

    /// Deterministic kernel from a rule on times `(t, s)`.
    pub fn from_time_fn(tree: &ScenarioTree, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_index_fn(tree, |i, j| f(tree.time(i), tree.time(j)))
    }

    /// Random kernel from a rule `(i, j, node at level j)`.
    pub fn from_node_fn(tree: &ScenarioTree, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let n = tree.steps();
        let mut data = Vec::with_capacity((n + 1) * n);
        for i in 0..=n {
            for j in 0..n {
                data.push((0..tree.level_size(j)).map(|k| f(i, j, k)).collect());
            }
        }
        Self {
            tree: *tree,
            deterministic: false,
            data,
        }
    }

    /// Deterministic kernel from a dense `(N + 1) x N` table.
    pub fn from_table(tree: &ScenarioTree, table: &[Vec<f64>]) -> Result<Self> {
        let n = tree.steps();
        if table.len() != n + 1 || table.iter().any(|r| r.len() != n) {
            return invalid(format!(
                "kernel table must be {} rows of {} values",
                n + 1,
                n
            ));
        }
        if table.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("kernel table has non-finite entries");
        }
        Ok(Self::from_index_fn(tree, |i, j| table[i][j]))
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    /// `K(t_i, t_j)` at `node` of level `j`.
    #[inline]
    pub fn value(&self, i: usize, j: usize, node: usize) -> f64 {
        let cell = &self.data[self.index(i, j)];
        if self.deterministic {
            cell[0]
        } else {
            cell[node]
        }
    }

    /// Deterministic value; for random kernels, the value at node 0.
    #[inline]
    pub fn det(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)][0]
    }

    /// Dense `(N + 1) x N` table of a deterministic kernel.
    pub fn to_table(&self) -> Result<Vec<Vec<f64>>> {
        if !self.deterministic {
            return invalid("only deterministic kernels export as tables");
        }
        let n = self.tree.steps();
        Ok((0..=n).map(|i| (0..n).map(|j| self.det(i, j)).collect()).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            tree: self.tree,
            deterministic: self.deterministic,
            data: self
                .data
                .iter()
                .map(|cell| cell.iter().map(|v| c * v).collect())
                .collect(),
        }
    }

    /// Pointwise sum; the result is random if either input is.
    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.tree, other.tree);
        if self.deterministic && other.deterministic {
            return Self::from_index_fn(&self.tree, |i, j| self.det(i, j) + other.det(i, j));
        }
        Self::from_node_fn(&self.tree, |i, j, k| self.value(i, j, k) + other.value(i, j, k))
    }

    pub(crate) fn check_tree(&self, tree: &ScenarioTree) -> Result<()> {
        if &self.tree != tree {
            return invalid("kernel lives on a different tree");
        }
        if !self.is_finite() {
            return invalid("kernel has non-finite values");
        }
        Ok(())
    }
}
