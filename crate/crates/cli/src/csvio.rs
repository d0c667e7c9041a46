//! CSV tables: sampled kernels (long format) and tree processes.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a table
//! read back parses to the identical bits.

use std::path::Path;

use anyhow::{bail, Context, Result};
use svig_core::{AdaptedProcess, Kernel, ScenarioTree};

pub const KERNEL_HEADER: [&str; 5] = ["t_index", "t", "s_index", "s", "value"];

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))
}

/// Long-format table of `f(i, j)` over the given row and column indices.
pub fn grid_csv(
    tree: &ScenarioTree,
    rows: impl Iterator<Item = usize>,
    cols: impl Iterator<Item = usize> + Clone,
    f: impl Fn(usize, usize) -> Result<f64>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(KERNEL_HEADER)?;
    for i in rows {
        for j in cols.clone() {
            w.write_record([
                i.to_string(),
                num(tree.time(i)),
                j.to_string(),
                num(tree.time(j)),
                num(f(i, j)?),
            ])?;
        }
    }
    finish(w)
}

/// Deterministic kernel as rows `(t_index, t, s_index, s, value)` for
/// `t_index in 0..=N`, `s_index in 0..N`.
pub fn kernel_csv(k: &Kernel) -> Result<Vec<u8>> {
    let table = k.to_table()?;
    let tree = *k.tree();
    let n = tree.steps();
    grid_csv(&tree, 0..=n, 0..n, |i, j| Ok(table[i][j]))
}

pub fn parse_kernel(text: &str, tree: &ScenarioTree) -> Result<Kernel> {
    let n = tree.steps();
    let mut table = vec![vec![None; n]; n + 1];
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != KERNEL_HEADER {
        bail!("kernel table header must be {}", KERNEL_HEADER.join(","));
    }
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let field = |c: usize| rec.get(c).with_context(|| format!("row {row}: missing column {}", KERNEL_HEADER[c]));
        let i: usize = field(0)?.parse().with_context(|| format!("row {row}: t_index"))?;
        let j: usize = field(2)?.parse().with_context(|| format!("row {row}: s_index"))?;
        let v: f64 = field(4)?.parse().with_context(|| format!("row {row}: value"))?;
        if i > n || j >= n {
            bail!("row {row}: index ({i}, {j}) outside the {}x{} grid", n + 1, n);
        }
        for (c, idx) in [(1, i), (3, j)] {
            let t: f64 = field(c)?.parse().with_context(|| format!("row {row}: {}", KERNEL_HEADER[c]))?;
            if (t - tree.time(idx)).abs() > 1e-9 * tree.horizon() {
                bail!("row {row}: time {t} does not match grid time {} (different tree?)", tree.time(idx));
            }
        }
        if table[i][j].replace(v).is_some() {
            bail!("row {row}: duplicate entry ({i}, {j})");
        }
    }
    let mut dense = Vec::with_capacity(n + 1);
    for (i, row) in table.into_iter().enumerate() {
        let mut out = Vec::with_capacity(n);
        for (j, v) in row.into_iter().enumerate() {
            out.push(v.with_context(|| format!("missing entry ({i}, {j})"))?);
        }
        dense.push(out);
    }
    Ok(Kernel::from_table(tree, &dense)?)
}

pub fn read_kernel(path: &Path, tree: &ScenarioTree) -> Result<Kernel> {
    let text = std::fs::read_to_string(path)?;
    parse_kernel(&text, tree)
}

/// Rows `(time_index, time, path_id, values...)`, one per tree node. All
/// columns must cover the same levels.
pub fn process_csv(names: &[&str], columns: &[&AdaptedProcess]) -> Result<Vec<u8>> {
    let Some(first) = columns.first() else {
        bail!("no columns");
    };
    let tree = *first.tree();
    let levels = first.levels();
    if columns.iter().any(|c| c.tree() != &tree || c.levels() != levels) {
        bail!("process columns differ in shape");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time_index", "time", "path_id"];
    header.extend_from_slice(names);
    w.write_record(&header)?;
    for i in 0..levels {
        for k in 0..tree.level_size(i) {
            let mut rec = vec![i.to_string(), num(tree.time(i)), k.to_string()];
            rec.extend(columns.iter().map(|c| num(c.at(i, k))));
            w.write_record(&rec)?;
        }
    }
    finish(w)
}
