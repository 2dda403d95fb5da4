//! Newton Jacobians from a recorded residual tape.
//!
//! Dense extraction seeds one output per backward pass. Block-seeded
//! extraction exploits the bounded stencil of the grid transfer: residual
//! rows whose nodes are at least `b` nodes apart along some axis never
//! share a column, so one pass can seed one row per `b^d` block.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{AdError, AdjointVector, Tape};
use crate::linalg::SparseMatrix;
use crate::mpm::{DofLayout, Grid};
use crate::shape::{block_size, ShapeFunctionKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianStrategy {
    Dense,
    #[default]
    Sparse,
}

impl JacobianStrategy {
    pub fn name(self) -> &'static str {
        match self {
            JacobianStrategy::Dense => "dense",
            JacobianStrategy::Sparse => "sparse",
        }
    }
}

impl std::str::FromStr for JacobianStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dense" => Ok(Self::Dense),
            "sparse" => Ok(Self::Sparse),
            other => Err(format!("unknown Jacobian strategy `{other}` (expected sparse or dense)")),
        }
    }
}

/// How often block-seeded passes are checked for interference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterferenceCheck {
    Always,
    /// Check one pass in `n`.
    Sampled(usize),
    Off,
}

impl Default for InterferenceCheck {
    fn default() -> Self {
        if cfg!(debug_assertions) {
            InterferenceCheck::Always
        } else {
            InterferenceCheck::Sampled(8)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JacobianError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(
        "seeding fault in pass {pass} (field {field}, offset {offset:?}): adjoint {value:.3e} at DOF {dof} (block {block:?}) lies outside every seeded pattern"
    )]
    Interference { pass: usize, field: usize, offset: [usize; 3], dof: usize, block: [usize; 3], value: f64 },
    #[error("tape has {inputs} inputs and {outputs} outputs but the layout has {dofs} DOFs")]
    Layout { inputs: usize, outputs: usize, dofs: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JacobianStats {
    pub passes: usize,
    pub diff_seconds: f64,
}

/// Coupled nodes of every node for a shape-function kind: all nodes within
/// `(b − 1) / 2` nodes per axis.
pub fn sparsity_pattern(grid: &Grid, kind: ShapeFunctionKind) -> Vec<Vec<usize>> {
    let radius = (block_size(kind) - 1) / 2;
    (0..grid.node_count()).map(|n| grid.window(grid.node_ijk(n), radius)).collect()
}

/// One seeding group: all DOFs of `field` whose node sits at local
/// `offset` within its block.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedGroup {
    pub field: usize,
    pub offset: [usize; 3],
    pub dofs: Vec<usize>,
}

/// Tiling of the grid into non-overlapping `b^d` node blocks.
#[derive(Debug, Clone)]
pub struct BlockPartition<'a> {
    pub grid: &'a Grid,
    pub layout: &'a DofLayout,
    pub b: usize,
}

impl<'a> BlockPartition<'a> {
    pub fn new(grid: &'a Grid, layout: &'a DofLayout, b: usize) -> Self {
        Self { grid, layout, b }
    }

    /// Block id and local offset of a node.
    pub fn locate(&self, node: usize) -> ([usize; 3], [usize; 3]) {
        let ijk = self.grid.node_ijk(node);
        let mut block = [0; 3];
        let mut offset = [0; 3];
        for a in 0..self.grid.dim {
            block[a] = ijk[a] / self.b;
            offset[a] = ijk[a] % self.b;
        }
        (block, offset)
    }

    /// Seed groups in loop order field → z → y → x offset. Offsets with no
    /// DOFs (blocks truncated at the boundary) are omitted.
    pub fn groups(&self) -> Vec<SeedGroup> {
        let d = self.grid.dim;
        let span = |a: usize| if a < d { self.b } else { 1 };
        let mut index = std::collections::HashMap::new();
        let mut groups = Vec::new();
        for field in 0..self.layout.fields {
            for oz in 0..span(2) {
                for oy in 0..span(1) {
                    for ox in 0..span(0) {
                        index.insert((field, [ox, oy, oz]), groups.len());
                        groups.push(SeedGroup { field, offset: [ox, oy, oz], dofs: Vec::new() });
                    }
                }
            }
        }
        for dof in 0..self.layout.len() {
            let (node, field) = self.layout.node_of(dof);
            let (_, offset) = self.locate(node);
            groups[index[&(field, offset)]].dofs.push(dof);
        }
        groups.retain(|g| !g.dofs.is_empty());
        groups
    }
}

fn check_shape(tape: &Tape, layout: &DofLayout) -> Result<(), JacobianError> {
    if tape.input_count() < layout.len() || tape.output_count() != layout.len() {
        return Err(JacobianError::Layout {
            inputs: tape.input_count(),
            outputs: tape.output_count(),
            dofs: layout.len(),
        });
    }
    Ok(())
}

/// One backward pass per output row.
pub fn dense_jacobian(tape: &Tape, n_cols: usize) -> Result<(SparseMatrix, JacobianStats), JacobianError> {
    let start = Instant::now();
    let n = tape.output_count();
    let mut adj = AdjointVector::default();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        tape.backward_sparse_into(&[(i, 1.0)], &mut adj)?;
        let g = &adj.gradient(tape.input_count())[..n_cols];
        rows.push(g.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(j, v)| (j, *v)).collect());
    }
    let m = SparseMatrix::from_rows(n_cols, rows);
    Ok((m, JacobianStats { passes: n, diff_seconds: start.elapsed().as_secs_f64() }))
}

/// Block-seeded extraction.
pub fn sparse_jacobian(
    tape: &Tape,
    grid: &Grid,
    layout: &DofLayout,
    b: usize,
    check: InterferenceCheck,
) -> Result<(SparseMatrix, JacobianStats), JacobianError> {
    check_shape(tape, layout)?;
    let start = Instant::now();
    let n = layout.len();
    let radius = (b - 1) / 2;
    let partition = BlockPartition::new(grid, layout, b);
    let groups = partition.groups();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut adj = AdjointVector::default();
    let mut claimed = vec![false; n];
    let mut seed = Vec::new();
    let mut windows: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
    for (pass, group) in groups.iter().enumerate() {
        seed.clear();
        seed.extend(group.dofs.iter().map(|&d| (d, 1.0)));
        tape.backward_sparse_into(&seed, &mut adj)?;
        let g = &adj.gradient(tape.input_count())[..n];
        let checking = match check {
            InterferenceCheck::Always => true,
            InterferenceCheck::Sampled(k) => k > 0 && pass % k == 0,
            InterferenceCheck::Off => false,
        };
        for &i in &group.dofs {
            let node = layout.node_of(i).0;
            let window = windows.entry(node).or_insert_with(|| grid.window(grid.node_ijk(node), radius));
            for &m in window.iter() {
                for f in 0..layout.fields {
                    if let Some(j) = layout.dof(m, f) {
                        if checking {
                            claimed[j] = true;
                        }
                        if g[j] != 0.0 {
                            rows[i].push((j, g[j]));
                        }
                    }
                }
            }
        }
        if checking {
            let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (j, c) in claimed.iter_mut().enumerate() {
                if !*c && g[j].abs() > 1e-12 * scale {
                    let (node, _) = layout.node_of(j);
                    return Err(JacobianError::Interference {
                        pass,
                        field: group.field,
                        offset: group.offset,
                        dof: j,
                        block: partition.locate(node).0,
                        value: g[j],
                    });
                }
                *c = false;
            }
        }
    }
    let m = SparseMatrix::from_rows(n, rows);
    Ok((m, JacobianStats { passes: groups.len(), diff_seconds: start.elapsed().as_secs_f64() }))
}

/// One row of the differentiation benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub grid_size: f64,
    pub strategy: String,
    pub total_s: f64,
    pub diff_s: f64,
    pub diff_share: f64,
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
