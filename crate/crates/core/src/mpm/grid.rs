use serde::{Deserialize, Serialize};

use super::MpmError;

/// Structured background grid. Nodes are numbered with the axis that has
/// the fewest nodes varying fastest, which keeps assembled matrices banded.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub origin: [f64; 3],
    pub h: [f64; 3],
    pub cells: [usize; 3],
    order: [usize; 3],
}

impl Grid {
    pub fn new(dim: usize, origin: [f64; 3], h: [f64; 3], cells: [usize; 3]) -> Result<Self, MpmError> {
        if !(1..=3).contains(&dim) {
            return Err(MpmError::Config(format!("grid dimension must be 1, 2 or 3, got {dim}")));
        }
        let mut cells = cells;
        let mut h = h;
        for a in 0..3 {
            if a >= dim {
                cells[a] = 0;
                if !(h[a] > 0.0) {
                    h[a] = 1.0;
                }
            } else if cells[a] == 0 || !(h[a] > 0.0) {
                return Err(MpmError::Config(format!("axis {a} needs positive spacing and cell count")));
            }
        }
        let mut order = [0, 1, 2];
        order[..dim].sort_by_key(|&a| (cells[a], a));
        Ok(Self { dim, origin, h, cells, order })
    }

    pub fn nodes_per_axis(&self) -> [usize; 3] {
        let mut n = [1; 3];
        for a in 0..self.dim {
            n[a] = self.cells[a] + 1;
        }
        n
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().iter().product()
    }

    pub fn node_index(&self, ijk: [usize; 3]) -> usize {
        let n = self.nodes_per_axis();
        let [a, b, c] = self.order;
        ijk[a] + n[a] * (ijk[b] + n[b] * ijk[c])
    }

    pub fn node_ijk(&self, idx: usize) -> [usize; 3] {
        let n = self.nodes_per_axis();
        let [a, b, c] = self.order;
        let mut ijk = [0; 3];
        ijk[a] = idx % n[a];
        ijk[b] = (idx / n[a]) % n[b];
        ijk[c] = idx / (n[a] * n[b]);
        ijk
    }

    pub fn node_position(&self, ijk: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.origin[a] + ijk[a] as f64 * self.h[a];
        }
        x
    }

    /// Nodes within `radius` nodes of `ijk` along every axis.
    pub fn window(&self, ijk: [usize; 3], radius: usize) -> Vec<usize> {
        let n = self.nodes_per_axis();
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for a in 0..3 {
            if a < self.dim {
                lo[a] = ijk[a].saturating_sub(radius);
                hi[a] = (ijk[a] + radius).min(n[a] - 1);
            }
        }
        let mut out = Vec::new();
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    out.push(self.node_index([i, j, k]));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// Nodes with coordinate ≤ `coord`.
    Le,
    /// Nodes with coordinate ≥ `coord`.
    Ge,
}

/// Homogeneous essential condition on the listed field components of all
/// nodes on one side of a coordinate plane. Component `dim` is the pore
/// pressure in coupled problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletRule {
    pub axis: usize,
    pub side: Side,
    pub coord: f64,
    pub components: Vec<usize>,
}

impl DirichletRule {
    pub fn new(axis: usize, side: Side, coord: f64, components: &[usize]) -> Self {
        Self { axis, side, coord, components: components.to_vec() }
    }

    pub fn applies(&self, x: &[f64; 3]) -> bool {
        let tol = 1e-9 * (1.0 + self.coord.abs());
        match self.side {
            Side::Le => x[self.axis] <= self.coord + tol,
            Side::Ge => x[self.axis] >= self.coord - tol,
        }
    }
}

/// Numbering of free degrees of freedom: active nodes in grid order, field
/// components innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct DofLayout {
    pub fields: usize,
    node_dof: Vec<u32>,
    dof_node: Vec<(usize, usize)>,
}

const NO_DOF: u32 = u32::MAX;

impl DofLayout {
    pub fn build(grid: &Grid, active: &[bool], fields: usize, rules: &[DirichletRule]) -> Self {
        let nn = grid.node_count();
        let mut node_dof = vec![NO_DOF; nn * fields];
        let mut dof_node = Vec::new();
        for node in 0..nn {
            if !active[node] {
                continue;
            }
            let x = grid.node_position(grid.node_ijk(node));
            for f in 0..fields {
                let fixed = rules.iter().any(|r| r.components.contains(&f) && r.applies(&x));
                if !fixed {
                    node_dof[node * fields + f] = dof_node.len() as u32;
                    dof_node.push((node, f));
                }
            }
        }
        Self { fields, node_dof, dof_node }
    }

    pub fn empty() -> Self {
        Self { fields: 0, node_dof: Vec::new(), dof_node: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.dof_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_node.is_empty()
    }

    pub fn dof(&self, node: usize, field: usize) -> Option<usize> {
        let d = self.node_dof[node * self.fields + field];
        (d != NO_DOF).then_some(d as usize)
    }

    /// `(node, field)` of a DOF.
    pub fn node_of(&self, dof: usize) -> (usize, usize) {
        self.dof_node[dof]
    }
}
