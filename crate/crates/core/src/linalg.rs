//! Block-sparse symmetric matrices over 3-D nodes and the SPD solvers used by
//! the Newton iteration and the sensitivity computations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Neighborhood, STENCIL};
use crate::{Mat3, Vec3};

/// Row-compressed layout of 3x3 blocks coupling nodes that share a stencil.
#[derive(Debug, Clone)]
pub struct BlockPattern {
    n: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    diag: Vec<usize>,
    /// For each stencil, the block slot of every (a, b) node pair.
    stencil_slots: Vec<[usize; STENCIL * STENCIL]>,
}

impl BlockPattern {
    pub fn from_stencils(n: usize, stencils: &[Neighborhood]) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for nb in stencils {
            let nodes = nb.nodes();
            for &a in &nodes {
                rows[a].extend_from_slice(&nodes);
            }
        }
        let mut row_start = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_start.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_start.push(cols.len());
        }
        let mut pattern = Self {
            n,
            row_start,
            cols,
            diag: Vec::new(),
            stencil_slots: Vec::new(),
        };
        pattern.diag = (0..n).map(|i| pattern.slot(i, i).unwrap()).collect();
        pattern.stencil_slots = stencils
            .iter()
            .map(|nb| {
                let nodes = nb.nodes();
                let mut slots = [0usize; STENCIL * STENCIL];
                for (a, &ga) in nodes.iter().enumerate() {
                    for (b, &gb) in nodes.iter().enumerate() {
                        slots[a * STENCIL + b] = pattern.slot(ga, gb).unwrap();
                    }
                }
                slots
            })
            .collect();
        pattern
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn nnz_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.row_start[row]..self.row_start[row + 1];
        self.cols[range.clone()]
            .binary_search(&col)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn diag_slot(&self, node: usize) -> usize {
        self.diag[node]
    }

    pub fn stencil_slots(&self, stencil: usize) -> &[usize; STENCIL * STENCIL] {
        &self.stencil_slots[stencil]
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row_start[row]..self.row_start[row + 1]).map(move |k| (self.cols[k], k))
    }
}

/// Symmetric block-sparse matrix sharing a [`BlockPattern`].
#[derive(Debug, Clone)]
pub struct BlockSparse<'p> {
    pattern: &'p BlockPattern,
    blocks: Vec<Mat3>,
}

impl<'p> BlockSparse<'p> {
    pub fn zeros(pattern: &'p BlockPattern) -> Self {
        Self {
            pattern,
            blocks: vec![Mat3::zeros(); pattern.nnz_blocks()],
        }
    }

    pub fn pattern(&self) -> &'p BlockPattern {
        self.pattern
    }

    pub fn nodes(&self) -> usize {
        self.pattern.n
    }

    pub fn block(&self, row: usize, col: usize) -> Mat3 {
        self.pattern
            .slot(row, col)
            .map(|k| self.blocks[k])
            .unwrap_or_else(Mat3::zeros)
    }

    pub fn add_at_slot(&mut self, slot: usize, value: &Mat3) {
        self.blocks[slot] += value;
    }

    pub fn add_diagonal(&mut self, node: usize, value: &Mat3) {
        let k = self.pattern.diag[node];
        self.blocks[k] += value;
    }

    /// Scatters a dense stencil Hessian (21x21, node-major) into the matrix.
    pub fn add_stencil(&mut self, stencil: usize, local: &[f64]) {
        let slots = self.pattern.stencil_slots(stencil);
        let dim = 3 * STENCIL;
        for a in 0..STENCIL {
            for b in 0..STENCIL {
                let k = slots[a * STENCIL + b];
                let blk = &mut self.blocks[k];
                for r in 0..3 {
                    for c in 0..3 {
                        blk[(r, c)] += local[(3 * a + r) * dim + 3 * b + c];
                    }
                }
            }
        }
    }

    pub fn mul_vec(&self, x: &[Vec3]) -> Vec<Vec3> {
        (0..self.pattern.n)
            .map(|i| {
                self.pattern
                    .row(i)
                    .fold(Vec3::zeros(), |acc, (j, k)| acc + self.blocks[k] * x[j])
            })
            .collect()
    }

    pub fn diagonal(&self) -> Vec<Vec3> {
        (0..self.pattern.n)
            .map(|i| self.blocks[self.pattern.diag[i]].diagonal())
            .collect()
    }

    /// Dense copy, intended for tests and small diagnostics.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.pattern.n;
        let mut m = nalgebra::DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            for (j, k) in self.pattern.row(i) {
                m.view_mut((3 * i, 3 * j), (3, 3))
                    .copy_from(&self.blocks[k]);
            }
        }
        m
    }
}

/// Coordinate mask; `true` marks a degree of freedom the solver may move.
pub type FreeMask = [[bool; 3]];

pub(crate) fn dot(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u.dot(v)).sum()
}

pub(crate) fn masked(v: &[Vec3], free: &FreeMask) -> Vec<Vec3> {
    v.iter()
        .zip(free)
        .map(|(x, f)| Vec3::new(select(x.x, f[0]), select(x.y, f[1]), select(x.z, f[2])))
        .collect()
}

#[inline]
fn select(v: f64, keep: bool) -> f64 {
    if keep {
        v
    } else {
        0.0
    }
}

/// Choice of linear solver for the SPD Newton systems.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LinearSolver {
    #[default]
    /// Envelope Cholesky factorization on a reverse Cuthill-McKee ordering.
    Cholesky,
    /// Jacobi-preconditioned conjugate gradient.
    Cg {
        rel_tol: f64,
        /// Zero selects `10 * 3n`.
        max_iters: usize,
    },
}

/// A prepared solve `A x = b` restricted to free coordinates.
pub enum SpdSolve<'p> {
    Cholesky(EnvelopeCholesky),
    Cg {
        matrix: BlockSparse<'p>,
        free: Vec<[bool; 3]>,
        rel_tol: f64,
        max_iters: usize,
    },
}

impl<'p> SpdSolve<'p> {
    pub fn prepare(matrix: BlockSparse<'p>, free: &FreeMask, kind: LinearSolver) -> Result<Self> {
        match kind {
            LinearSolver::Cholesky => Ok(SpdSolve::Cholesky(EnvelopeCholesky::factor(
                &matrix, free,
            )?)),
            LinearSolver::Cg { rel_tol, max_iters } => {
                let max_iters = if max_iters == 0 {
                    30 * matrix.nodes()
                } else {
                    max_iters
                };
                Ok(SpdSolve::Cg {
                    matrix,
                    free: free.to_vec(),
                    rel_tol,
                    max_iters,
                })
            }
        }
    }

    /// Solves with zero entries on fixed coordinates.
    pub fn solve(&self, rhs: &[Vec3]) -> Result<Vec<Vec3>> {
        match self {
            SpdSolve::Cholesky(f) => Ok(f.solve(rhs)),
            SpdSolve::Cg {
                matrix,
                free,
                rel_tol,
                max_iters,
            } => pcg(matrix, free, rhs, *rel_tol, *max_iters).map(|r| r.x),
        }
    }
}

pub struct CgResult {
    pub x: Vec<Vec3>,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Jacobi-preconditioned conjugate gradient on the free coordinates.
pub fn pcg(
    a: &BlockSparse<'_>,
    free: &FreeMask,
    rhs: &[Vec3],
    rel_tol: f64,
    max_iters: usize,
) -> Result<CgResult> {
    let n = a.nodes();
    let b = masked(rhs, free);
    let b_norm = dot(&b, &b).sqrt();
    let mut x = vec![Vec3::zeros(); n];
    if b_norm == 0.0 {
        return Ok(CgResult {
            x,
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let inv_diag: Vec<Vec3> = a
        .diagonal()
        .iter()
        .map(|d| d.map(|v| if v > 0.0 { 1.0 / v } else { 1.0 }))
        .collect();
    let precondition = |r: &[Vec3]| -> Vec<Vec3> {
        r.iter()
            .zip(&inv_diag)
            .map(|(r, d)| r.component_mul(d))
            .collect()
    };

    let mut r = b.clone();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iters {
        let ap = masked(&a.mul_vec(&p), free);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolve(format!(
                "non-positive curvature {pap:e} at CG iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = dot(&r, &r).sqrt() / b_norm;
        if res <= rel_tol {
            return Ok(CgResult {
                x,
                iterations: it + 1,
                rel_residual: res,
            });
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = dot(&r, &r).sqrt() / b_norm;
    Err(Error::LinearSolve(format!(
        "CG did not reach {rel_tol:e} in {max_iters} iterations (residual {res:e})"
    )))
}

/// Reverse Cuthill-McKee ordering of the block graph.
pub fn reverse_cuthill_mckee(pattern: &BlockPattern) -> Vec<usize> {
    let n = pattern.nodes();
    let degree: Vec<usize> = (0..n).map(|i| pattern.row(i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_last = |start: usize, visited: &[bool]| -> (usize, usize) {
        // returns (last node reached, eccentricity)
        let mut level = vec![usize::MAX; n];
        let mut queue = VecDeque::from([start]);
        level[start] = 0;
        let mut last = start;
        while let Some(u) = queue.pop_front() {
            last = u;
            for (v, _) in pattern.row(u) {
                if !visited[v] && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (last, level[last])
    };

    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        // pseudo-peripheral start node
        let mut start = seed;
        let mut ecc = bfs_last(start, &visited).1;
        for _ in 0..4 {
            let (far, _) = bfs_last(start, &visited);
            let e = bfs_last(far, &visited).1;
            if e <= ecc {
                break;
            }
            start = far;
            ecc = e;
        }
        let first = order.len();
        visited[start] = true;
        order.push(start);
        let mut head = first;
        while head < order.len() {
            let u = order[head];
            head += 1;
            let mut next: Vec<usize> = pattern
                .row(u)
                .map(|(v, _)| v)
                .filter(|&v| !visited[v])
                .collect();
            next.sort_by_key(|&v| (degree[v], v));
            for v in next {
                visited[v] = true;
                order.push(v);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (skyline) Cholesky factor of the free-coordinate system.
pub struct EnvelopeCholesky {
    /// Permuted dof -> original dof.
    perm: Vec<usize>,
    first: Vec<usize>,
    row_offset: Vec<usize>,
    values: Vec<f64>,
    free: Vec<bool>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &BlockSparse<'_>, free: &FreeMask) -> Result<Self> {
        let n = a.nodes();
        let dofs = 3 * n;
        let node_order = reverse_cuthill_mckee(a.pattern());
        let mut node_rank = vec![0usize; n];
        for (r, &node) in node_order.iter().enumerate() {
            node_rank[node] = r;
        }
        let perm: Vec<usize> = node_order
            .iter()
            .flat_map(|&node| (0..3).map(move |c| 3 * node + c))
            .collect();
        let free_flat: Vec<bool> = (0..dofs).map(|d| free[d / 3][d % 3]).collect();

        // first nonzero column per permuted row
        let mut first: Vec<usize> = (0..dofs).collect();
        for node in 0..n {
            let rn = node_rank[node];
            for (col, _) in a.pattern().row(node) {
                let rc = node_rank[col];
                if rc < rn {
                    for c in 0..3 {
                        let row = 3 * rn + c;
                        first[row] = first[row].min(3 * rc);
                    }
                }
            }
            for c in 0..3 {
                let row = 3 * rn + c;
                first[row] = first[row].min(3 * rn);
            }
        }
        for (row, f) in first.iter_mut().enumerate() {
            if !free_flat[perm[row]] {
                *f = row;
            }
        }
        let mut row_offset = Vec::with_capacity(dofs + 1);
        row_offset.push(0);
        for row in 0..dofs {
            let len = row - first[row] + 1;
            row_offset.push(row_offset[row] + len);
        }
        let mut values = vec![0.0; row_offset[dofs]];

        // scatter lower triangle of the permuted matrix
        for node in 0..n {
            let rn = node_rank[node];
            for (col, k) in a.pattern().row(node) {
                let rc = node_rank[col];
                if rc > rn {
                    continue;
                }
                let blk = a.blocks[k];
                for r in 0..3 {
                    let prow = 3 * rn + r;
                    if !free_flat[perm[prow]] {
                        continue;
                    }
                    for c in 0..3 {
                        let pcol = 3 * rc + c;
                        if pcol > prow || !free_flat[perm[pcol]] {
                            continue;
                        }
                        values[row_offset[prow] + pcol - first[prow]] = blk[(r, c)];
                    }
                }
            }
        }
        for row in 0..dofs {
            if !free_flat[perm[row]] {
                values[row_offset[row]] = 1.0;
            }
        }

        // row-oriented factorization
        for i in 0..dofs {
            let fi = first[i];
            let base_i = row_offset[i];
            for j in fi..=i {
                let fj = first[j];
                let base_j = row_offset[j];
                let start = fi.max(fj);
                let mut s = values[base_i + j - fi];
                let li = &values[base_i + start - fi..base_i + j - fi];
                let lj = &values[base_j + start - fj..base_j + j - fj];
                s -= li.iter().zip(lj).map(|(a, b)| a * b).sum::<f64>();
                if j < i {
                    let d = values[base_j + j - fj];
                    values[base_i + j - fi] = s / d;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::LinearSolve(format!(
                            "matrix not positive definite at dof {} (pivot {s:e})",
                            perm[i]
                        )));
                    }
                    values[base_i + i - fi] = s.sqrt();
                }
            }
        }
        Ok(Self {
            perm,
            first,
            row_offset,
            values,
            free: free_flat,
        })
    }

    pub fn solve(&self, rhs: &[Vec3]) -> Vec<Vec3> {
        let dofs = self.perm.len();
        let mut y: Vec<f64> = self
            .perm
            .iter()
            .map(|&d| {
                if self.free[d] {
                    rhs[d / 3][d % 3]
                } else {
                    0.0
                }
            })
            .collect();
        // L y = b
        for i in 0..dofs {
            let fi = self.first[i];
            let base = self.row_offset[i];
            let row = &self.values[base..base + i - fi];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.values[base + i - fi];
        }
        // L^T x = y
        for i in (0..dofs).rev() {
            let fi = self.first[i];
            let base = self.row_offset[i];
            y[i] /= self.values[base + i - fi];
            let xi = y[i];
            for (k, l) in self.values[base..base + i - fi].iter().enumerate() {
                y[fi + k] -= l * xi;
            }
        }
        let mut out = vec![Vec3::zeros(); dofs / 3];
        for (p, &d) in self.perm.iter().enumerate() {
            out[d / 3][d % 3] = if self.free[d] { y[p] } else { 0.0 };
        }
        out
    }

    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }
}
