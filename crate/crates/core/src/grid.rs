//! Uniform masked grids on 2D and 3D domains.
//!
//! Nodes live on the bounding box `[−half, half]^dim` with spacing `h`; node
//! `i` along an axis sits at `(i − (N−1)/2)·h`. The linear index is
//! `(i·ny + j)·nz + k` (the last axis varies fastest); 2D grids use `nz = 1`.

use std::collections::VecDeque;
use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Vec3;

/// Node classification. The numeric values are the mask codes written to
/// field dumps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum NodeKind {
    Exterior = 0,
    Boundary = 1,
    Interior = 2,
}

impl NodeKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<NodeKind> {
        match c {
            0 => Some(NodeKind::Exterior),
            1 => Some(NodeKind::Boundary),
            2 => Some(NodeKind::Interior),
            _ => None,
        }
    }

    pub fn in_domain(self) -> bool {
        self != NodeKind::Exterior
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Square { side: f64 },
    Disk { radius: f64 },
    Cube { side: f64 },
    Ball { radius: f64 },
    /// Mask supplied externally (e.g. read from a field dump).
    Imported { dim: usize },
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::Square { .. } | Shape::Disk { .. } => 2,
            Shape::Cube { .. } | Shape::Ball { .. } => 3,
            Shape::Imported { dim } => *dim,
        }
    }

    fn half_extent(&self) -> Option<f64> {
        match *self {
            Shape::Square { side } | Shape::Cube { side } => Some(0.5 * side),
            Shape::Disk { radius } | Shape::Ball { radius } => Some(radius),
            Shape::Imported { .. } => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Shape::Square { .. } => "square",
            Shape::Disk { .. } => "disk",
            Shape::Cube { .. } => "box",
            Shape::Ball { .. } => "ball",
            Shape::Imported { .. } => "imported",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resolution {
    /// Nodes per axis across the bounding box.
    Nodes(usize),
    /// Target spacing; the node count is rounded so the box is spanned exactly.
    Spacing(f64),
}

pub const MIN_NODES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    h: f64,
    shape: Shape,
    mask: Vec<NodeKind>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
}

/// Build the grid and mask for a shape.
pub fn build_domain(shape: Shape, resolution: Resolution) -> Result<Grid> {
    let half = shape
        .half_extent()
        .ok_or_else(|| Error::Domain("imported shapes are built with Grid::from_mask".into()))?;
    if !(half.is_finite() && half > 0.0) {
        return Err(Error::Domain(format!("degenerate {} (size {})", shape.tag(), 2.0 * half)));
    }
    let nodes = match resolution {
        Resolution::Nodes(n) => n,
        Resolution::Spacing(h) => {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Domain(format!("spacing must be positive (got {h})")));
            }
            (2.0 * half / h).round() as usize + 1
        }
    };
    if nodes < MIN_NODES {
        return Err(Error::Domain(format!(
            "resolution {nodes} is below the minimum of {MIN_NODES} nodes per axis"
        )));
    }
    let dim = shape.dim();
    let h = 2.0 * half / (nodes - 1) as f64;
    let n = if dim == 2 { [nodes, nodes, 1] } else { [nodes; 3] };
    let total = n[0] * n[1] * n[2];
    let offset = 0.5 * (nodes - 1) as f64;
    let inside: Vec<bool> = (0..total)
        .map(|idx| {
            let c = unravel(n, idx);
            let x: Vec<f64> = (0..dim).map(|a| (c[a] as f64 - offset) * h).collect();
            match shape {
                Shape::Disk { radius } | Shape::Ball { radius } => {
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    r2.sqrt() <= radius * (1.0 + 1e-12)
                }
                _ => true,
            }
        })
        .collect();
    Grid::classify(dim, n, h, shape, &inside)
}

fn unravel(n: [usize; 3], idx: usize) -> [usize; 3] {
    let k = idx % n[2];
    let j = (idx / n[2]) % n[1];
    let i = idx / (n[1] * n[2]);
    [i, j, k]
}

impl Grid {
    /// Grid from an explicit in-domain indicator; boundary and interior are
    /// recomputed from it.
    pub fn from_mask(dim: usize, n: [usize; 3], h: f64, in_domain: &[bool]) -> Result<Grid> {
        if dim != 2 && dim != 3 {
            return Err(Error::Domain(format!("dimension must be 2 or 3 (got {dim})")));
        }
        if dim == 2 && n[2] != 1 {
            return Err(Error::Domain("2D grids have nz = 1".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Domain(format!("spacing must be positive (got {h})")));
        }
        if in_domain.len() != n[0] * n[1] * n[2] {
            return Err(Error::Shape(format!(
                "mask has {} entries for a {}x{}x{} grid",
                in_domain.len(),
                n[0],
                n[1],
                n[2]
            )));
        }
        Grid::classify(dim, n, h, Shape::Imported { dim }, in_domain)
    }

    fn classify(dim: usize, n: [usize; 3], h: f64, shape: Shape, inside: &[bool]) -> Result<Grid> {
        let total = n[0] * n[1] * n[2];
        let mut g = Grid {
            dim,
            n,
            h,
            shape,
            mask: vec![NodeKind::Exterior; total],
            interior: Vec::new(),
            boundary: Vec::new(),
        };
        for idx in 0..total {
            if !inside[idx] {
                continue;
            }
            let c = unravel(n, idx);
            let mut boundary = false;
            for axis in 0..dim {
                if c[axis] == 0 || c[axis] + 1 == n[axis] {
                    boundary = true;
                    break;
                }
                let (lo, hi) = (g.shift(idx, axis, -1), g.shift(idx, axis, 1));
                if !inside[lo.unwrap()] || !inside[hi.unwrap()] {
                    boundary = true;
                    break;
                }
            }
            g.mask[idx] = if boundary { NodeKind::Boundary } else { NodeKind::Interior };
        }
        g.interior = (0..total).filter(|&i| g.mask[i] == NodeKind::Interior).collect();
        g.boundary = (0..total).filter(|&i| g.mask[i] == NodeKind::Boundary).collect();
        if g.interior.is_empty() {
            return Err(Error::Domain("domain has no interior nodes".into()));
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Node counts per axis; `nz = 1` in 2D.
    pub fn extents(&self) -> [usize; 3] {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask(&self) -> &[NodeKind] {
        &self.mask
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        self.mask[idx]
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.n[1] + c[1]) * self.n[2] + c[2]
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        unravel(self.n, idx)
    }

    /// Neighbour index one step along `axis` in direction `dir` (±1).
    pub fn shift(&self, idx: usize, axis: usize, dir: isize) -> Option<usize> {
        let c = self.coords(idx);
        let v = c[axis] as isize + dir;
        if v < 0 || v as usize >= self.n[axis] {
            return None;
        }
        let mut c2 = c;
        c2[axis] = v as usize;
        Some(self.index(c2))
    }

    /// Strides of the linear index per axis.
    pub fn strides(&self) -> [usize; 3] {
        [self.n[1] * self.n[2], self.n[2], 1]
    }

    pub fn position(&self, idx: usize) -> Vec3 {
        let c = self.coords(idx);
        let mut x = [0.0; 3];
        for (a, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = (c[a] as f64 - 0.5 * (self.n[a] - 1) as f64) * self.h;
        }
        x
    }

    /// Node nearest to a point (clamped to the bounding box).
    pub fn nearest_node(&self, x: &Vec3) -> usize {
        let mut c = [0usize; 3];
        for a in 0..self.dim {
            let f = x[a] / self.h + 0.5 * (self.n[a] - 1) as f64;
            c[a] = f.round().clamp(0.0, (self.n[a] - 1) as f64) as usize;
        }
        self.index(c)
    }

    fn axis_weight(&self, axis: usize, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n[axis] {
            0.5
        } else {
            1.0
        }
    }

    /// Trapezoid weight of a node (product of per-axis end weights).
    pub fn node_weight(&self, idx: usize) -> f64 {
        let c = self.coords(idx);
        (0..self.dim).map(|a| self.axis_weight(a, c[a])).product()
    }

    /// Weight of the edge from `idx` along `axis` (product over the other axes).
    pub fn edge_weight(&self, idx: usize, axis: usize) -> f64 {
        let c = self.coords(idx);
        (0..self.dim)
            .filter(|&a| a != axis)
            .map(|a| self.axis_weight(a, c[a]))
            .product()
    }

    /// Indices of the `3^dim − 1` surrounding nodes that exist on the grid.
    pub fn block_neighbors(&self, idx: usize) -> Vec<usize> {
        let c = self.coords(idx);
        let mut out = Vec::with_capacity(26);
        let kr: Range<isize> = if self.dim == 3 { -1..2 } else { 0..1 };
        for di in -1isize..2 {
            for dj in -1isize..2 {
                for dk in kr.clone() {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let ci = c[0] as isize + di;
                    let cj = c[1] as isize + dj;
                    let ck = c[2] as isize + dk;
                    if ci < 0
                        || cj < 0
                        || ck < 0
                        || ci as usize >= self.n[0]
                        || cj as usize >= self.n[1]
                        || ck as usize >= self.n[2]
                    {
                        continue;
                    }
                    out.push(self.index([ci as usize, cj as usize, ck as usize]));
                }
            }
        }
        out
    }

    /// Axis neighbours (up to `2·dim`) that exist on the grid.
    pub fn axis_neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim).flat_map(move |a| {
            [-1isize, 1]
                .into_iter()
                .filter_map(move |d| self.shift(idx, a, d))
        })
    }

    /// Connected components of the node set `member` under block (8/26)
    /// connectivity. Components are returned in order of their smallest index.
    pub fn components(&self, member: &[bool]) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if !member[start] || seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(v) = queue.pop_front() {
                comp.push(v);
                for w in self.block_neighbors(v) {
                    if member[w] && !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Number of graph steps from each in-domain node to the nearest boundary
    /// node (axis connectivity); `usize::MAX` for exterior nodes.
    pub fn boundary_distance(&self) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        for &b in &self.boundary {
            dist[b] = 0;
            queue.push_back(b);
        }
        while let Some(v) = queue.pop_front() {
            for w in self.axis_neighbors(v).collect::<Vec<_>>() {
                if self.mask[w].in_domain() && dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn same_layout(&self, other: &Grid) -> bool {
        self.dim == other.dim
            && self.n == other.n
            && (self.h - other.h).abs() <= 1e-12 * self.h
            && self.mask == other.mask
    }

    /// Boundary nodes ordered by polar angle (2D only); used as the outer loop
    /// in winding computations.
    pub fn boundary_loop(&self) -> Vec<usize> {
        let mut nodes: Vec<(f64, usize)> = self
            .boundary
            .iter()
            .map(|&b| {
                let x = self.position(b);
                (x[1].atan2(x[0]), b)
            })
            .collect();
        nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        nodes.into_iter().map(|(_, b)| b).collect()
    }
}

/// Node chunk size for deterministic parallel reductions. Partial sums are
/// formed per fixed chunk and combined sequentially, so results do not depend
/// on the number of worker threads.
pub const CHUNK: usize = 4096;

pub fn chunked_sum<const K: usize, F>(len: usize, f: F) -> [f64; K]
where
    F: Fn(Range<usize>) -> [f64; K] + Sync,
{
    let chunks = len.div_ceil(CHUNK);
    let parts: Vec<[f64; K]> = (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect();
    let mut acc = [0.0; K];
    for p in parts {
        for k in 0..K {
            acc[k] += p[k];
        }
    }
    acc
}

pub fn chunked_max<F>(len: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync,
{
    let chunks = len.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_outer_ring_boundary() {
        let g = build_domain(Shape::Square { side: 2.0 }, Resolution::Nodes(64)).unwrap();
        assert_eq!(g.extents(), [64, 64, 1]);
        assert_eq!(g.boundary_nodes().len(), 4 * 63);
        assert_eq!(g.interior_nodes().len(), 62 * 62);
        assert!((g.h() - 2.0 / 63.0).abs() < 1e-15);
        let corner = g.position(0);
        assert!((corner[0] + 1.0).abs() < 1e-15 && (corner[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn disk_interior_count_matches_area() {
        let h = 1.0 / 32.0;
        let g = build_domain(Shape::Disk { radius: 1.0 }, Resolution::Spacing(h)).unwrap();
        assert!((g.h() - h).abs() < 1e-15);
        let est = std::f64::consts::PI / (h * h);
        let count = g.mask().iter().filter(|k| k.in_domain()).count() as f64;
        assert!((count - est).abs() / est < 0.02, "{count} vs {est}");
    }

    #[test]
    fn interior_nodes_have_full_stencil() {
        for shape in [Shape::Disk { radius: 1.0 }, Shape::Ball { radius: 1.0 }] {
            let g = build_domain(shape, Resolution::Nodes(17)).unwrap();
            for &i in g.interior_nodes() {
                assert_eq!(g.axis_neighbors(i).count(), 2 * g.dim());
                assert!(g.axis_neighbors(i).all(|j| g.kind(j).in_domain()));
            }
        }
    }

    #[test]
    fn ball_shell_is_connected() {
        let g = build_domain(Shape::Ball { radius: 1.0 }, Resolution::Spacing(1.0 / 16.0)).unwrap();
        let member: Vec<bool> = g.mask().iter().map(|k| *k == NodeKind::Boundary).collect();
        assert_eq!(g.components(&member).len(), 1);
        let member: Vec<bool> = g.mask().iter().map(|k| *k == NodeKind::Interior).collect();
        assert_eq!(g.components(&member).len(), 1);
    }

    #[test]
    fn degenerate_shapes_rejected() {
        assert!(build_domain(Shape::Disk { radius: 0.0 }, Resolution::Nodes(32)).is_err());
        assert!(build_domain(Shape::Square { side: 1.0 }, Resolution::Nodes(8)).is_err());
        assert!(build_domain(Shape::Ball { radius: -1.0 }, Resolution::Nodes(32)).is_err());
    }

    #[test]
    fn trapezoid_weights_integrate_area() {
        let g = build_domain(Shape::Square { side: 1.0 }, Resolution::Nodes(20)).unwrap();
        let area: f64 = (0..g.len()).map(|i| g.node_weight(i)).sum::<f64>() * g.cell_volume();
        assert!((area - 1.0).abs() < 1e-13);
        let g = build_domain(Shape::Cube { side: 1.0 }, Resolution::Nodes(16)).unwrap();
        let vol: f64 = (0..g.len()).map(|i| g.node_weight(i)).sum::<f64>() * g.cell_volume();
        assert!((vol - 1.0).abs() < 1e-13);
    }

    #[test]
    fn from_mask_roundtrip() {
        let g = build_domain(Shape::Disk { radius: 1.0 }, Resolution::Nodes(33)).unwrap();
        let inside: Vec<bool> = g.mask().iter().map(|k| k.in_domain()).collect();
        let g2 = Grid::from_mask(2, g.extents(), g.h(), &inside).unwrap();
        assert!(g.same_layout(&g2));
    }

    #[test]
    fn chunked_sum_is_thread_independent() {
        let f = |r: Range<usize>| [r.map(|i| 1.0 / (1.0 + i as f64)).sum::<f64>()];
        let a = chunked_sum(100_000, f);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| chunked_sum(100_000, f));
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }
}
