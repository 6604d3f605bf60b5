//! Tensor and director fields on a [`Grid`], the discrete energy and its
//! exact gradient.
//!
//! The elastic energy is a sum over grid edges whose endpoints are both in the
//! domain, `½·|Q_b − Q_a|²/h²` times the edge's trapezoid weight and the cell
//! volume; the bulk term is the trapezoid rule on nodes. Both are exact sums
//! of squares and smooth functions of the node values, so the gradient below
//! is exact.

use std::marker::PhantomData;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{chunked_sum, Grid, NodeKind, CHUNK};
use crate::tensor::{
    decompose, dot3, norm3, uniaxial_unchecked, MaterialParams, OrderTensor, QTensor2, QTensor3,
    Vec3,
};

pub type Field3 = Field<QTensor3>;
pub type Field2 = Field<QTensor2>;

/// Order parameter and director read off a single tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderInfo {
    pub s: f64,
    pub n: Vec3,
    pub biaxial: bool,
    pub isotropic: bool,
}

/// Operations that depend on the tensor representation beyond the algebra in
/// [`OrderTensor`].
pub trait FieldTensor: OrderTensor {
    /// Spatial dimension the representation belongs to.
    const SPACE_DIM: usize;
    /// Amplitude of the bulk well in the `s(n⊗n − I/dim)` representation.
    fn well_order(p: &MaterialParams) -> f64;
    /// `s(n⊗n − I/dim)`; `n` must be unit (only the first `dim` components are used in 2D).
    fn from_order(s: f64, n: &Vec3) -> Self;
    fn order_info(&self, tol: f64) -> OrderInfo;
    /// Radius of the bulk well, the bound used by the maximum principle.
    fn well_norm(p: &MaterialParams) -> f64;
}

impl FieldTensor for QTensor3 {
    const SPACE_DIM: usize = 3;
    fn well_order(p: &MaterialParams) -> f64 {
        p.s_plus
    }
    fn from_order(s: f64, n: &Vec3) -> Self {
        uniaxial_unchecked(s, n)
    }
    fn order_info(&self, tol: f64) -> OrderInfo {
        let d = decompose(self, tol);
        OrderInfo {
            s: if d.isotropic { 0.0 } else { d.s_l },
            n: d.n,
            biaxial: !d.uniaxial && !d.isotropic,
            isotropic: d.isotropic,
        }
    }
    fn well_norm(p: &MaterialParams) -> f64 {
        (2.0f64 / 3.0).sqrt() * p.s_plus
    }
}

impl FieldTensor for QTensor2 {
    const SPACE_DIM: usize = 2;
    fn well_order(p: &MaterialParams) -> f64 {
        p.planar_s_plus()
    }
    fn from_order(s: f64, n: &Vec3) -> Self {
        QTensor2::new(
            s * (n[0] * n[0] - 0.5 * (n[0] * n[0] + n[1] * n[1])),
            s * n[0] * n[1],
        )
    }
    fn order_info(&self, _tol: f64) -> OrderInfo {
        let s = self.order();
        if s == 0.0 {
            return OrderInfo {
                s: 0.0,
                n: [1.0, 0.0, 0.0],
                biaxial: false,
                isotropic: true,
            };
        }
        let phi = 0.5 * self.phase();
        OrderInfo {
            s,
            n: [phi.cos(), phi.sin(), 0.0],
            biaxial: false,
            isotropic: false,
        }
    }
    fn well_norm(p: &MaterialParams) -> f64 {
        (p.a2 / p.c2).sqrt()
    }
}

/// Grid field of order tensors with frozen Dirichlet data on boundary nodes.
#[derive(Clone, Debug)]
pub struct Field<T: FieldTensor> {
    grid: Arc<Grid>,
    values: Vec<f64>,
    boundary_values: Vec<f64>,
    _t: PhantomData<T>,
}

impl<T: FieldTensor> PartialEq for Field<T> {
    fn eq(&self, other: &Self) -> bool {
        self.grid.same_layout(&other.grid) && self.values == other.values
    }
}

impl<T: FieldTensor> Field<T> {
    /// Field with `value(idx)` at every in-domain node and zero outside.
    pub fn from_fn(grid: Arc<Grid>, mut value: impl FnMut(usize) -> T) -> Result<Self> {
        if grid.dim() != T::SPACE_DIM && !(grid.dim() == 2 && T::SPACE_DIM == 3) {
            return Err(Error::Shape(format!(
                "{}-dof tensors cannot live on a {}D grid",
                T::DOFS,
                grid.dim()
            )));
        }
        let d = T::DOFS;
        let mut values = vec![0.0; grid.len() * d];
        for idx in 0..grid.len() {
            if grid.kind(idx).in_domain() {
                let v = value(idx);
                v.write(&mut values[idx * d..(idx + 1) * d]);
            }
        }
        Field::from_values(grid, values)
    }

    /// Field from a flat coefficient array (`DOFS` values per node). The values
    /// on boundary nodes become the frozen Dirichlet data.
    pub fn from_values(grid: Arc<Grid>, mut values: Vec<f64>) -> Result<Self> {
        let d = T::DOFS;
        if values.len() != grid.len() * d {
            return Err(Error::Shape(format!(
                "expected {} coefficients, got {}",
                grid.len() * d,
                values.len()
            )));
        }
        for idx in 0..grid.len() {
            let slot = &mut values[idx * d..(idx + 1) * d];
            if grid.kind(idx) == NodeKind::Exterior {
                slot.iter_mut().for_each(|v| *v = 0.0);
            } else if slot.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("node {idx}")));
            }
        }
        let boundary_values = grid
            .boundary_nodes()
            .iter()
            .flat_map(|&b| values[b * d..(b + 1) * d].to_vec())
            .collect();
        Ok(Field {
            grid,
            values,
            boundary_values,
            _t: PhantomData,
        })
    }

    /// Boundary nodes take `T::well(n_b)`; interior nodes take `interior(idx)`.
    pub fn with_boundary(
        grid: Arc<Grid>,
        boundary: &DirectorField,
        p: &MaterialParams,
        mut interior: impl FnMut(usize) -> T,
    ) -> Result<Self> {
        if !grid.same_layout(boundary.grid()) {
            return Err(Error::Shape("boundary director lives on a different grid".into()));
        }
        let s = T::well_order(p);
        let g = grid.clone();
        Field::from_fn(grid, |idx| {
            if g.kind(idx) == NodeKind::Boundary {
                T::from_order(s, &boundary.values()[idx])
            } else {
                interior(idx)
            }
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.boundary_values
    }

    pub fn get(&self, idx: usize) -> T {
        T::read(&self.values[idx * T::DOFS..])
    }

    /// Overwrite an interior node. Boundary and exterior nodes are immutable.
    pub fn set(&mut self, idx: usize, v: T) -> Result<()> {
        if self.grid.kind(idx) != NodeKind::Interior {
            return Err(Error::Domain(format!("node {idx} is not an interior node")));
        }
        v.write(&mut self.values[idx * T::DOFS..(idx + 1) * T::DOFS]);
        Ok(())
    }

    /// Replace all interior values from a flat array; boundary and exterior
    /// entries of `values` are ignored.
    pub fn set_interior_from(&mut self, values: &[f64]) -> Result<()> {
        let d = T::DOFS;
        if values.len() != self.values.len() {
            return Err(Error::Shape("coefficient array length mismatch".into()));
        }
        for &i in self.grid.interior_nodes() {
            self.values[i * d..(i + 1) * d].copy_from_slice(&values[i * d..(i + 1) * d]);
        }
        Ok(())
    }

    /// True when the boundary nodes still hold the frozen data.
    pub fn boundary_intact(&self) -> bool {
        let d = T::DOFS;
        self.grid
            .boundary_nodes()
            .iter()
            .enumerate()
            .all(|(k, &b)| self.values[b * d..(b + 1) * d] == self.boundary_values[k * d..(k + 1) * d])
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len())
            .filter(|&i| self.grid.kind(i).in_domain())
            .map(|i| self.get(i).norm_sq().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn map_interior(&self, mut f: impl FnMut(usize, T) -> T) -> Result<Self> {
        let mut out = self.clone();
        for &i in self.grid.interior_nodes() {
            let v = f(i, self.get(i));
            v.write(&mut out.values[i * T::DOFS..(i + 1) * T::DOFS]);
        }
        Ok(out)
    }
}

/// Elastic and bulk parts of the discrete energy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyParts {
    pub elastic: f64,
    pub bulk_over_l: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.elastic + self.bulk_over_l
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyBreakdown {
    pub elastic: f64,
    pub bulk_over_l: f64,
    pub total: f64,
    /// Nodal energy density `½|∇Q|² + f_B/L` (zero outside the domain).
    pub per_node_density: Vec<f64>,
}

/// Discrete energy of a coefficient array and, optionally, its exact gradient
/// with respect to the interior values (zero at boundary and exterior nodes).
pub fn energy_and_gradient<T: FieldTensor>(
    grid: &Grid,
    values: &[f64],
    p: &MaterialParams,
    grad: Option<&mut [f64]>,
) -> EnergyParts {
    let d = T::DOFS;
    let dim = grid.dim();
    let n = grid.extents();
    let strides = grid.strides();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let vol = grid.cell_volume();
    let inv_l = 1.0 / p.l;
    let mask = grid.mask();

    let node_energy = |idx: usize| -> [f64; 2] {
        if !mask[idx].in_domain() {
            return [0.0, 0.0];
        }
        let c = grid.coords(idx);
        let a = &values[idx * d..(idx + 1) * d];
        let mut el = 0.0;
        for axis in 0..dim {
            if c[axis] + 1 >= n[axis] {
                continue;
            }
            let b = idx + strides[axis];
            if !mask[b].in_domain() {
                continue;
            }
            let vb = &values[b * d..(b + 1) * d];
            let diff: f64 = a.iter().zip(vb).map(|(x, y)| (y - x) * (y - x)).sum();
            el += 0.5 * T::METRIC * diff * inv_h2 * grid.edge_weight(idx, axis);
        }
        let bulk = grid.node_weight(idx) * T::read(a).bulk(p) * inv_l;
        [el * vol, bulk * vol]
    };

    let node_grad = |idx: usize, out: &mut [f64]| {
        let a = &values[idx * d..(idx + 1) * d];
        let mut lap = [0.0f64; 5];
        for axis in 0..dim {
            for b in [idx - strides[axis], idx + strides[axis]] {
                let vb = &values[b * d..(b + 1) * d];
                for k in 0..d {
                    lap[k] += a[k] - vb[k];
                }
            }
        }
        let g = T::read(a).bulk_coeff_gradient(p);
        for k in 0..d {
            out[k] = vol * (T::METRIC * lap[k] * inv_h2 + g.component(k) * inv_l);
        }
    };

    let [elastic, bulk] = match grad {
        None => chunked_sum(grid.len(), |r| {
            let mut acc = [0.0; 2];
            for i in r {
                let e = node_energy(i);
                acc[0] += e[0];
                acc[1] += e[1];
            }
            acc
        }),
        Some(grad) => {
            let parts: Vec<[f64; 2]> = grad
                .par_chunks_mut(CHUNK * d)
                .enumerate()
                .map(|(c, gchunk)| {
                    let start = c * CHUNK;
                    let mut acc = [0.0; 2];
                    for (off, slot) in gchunk.chunks_mut(d).enumerate() {
                        let i = start + off;
                        let e = node_energy(i);
                        acc[0] += e[0];
                        acc[1] += e[1];
                        if mask[i] == NodeKind::Interior {
                            node_grad(i, slot);
                        } else {
                            slot.iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    acc
                })
                .collect();
            let mut acc = [0.0; 2];
            for p in parts {
                acc[0] += p[0];
                acc[1] += p[1];
            }
            acc
        }
    };
    EnergyParts {
        elastic,
        bulk_over_l: bulk,
    }
}

/// Nodal `½|∇Q|²` using, per axis, the mean of the available one-sided
/// squared differences.
pub fn nodal_elastic_density<T: FieldTensor>(f: &Field<T>) -> Vec<f64> {
    let grid = f.grid();
    let d = T::DOFS;
    let v = f.values();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            if !grid.kind(idx).in_domain() {
                return 0.0;
            }
            let a = &v[idx * d..(idx + 1) * d];
            let mut total = 0.0;
            for axis in 0..grid.dim() {
                let mut sum = 0.0;
                let mut cnt = 0;
                for dir in [-1, 1] {
                    if let Some(b) = grid.shift(idx, axis, dir) {
                        if grid.kind(b).in_domain() {
                            let vb = &v[b * d..(b + 1) * d];
                            sum += a.iter().zip(vb).map(|(x, y)| (y - x) * (y - x)).sum::<f64>();
                            cnt += 1;
                        }
                    }
                }
                if cnt > 0 {
                    total += sum / cnt as f64;
                }
            }
            0.5 * T::METRIC * total * inv_h2
        })
        .collect()
}

pub fn total_energy<T: FieldTensor>(f: &Field<T>, p: &MaterialParams) -> EnergyBreakdown {
    let parts = energy_and_gradient::<T>(f.grid(), f.values(), p, None);
    let mut density = nodal_elastic_density(f);
    for (i, e) in density.iter_mut().enumerate() {
        if f.grid().kind(i).in_domain() {
            *e += f.get(i).bulk(p) / p.l;
        }
    }
    EnergyBreakdown {
        elastic: parts.elastic,
        bulk_over_l: parts.bulk_over_l,
        total: parts.total(),
        per_node_density: density,
    }
}

/// Exact gradient of [`total_energy`] with respect to interior coefficients.
pub fn discrete_gradient<T: FieldTensor>(f: &Field<T>, p: &MaterialParams) -> Vec<f64> {
    let mut g = vec![0.0; f.values().len()];
    energy_and_gradient::<T>(f.grid(), f.values(), p, Some(&mut g));
    g
}

/// Central-difference Laplacian of each component of a nodal array
/// (`dofs` values per node), evaluated at interior nodes; zero elsewhere.
pub fn laplacian(grid: &Grid, values: &[f64], dofs: usize) -> Vec<f64> {
    let strides = grid.strides();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = vec![0.0; values.len()];
    for &i in grid.interior_nodes() {
        for k in 0..dofs {
            let mut acc = 0.0;
            for &s in strides.iter().take(grid.dim()) {
                acc += values[(i + s) * dofs + k] + values[(i - s) * dofs + k]
                    - 2.0 * values[i * dofs + k];
            }
            out[i * dofs + k] = acc * inv_h2;
        }
    }
    out
}

/// `(1/r)·Σ_{|x−center| ≤ r} e_L h^dim`. The ball must lie in the interior.
pub fn normalized_ball_energy<T: FieldTensor>(
    f: &Field<T>,
    p: &MaterialParams,
    center: &Vec3,
    r: f64,
) -> Result<f64> {
    let e = total_energy(f, p);
    ball_energy_from_density(f.grid(), &e.per_node_density, center, r)
}

/// Same as [`normalized_ball_energy`] for a precomputed nodal density.
pub fn ball_energy_from_density(grid: &Grid, density: &[f64], center: &Vec3, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Region(format!("ball radius must be positive (got {r})")));
    }
    let n = grid.extents();
    for a in 0..grid.dim() {
        let half = 0.5 * (n[a] - 1) as f64 * grid.h();
        if center[a] - r <= -half || center[a] + r >= half {
            return Err(Error::Region("ball leaves the bounding box".into()));
        }
    }
    let mut sum = 0.0;
    for idx in 0..grid.len() {
        let x = grid.position(idx);
        let d2: f64 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum();
        if d2 <= r * r * (1.0 + 1e-12) {
            if grid.kind(idx) != NodeKind::Interior {
                return Err(Error::Region("ball intersects the domain boundary".into()));
            }
            sum += density[idx];
        }
    }
    Ok(sum * grid.cell_volume() / r)
}

/// Unit-vector field on a grid (S¹ fields use the first two components and
/// keep the third at zero).
#[derive(Clone, Debug)]
pub struct DirectorField {
    grid: Arc<Grid>,
    values: Vec<Vec3>,
}

impl PartialEq for DirectorField {
    fn eq(&self, other: &Self) -> bool {
        self.grid.same_layout(&other.grid) && self.values == other.values
    }
}

pub const UNIT_TOL: f64 = 1e-10;

impl DirectorField {
    /// Checks `|n| = 1` at every in-domain node; exterior entries are replaced
    /// by `e1`.
    pub fn new(grid: Arc<Grid>, mut values: Vec<Vec3>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "expected {} directors, got {}",
                grid.len(),
                values.len()
            )));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if grid.kind(i).in_domain() {
                let norm = norm3(v);
                if !((norm - 1.0).abs() <= UNIT_TOL) {
                    return Err(Error::NotUnit { norm });
                }
                if grid.dim() == 2 && v[2] != 0.0 {
                    return Err(Error::Shape("planar directors must have zero z component".into()));
                }
            } else {
                *v = [1.0, 0.0, 0.0];
            }
        }
        Ok(DirectorField { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(usize) -> Vec3) -> Result<Self> {
        let values = (0..grid.len()).map(f).collect();
        DirectorField::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    /// Number of stored components: 2 on planar grids, 3 otherwise.
    pub fn components(&self) -> usize {
        self.grid.dim()
    }

    /// Nodal `|∇n|²` from the head-tail invariant edge quantity
    /// `1 − (n_a·n_b)²`, averaged per axis over the available neighbours.
    pub fn grad_sq(&self) -> Vec<f64> {
        let g = &self.grid;
        let inv_h2 = 1.0 / (g.h() * g.h());
        (0..g.len())
            .into_par_iter()
            .map(|idx| {
                if !g.kind(idx).in_domain() {
                    return 0.0;
                }
                let na = &self.values[idx];
                let mut total = 0.0;
                for axis in 0..g.dim() {
                    let mut sum = 0.0;
                    let mut cnt = 0;
                    for dir in [-1, 1] {
                        if let Some(b) = g.shift(idx, axis, dir) {
                            if g.kind(b).in_domain() {
                                let c = dot3(na, &self.values[b]);
                                sum += 1.0 - c * c;
                                cnt += 1;
                            }
                        }
                    }
                    if cnt > 0 {
                        total += sum / cnt as f64;
                    }
                }
                total * inv_h2
            })
            .collect()
    }
}

/// Boundary data for the director.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundarySpec {
    /// `n_b(θ) = (cos dθ, sin dθ)` on planar domains; `d` is the director
    /// degree and may be a half-integer.
    Planar { degree: f64 },
    /// `n_b = x/|x|` on 3D domains.
    Radial,
    Uniform { director: Vec3 },
    /// Directors supplied per node; only boundary values are used.
    Tabulated(DirectorField),
}

/// Director field carrying the boundary data. Nodes off the boundary receive
/// the same formula where it is defined (used for initialization).
pub fn boundary_director(grid: &Arc<Grid>, spec: &BoundarySpec) -> Result<DirectorField> {
    match spec {
        BoundarySpec::Planar { degree } => {
            if grid.dim() != 2 {
                return Err(Error::Domain("planar boundary data need a 2D grid".into()));
            }
            if !((2.0 * degree).fract() == 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "planar degree must be an integer or half-integer (got {degree})"
                )));
            }
            let d = *degree;
            DirectorField::from_fn(grid.clone(), |i| {
                let x = grid.position(i);
                let theta = x[1].atan2(x[0]);
                [(d * theta).cos(), (d * theta).sin(), 0.0]
            })
        }
        BoundarySpec::Radial => {
            if grid.dim() != 3 {
                return Err(Error::Domain("radial boundary data need a 3D grid".into()));
            }
            DirectorField::from_fn(grid.clone(), |i| {
                let x = grid.position(i);
                let r = norm3(&x);
                if r == 0.0 {
                    [0.0, 0.0, 1.0]
                } else {
                    [x[0] / r, x[1] / r, x[2] / r]
                }
            })
        }
        BoundarySpec::Uniform { director } => {
            let norm = norm3(director);
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(Error::NotUnit { norm });
            }
            DirectorField::from_fn(grid.clone(), |_| *director)
        }
        BoundarySpec::Tabulated(field) => {
            if !grid.same_layout(field.grid()) {
                return Err(Error::Shape("tabulated directors live on a different grid".into()));
            }
            for &b in grid.boundary_nodes() {
                let norm = norm3(&field.values()[b]);
                if (norm - 1.0).abs() > UNIT_TOL {
                    return Err(Error::NotUnit { norm });
                }
            }
            Ok(field.clone())
        }
    }
}

/// Nodewise order parameter, sign-aligned director and flags.
#[derive(Clone, Debug, PartialEq)]
pub struct UniaxialFields {
    pub s: Vec<f64>,
    pub n: DirectorField,
    pub biaxial: Vec<bool>,
    pub isotropic: Vec<bool>,
}

pub fn uniaxial_fields<T: FieldTensor>(f: &Field<T>, tol: f64) -> UniaxialFields {
    let grid = f.grid();
    let len = grid.len();
    let infos: Vec<OrderInfo> = (0..len)
        .into_par_iter()
        .map(|i| {
            if grid.kind(i).in_domain() {
                f.get(i).order_info(tol)
            } else {
                OrderInfo {
                    s: 0.0,
                    n: [1.0, 0.0, 0.0],
                    biaxial: false,
                    isotropic: false,
                }
            }
        })
        .collect();
    let mut n: Vec<Vec3> = infos.iter().map(|o| o.n).collect();
    let isotropic: Vec<bool> = infos.iter().map(|o| o.isotropic).collect();
    align_directors(grid, &mut n, &isotropic);
    UniaxialFields {
        s: infos.iter().map(|o| o.s).collect(),
        n: DirectorField {
            grid: grid.clone(),
            values: n,
        },
        biaxial: infos.iter().map(|o| o.biaxial).collect(),
        isotropic,
    }
}

/// Greedy breadth-first sign alignment `n → ±n` so neighbouring directors
/// have non-negative inner product wherever possible. Nodes in `skip` neither
/// receive nor pass on orientation.
pub fn align_directors(grid: &Grid, n: &mut [Vec3], skip: &[bool]) {
    let mut seen = vec![false; grid.len()];
    for seed in 0..grid.len() {
        if seen[seed] || !grid.kind(seed).in_domain() || skip[seed] {
            continue;
        }
        seen[seed] = true;
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(v) = queue.pop_front() {
            let nv = n[v];
            let nbrs: Vec<usize> = grid.axis_neighbors(v).collect();
            for w in nbrs {
                if seen[w] || !grid.kind(w).in_domain() || skip[w] {
                    continue;
                }
                seen[w] = true;
                if dot3(&nv, &n[w]) < 0.0 {
                    n[w] = [-n[w][0], -n[w][1], -n[w][2]];
                }
                queue.push_back(w);
            }
        }
    }
}

/// Q-field `s(n⊗n − I/dim)` from nodal order parameter and director.
pub fn field_from_uniaxial<T: FieldTensor>(s: &[f64], n: &DirectorField) -> Result<Field<T>> {
    let grid = n.grid().clone();
    if s.len() != grid.len() {
        return Err(Error::Shape("order parameter length mismatch".into()));
    }
    Field::from_fn(grid, |i| T::from_order(s[i], &n.values()[i]))
}

/// Nodal |∇s| by central differences (one-sided where a neighbour is
/// missing from the domain).
pub fn scalar_gradient_norm(grid: &Grid, s: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|idx| {
            if !grid.kind(idx).in_domain() {
                return 0.0;
            }
            let mut g2 = 0.0;
            for axis in 0..grid.dim() {
                let lo = grid.shift(idx, axis, -1).filter(|&b| grid.kind(b).in_domain());
                let hi = grid.shift(idx, axis, 1).filter(|&b| grid.kind(b).in_domain());
                let d = match (lo, hi) {
                    (Some(a), Some(b)) => (s[b] - s[a]) / (2.0 * grid.h()),
                    (None, Some(b)) => (s[b] - s[idx]) / grid.h(),
                    (Some(a), None) => (s[idx] - s[a]) / grid.h(),
                    (None, None) => 0.0,
                };
                g2 += d * d;
            }
            g2.sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, Resolution, Shape};
    use crate::tensor::make_uniaxial;

    fn unit_params() -> MaterialParams {
        MaterialParams::new(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn square(side: f64, n: usize) -> Arc<Grid> {
        Arc::new(build_domain(Shape::Square { side }, Resolution::Nodes(n)).unwrap())
    }

    #[test]
    fn constant_minimizer_has_zero_energy() {
        let g = square(1.0, 20);
        let p = unit_params();
        let q = make_uniaxial(p.s_plus, &[0.0, 0.0, 1.0]).unwrap();
        let f = Field3::from_fn(g.clone(), |_| q).unwrap();
        let e = total_energy(&f, &p);
        assert!(e.total.abs() < 1e-14);
        let q2 = QTensor2::from_director_angle(p.planar_s_plus(), 0.3);
        let f2 = Field2::from_fn(g, |_| q2).unwrap();
        assert!(total_energy(&f2, &p).total.abs() < 1e-14);
    }

    #[test]
    fn zero_field_integrates_gauge_constant() {
        let g = square(1.0, 33);
        let p = unit_params();
        let f = Field3::from_fn(g.clone(), |_| QTensor3::ZERO).unwrap();
        let e = total_energy(&f, &p);
        assert!((e.total - 0.4375).abs() < 1e-13);
        assert_eq!(e.elastic, 0.0);
        let f2 = Field2::from_fn(g, |_| QTensor2::ZERO).unwrap();
        assert!((total_energy(&f2, &p).total - 0.25).abs() < 1e-13);
    }

    #[test]
    fn linear_field_elastic_energy() {
        let g = square(1.0, 24);
        let p = unit_params();
        let slope = 0.7;
        let gg = g.clone();
        let f = Field3::from_fn(g, |i| {
            let x = gg.position(i);
            QTensor3::new([slope * x[0], slope * x[0], 0.0, 0.0, 0.0])
        })
        .unwrap();
        let e = total_energy(&f, &p);
        assert!((e.elastic - 0.5 * slope * slope * 2.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_examples() {
        let g = square(2.0, 21);
        let vals: Vec<f64> = (0..g.len()).map(|i| g.position(i)[0].powi(2)).collect();
        let lap = laplacian(&g, &vals, 1);
        for &i in g.interior_nodes() {
            assert!((lap[i] - 2.0).abs() < 1e-10);
        }
        let vals: Vec<f64> = (0..g.len()).map(|i| g.position(i)[0] * g.position(i)[1]).collect();
        assert!(laplacian(&g, &vals, 1).iter().all(|v| v.abs() < 1e-10));
        let vals = vec![3.0; g.len()];
        assert!(laplacian(&g, &vals, 1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = Arc::new(build_domain(Shape::Disk { radius: 1.0 }, Resolution::Nodes(17)).unwrap());
        let p = MaterialParams::new(1.0, 1.0, 1.0, 0.1).unwrap();
        let mut k = 0u64;
        let mut rnd = || {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((k >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let f = Field3::from_fn(g.clone(), |_| {
            QTensor3::new([rnd(), rnd(), rnd(), rnd(), rnd()])
        })
        .unwrap();
        let grad = discrete_gradient(&f, &p);
        let dir: Vec<f64> = (0..f.values().len())
            .map(|i| if g.kind(i / 5) == NodeKind::Interior { rnd() } else { 0.0 })
            .collect();
        let eps = 1e-6;
        let plus: Vec<f64> = f.values().iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = f.values().iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
        let ep = energy_and_gradient::<QTensor3>(&g, &plus, &p, None).total();
        let em = energy_and_gradient::<QTensor3>(&g, &minus, &p, None).total();
        let fd = (ep - em) / (2.0 * eps);
        let an: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((fd - an).abs() / an.abs() < 1e-6, "{fd} vs {an}");
        for &b in g.boundary_nodes() {
            assert!(grad[b * 5..b * 5 + 5].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn ball_energy_of_constant_density() {
        let g = square(2.0, 81);
        let density = vec![1.0; g.len()];
        let r = 0.5;
        let f = ball_energy_from_density(&g, &density, &[0.0, 0.0, 0.0], r).unwrap();
        let exact = std::f64::consts::PI * r;
        assert!((f - exact).abs() / exact < 0.02);
        assert!(ball_energy_from_density(&g, &density, &[0.0, 0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn uniaxial_fields_examples() {
        let g = Arc::new(build_domain(Shape::Cube { side: 1.0 }, Resolution::Nodes(16)).unwrap());
        let p = unit_params();
        let q = make_uniaxial(p.s_plus, &[0.0, 0.0, 1.0]).unwrap();
        let mut f = Field3::from_fn(g.clone(), |_| q).unwrap();
        let u = uniaxial_fields(&f, 1e-8);
        for i in 0..g.len() {
            assert!((u.s[i] - p.s_plus).abs() < 1e-13);
            assert!((u.n.values()[i][2].abs() - 1.0).abs() < 1e-13);
        }
        assert!(u.biaxial.iter().all(|b| !b));
        let mid = g.interior_nodes()[100];
        f.set(mid, QTensor3::ZERO).unwrap();
        let u = uniaxial_fields(&f, 1e-8);
        assert!(u.isotropic[mid]);
        assert_eq!(u.isotropic.iter().filter(|b| **b).count(), 1);
    }

    #[test]
    fn gradient_identity_for_uniaxial_fields() {
        let g = Arc::new(build_domain(Shape::Cube { side: 1.0 }, Resolution::Nodes(41)).unwrap());
        let gg = g.clone();
        let s: Vec<f64> = (0..g.len())
            .map(|i| {
                let x = gg.position(i);
                1.0 + 0.3 * x[0] + 0.2 * x[1] * x[2]
            })
            .collect();
        let n = DirectorField::from_fn(g.clone(), |i| {
            let x = gg.position(i);
            let (a, b) = (0.8 * x[0] + 0.3, 0.5 * x[2]);
            [a.sin() * b.cos(), a.sin() * b.sin(), a.cos()]
        })
        .unwrap();
        let f: Field3 = field_from_uniaxial(&s, &n).unwrap();
        let direct = nodal_elastic_density(&f);
        let gs = scalar_gradient_norm(&g, &s);
        let gn = n.grad_sq();
        let mut worst: f64 = 0.0;
        for &i in g.interior_nodes() {
            let split = 0.5 * ((2.0 / 3.0) * gs[i] * gs[i] + 2.0 * s[i] * s[i] * gn[i]);
            worst = worst.max((split - direct[i]).abs());
        }
        assert!(worst < 0.1 * g.h() * 10.0, "{worst}");
    }

    #[test]
    fn boundary_director_examples() {
        let g = Arc::new(build_domain(Shape::Disk { radius: 1.0 }, Resolution::Nodes(33)).unwrap());
        let b = boundary_director(&g, &BoundarySpec::Planar { degree: 1.0 }).unwrap();
        let x = g.position(g.boundary_nodes()[0]);
        let n = b.values()[g.boundary_nodes()[0]];
        let r = norm3(&x);
        assert!((n[0] - x[0] / r).abs() < 1e-12 && (n[1] - x[1] / r).abs() < 1e-12);
        assert!(boundary_director(&g, &BoundarySpec::Planar { degree: 0.3 }).is_err());
        assert!(boundary_director(&g, &BoundarySpec::Radial).is_err());
        let bad = DirectorField {
            grid: g.clone(),
            values: vec![[2.0, 0.0, 0.0]; g.len()],
        };
        assert!(matches!(
            boundary_director(&g, &BoundarySpec::Tabulated(bad)),
            Err(Error::NotUnit { .. })
        ));
    }

    #[test]
    fn boundary_nodes_are_immutable() {
        let g = square(1.0, 16);
        let mut f = Field2::from_fn(g.clone(), |_| QTensor2::new(0.1, 0.2)).unwrap();
        assert!(f.set(g.boundary_nodes()[0], QTensor2::ZERO).is_err());
        let zeros = vec![0.0; f.values().len()];
        f.set_interior_from(&zeros).unwrap();
        assert!(f.boundary_intact());
    }
}
