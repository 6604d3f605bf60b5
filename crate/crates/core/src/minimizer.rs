//! Minimization of the discrete energy in full tensor mode and in the
//! uniaxial class `Q = s(n⊗n − I/3)`, plus the standard initial guesses.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{
    energy_and_gradient, field_from_uniaxial, DirectorField, EnergyParts, Field, FieldTensor,
};
use crate::field::{boundary_director, BoundarySpec};
use crate::grid::{chunked_max, chunked_sum, Grid, NodeKind, CHUNK};
use crate::optimize::{optimize, IterRecord, MinimizeOptions, Mode, Objective, Termination};
use crate::tensor::{dot3, norm3, MaterialParams, QTensor3, Vec3};

/// Result of a minimization.
#[derive(Clone, Debug)]
pub struct RunRecord<S> {
    pub state: S,
    pub history: Vec<IterRecord>,
    pub termination: Termination,
    pub iterations: usize,
    pub energy: EnergyParts,
    /// Final max-norm of the gradient per unit cell volume.
    pub residual: f64,
    /// Uniaxial mode only: nodes where `s` was clamped at zero.
    pub clamped_nodes: usize,
}

impl<S> RunRecord<S> {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

struct FullObjective<'a, T: FieldTensor> {
    grid: &'a Grid,
    p: MaterialParams,
    inv_diag: f64,
    _t: std::marker::PhantomData<T>,
}

impl<'a, T: FieldTensor> FullObjective<'a, T> {
    fn new(grid: &'a Grid, p: &MaterialParams) -> Self {
        let h2 = grid.h() * grid.h();
        let diag = grid.cell_volume()
            * (T::METRIC * 2.0 * grid.dim() as f64 / h2 + p.bulk_stiffness() / p.l);
        FullObjective {
            grid,
            p: *p,
            inv_diag: 1.0 / diag,
            _t: std::marker::PhantomData,
        }
    }
}

impl<T: FieldTensor> Objective for FullObjective<'_, T> {
    fn len(&self) -> usize {
        self.grid.len() * T::DOFS
    }
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> EnergyParts {
        energy_and_gradient::<T>(self.grid, x, &self.p, Some(grad))
    }
    fn precondition(&self, _x: &[f64], g: &[f64], out: &mut [f64]) {
        let s = self.inv_diag;
        out.par_iter_mut().zip(g.par_iter()).for_each(|(o, gi)| *o = gi * s);
    }
    fn residual(&self, g: &[f64]) -> f64 {
        max_abs(g) / self.grid.cell_volume()
    }
}

fn max_abs(g: &[f64]) -> f64 {
    chunked_max(g.len(), |r| r.map(|i| g[i].abs()).fold(0.0, f64::max))
}

/// Max-norm of the discrete Euler-Lagrange residual `−Δ_h Q + ∇f_B/L` at
/// interior nodes.
pub fn full_residual<T: FieldTensor>(f: &Field<T>, p: &MaterialParams) -> f64 {
    let mut g = vec![0.0; f.values().len()];
    energy_and_gradient::<T>(f.grid(), f.values(), p, Some(&mut g));
    max_abs(&g) / f.grid().cell_volume()
}

pub fn minimize_full<T: FieldTensor>(
    f0: &Field<T>,
    p: &MaterialParams,
    opts: &MinimizeOptions,
) -> Result<RunRecord<Field<T>>> {
    let obj = FullObjective::<T>::new(f0.grid(), p);
    let out = optimize(&obj, f0.values().to_vec(), opts)?;
    let mut field = f0.clone();
    field.set_interior_from(&out.x)?;
    Ok(RunRecord {
        state: field,
        history: out.history,
        termination: out.termination,
        iterations: out.iterations,
        energy: out.parts,
        residual: out.residual,
        clamped_nodes: 0,
    })
}

/// Scalar order parameter and director of a uniaxial field.
#[derive(Clone, Debug, PartialEq)]
pub struct UniaxialState {
    pub s: Vec<f64>,
    pub n: DirectorField,
}

impl UniaxialState {
    pub fn to_field(&self) -> Result<Field<QTensor3>> {
        field_from_uniaxial(&self.s, &self.n)
    }

    fn pack(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.s.len() * 4];
        for (i, (s, n)) in self.s.iter().zip(self.n.values()).enumerate() {
            x[4 * i] = *s;
            x[4 * i + 1..4 * i + 4].copy_from_slice(n);
        }
        x
    }
}

/// Order parameter below which the director equation is not imposed.
pub const ISOTROPIC_GUARD: f64 = 1e-6;

struct UniaxialObjective<'a> {
    grid: &'a Grid,
    p: MaterialParams,
    s_guard: f64,
    clamps: AtomicUsize,
}

impl<'a> UniaxialObjective<'a> {
    fn new(grid: &'a Grid, p: &MaterialParams) -> Self {
        UniaxialObjective {
            grid,
            p: *p,
            s_guard: ISOTROPIC_GUARD * p.s_plus,
            clamps: AtomicUsize::new(0),
        }
    }
}

#[inline]
fn node_sn(x: &[f64], i: usize) -> (f64, Vec3) {
    (x[4 * i], [x[4 * i + 1], x[4 * i + 2], x[4 * i + 3]])
}

/// Edge energy `½|Q_b − Q_a|²` for `Q = s(n⊗n − I/3)` (without `1/h²`).
#[inline]
pub fn uniaxial_edge_energy(sa: f64, sb: f64, c: f64) -> f64 {
    (sa * sa + sb * sb) / 3.0 - sa * sb * (c * c - 1.0 / 3.0)
}

impl UniaxialObjective<'_> {
    /// `(∂E/∂s, tangent ∂E/∂n)` at an interior node, per unit cell volume.
    fn node_gradient(&self, x: &[f64], idx: usize) -> (f64, Vec3) {
        let g = self.grid;
        let strides = g.strides();
        let inv_h2 = 1.0 / (g.h() * g.h());
        let (sa, na) = node_sn(x, idx);
        let mut gs = 0.0;
        let mut r = [0.0; 3];
        for &st in strides.iter().take(g.dim()) {
            for b in [idx - st, idx + st] {
                let (sb, nb) = node_sn(x, b);
                let c = dot3(&na, &nb);
                gs += 2.0 / 3.0 * sa - sb * (c * c - 1.0 / 3.0);
                for k in 0..3 {
                    r[k] += sb * c * (nb[k] - c * na[k]);
                }
            }
        }
        gs = gs * inv_h2 + self.p.uniaxial_bulk_derivative(sa) / self.p.l;
        let gn = if sa < self.s_guard {
            [0.0; 3]
        } else {
            let f = -2.0 * sa * inv_h2;
            [f * r[0], f * r[1], f * r[2]]
        };
        (gs, gn)
    }
}

impl Objective for UniaxialObjective<'_> {
    fn len(&self) -> usize {
        self.grid.len() * 4
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> EnergyParts {
        let g = self.grid;
        let n = g.extents();
        let strides = g.strides();
        let inv_h2 = 1.0 / (g.h() * g.h());
        let vol = g.cell_volume();
        let mask = g.mask();
        let parts: Vec<[f64; 2]> = grad
            .par_chunks_mut(CHUNK * 4)
            .enumerate()
            .map(|(c, gchunk)| {
                let mut acc = [0.0; 2];
                for (off, slot) in gchunk.chunks_mut(4).enumerate() {
                    let idx = c * CHUNK + off;
                    slot.iter_mut().for_each(|v| *v = 0.0);
                    if !mask[idx].in_domain() {
                        continue;
                    }
                    let (sa, na) = node_sn(x, idx);
                    let coords = g.coords(idx);
                    for axis in 0..g.dim() {
                        if coords[axis] + 1 >= n[axis] {
                            continue;
                        }
                        let b = idx + strides[axis];
                        if !mask[b].in_domain() {
                            continue;
                        }
                        let (sb, nb) = node_sn(x, b);
                        let e = uniaxial_edge_energy(sa, sb, dot3(&na, &nb));
                        acc[0] += e * inv_h2 * g.edge_weight(idx, axis) * vol;
                    }
                    acc[1] += g.node_weight(idx) * self.p.uniaxial_bulk(sa) / self.p.l * vol;
                    if mask[idx] == NodeKind::Interior {
                        let (gs, gn) = self.node_gradient(x, idx);
                        slot[0] = gs * vol;
                        for k in 0..3 {
                            slot[1 + k] = gn[k] * vol;
                        }
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
        EnergyParts {
            elastic: acc[0],
            bulk_over_l: acc[1],
        }
    }

    fn precondition(&self, x: &[f64], g: &[f64], out: &mut [f64]) {
        let grid = self.grid;
        let vol = grid.cell_volume();
        let lap = 2.0 * grid.dim() as f64 / (grid.h() * grid.h());
        let sp = self.p.s_plus;
        let kappa = (2.0 / 9.0)
            * (6.0 * self.p.c2 * sp * sp - 2.0 * self.p.b2 * sp - 3.0 * self.p.a2)
            / self.p.l;
        let ds = vol * (2.0 / 3.0 * lap + kappa.max(0.0));
        out.par_chunks_mut(4).enumerate().for_each(|(i, o)| {
            let s = x[4 * i];
            let dn = vol * 2.0 * lap * s.max(0.1 * sp).powi(2);
            o[0] = g[4 * i] / ds;
            for k in 1..4 {
                o[k] = g[4 * i + k] / dn;
            }
        });
    }

    fn retract(&self, x: &mut [f64]) {
        let mask = self.grid.mask();
        let clamps: usize = x
            .par_chunks_mut(4)
            .enumerate()
            .map(|(i, v)| {
                if mask[i] != NodeKind::Interior {
                    return 0;
                }
                let norm = (v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
                if norm > 0.0 {
                    for k in 1..4 {
                        v[k] /= norm;
                    }
                } else {
                    v[1..4].copy_from_slice(&[0.0, 0.0, 1.0]);
                }
                if v[0] < 0.0 {
                    v[0] = 0.0;
                    1
                } else {
                    0
                }
            })
            .sum();
        self.clamps.fetch_add(clamps, Ordering::Relaxed);
    }

    fn transport(&self, x: &[f64], v: &mut [f64]) {
        v.par_chunks_mut(4).enumerate().for_each(|(i, w)| {
            let n = [x[4 * i + 1], x[4 * i + 2], x[4 * i + 3]];
            let d = n[0] * w[1] + n[1] * w[2] + n[2] * w[3];
            for k in 0..3 {
                w[1 + k] -= d * n[k];
            }
        });
    }

    fn residual(&self, g: &[f64]) -> f64 {
        max_abs(g) / self.grid.cell_volume()
    }
}

/// Minimizes over `Q = s(n⊗n − I/3)`. Boundary nodes keep their `(s, n)`.
pub fn minimize_uniaxial(
    s0: &[f64],
    n0: &DirectorField,
    p: &MaterialParams,
    opts: &MinimizeOptions,
) -> Result<RunRecord<UniaxialState>> {
    let grid = n0.grid().clone();
    if s0.len() != grid.len() {
        return Err(Error::Shape("order parameter length mismatch".into()));
    }
    if s0
        .iter()
        .enumerate()
        .any(|(i, s)| grid.kind(i).in_domain() && !(*s >= 0.0 && s.is_finite()))
    {
        return Err(Error::InvalidParameter("initial order parameter must be non-negative".into()));
    }
    let start = UniaxialState {
        s: s0.to_vec(),
        n: n0.clone(),
    };
    let obj = UniaxialObjective::new(&grid, p);
    let out = optimize(&obj, start.pack(), opts)?;
    let s: Vec<f64> = out.x.chunks(4).map(|v| v[0]).collect();
    let n: Vec<Vec3> = out
        .x
        .chunks(4)
        .enumerate()
        .map(|(i, v)| if grid.kind(i).in_domain() { [v[1], v[2], v[3]] } else { [1.0, 0.0, 0.0] })
        .collect();
    let n = DirectorField::new(grid.clone(), n)?;
    Ok(RunRecord {
        state: UniaxialState { s, n },
        history: out.history,
        termination: out.termination,
        iterations: out.iterations,
        energy: out.parts,
        residual: out.residual,
        clamped_nodes: obj.clamps.load(Ordering::Relaxed),
    })
}

/// Discrete energy of a uniaxial state.
pub fn uniaxial_energy(state: &UniaxialState, p: &MaterialParams) -> EnergyParts {
    let grid = state.n.grid();
    let obj = UniaxialObjective::new(grid, p);
    let mut g = vec![0.0; grid.len() * 4];
    obj.evaluate(&state.pack(), &mut g)
}

/// Residual norms of the uniaxial equations, per unit cell volume, over the
/// interior nodes selected by `active`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UniaxialResiduals {
    /// `−(2/3)Δs + 2s|∇n|² + f_B'(s)/L`.
    pub s_equation: f64,
    /// Director equation divided by `s²`.
    pub director_equation: f64,
    /// Conservation form `∂ₖ(s²∂ₖn) + s²|∇n|²n`.
    pub conservation: f64,
    /// Spherical-angle forms: projections of the conservation form on `∂n/∂Θ`, `∂n/∂Φ`.
    pub theta: f64,
    pub phi: f64,
}

pub fn uniaxial_residuals(
    state: &UniaxialState,
    p: &MaterialParams,
    active: &dyn Fn(usize) -> bool,
) -> UniaxialResiduals {
    let grid = state.n.grid();
    let obj = UniaxialObjective::new(grid, p);
    let x = state.pack();
    let mut out = UniaxialResiduals::default();
    for &i in grid.interior_nodes() {
        if !active(i) {
            continue;
        }
        let (gs, gn) = obj.node_gradient(&x, i);
        out.s_equation = out.s_equation.max(gs.abs());
        let (sa, na) = node_sn(&x, i);
        if sa < obj.s_guard {
            continue;
        }
        // conservation-form residual R = −gn / 2
        let r = [-0.5 * gn[0], -0.5 * gn[1], -0.5 * gn[2]];
        out.conservation = out.conservation.max(norm3(&r));
        out.director_equation = out.director_equation.max(norm3(&r) / (sa * sa));
        let theta = na[2].clamp(-1.0, 1.0).acos();
        let phi = na[1].atan2(na[0]);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let dtheta = [ct * cp, ct * sp, -st];
        let dphi = [-st * sp, st * cp, 0.0];
        out.theta = out.theta.max(dot3(&r, &dtheta).abs());
        out.phi = out.phi.max(dot3(&r, &dphi).abs());
    }
    out
}

/// Per-node amplitude factor in `[0, 1]` and director of the initial guess.
fn initial_profile(grid: &Grid, spec: &BoundarySpec, bdir: &DirectorField) -> Vec<(f64, Vec3)> {
    match spec {
        BoundarySpec::Planar { degree } if *degree != 0.0 => {
            let k = (2.0 * degree).round() as i64;
            let count = k.unsigned_abs() as usize;
            let radius = (0..grid.len())
                .filter(|&i| grid.kind(i).in_domain())
                .map(|i| norm3(&grid.position(i)))
                .fold(0.0, f64::max);
            let zeros: Vec<[f64; 2]> = if count == 1 {
                vec![[0.0, 0.0]]
            } else {
                (0..count)
                    .map(|j| {
                        let t = 2.0 * std::f64::consts::PI * j as f64 / count as f64;
                        [0.3 * radius * t.cos(), 0.3 * radius * t.sin()]
                    })
                    .collect()
            };
            let r0 = 0.2 * radius;
            let sign = k.signum() as f64;
            (0..grid.len())
                .map(|i| {
                    let x = grid.position(i);
                    let mut phase = 0.0;
                    let mut amp: f64 = 1.0;
                    for z in &zeros {
                        let (dx, dy) = (x[0] - z[0], x[1] - z[1]);
                        phase += sign * dy.atan2(dx);
                        amp *= (dx.hypot(dy) / r0).min(1.0);
                    }
                    let t = 0.5 * phase;
                    (amp, [t.cos(), t.sin(), 0.0])
                })
                .collect()
        }
        BoundarySpec::Radial => (0..grid.len())
            .map(|i| {
                let x = grid.position(i);
                let r = norm3(&x);
                let n = if r == 0.0 { [0.0, 0.0, 1.0] } else { [x[0] / r, x[1] / r, x[2] / r] };
                ((r / 0.2).min(1.0), n)
            })
            .collect(),
        BoundarySpec::Planar { .. } | BoundarySpec::Uniform { .. } => {
            let n = grid
                .boundary_nodes()
                .first()
                .map(|&b| bdir.values()[b])
                .unwrap_or([1.0, 0.0, 0.0]);
            vec![(1.0, n); grid.len()]
        }
        BoundarySpec::Tabulated(field) => field.values().iter().map(|n| (1.0, *n)).collect(),
    }
}

/// Initial tensor field: boundary data on the boundary, the standard guess
/// for the boundary type inside.
pub fn initial_field<T: FieldTensor>(
    grid: &Arc<Grid>,
    spec: &BoundarySpec,
    p: &MaterialParams,
) -> Result<Field<T>> {
    let bdir = boundary_director(grid, spec)?;
    let profile = initial_profile(grid, spec, &bdir);
    let s = T::well_order(p);
    Field::with_boundary(grid.clone(), &bdir, p, |i| T::from_order(s * profile[i].0, &profile[i].1))
}

/// Initial `(s, n)` for the uniaxial mode with `s = s₊` and `n = n_b` on the
/// boundary.
pub fn initial_uniaxial(
    grid: &Arc<Grid>,
    spec: &BoundarySpec,
    p: &MaterialParams,
) -> Result<UniaxialState> {
    let bdir = boundary_director(grid, spec)?;
    let profile = initial_profile(grid, spec, &bdir);
    let mut s = vec![0.0; grid.len()];
    let mut n = vec![[1.0, 0.0, 0.0]; grid.len()];
    for i in 0..grid.len() {
        match grid.kind(i) {
            NodeKind::Exterior => {}
            NodeKind::Boundary => {
                s[i] = p.s_plus;
                n[i] = bdir.values()[i];
            }
            NodeKind::Interior => {
                s[i] = p.s_plus * profile[i].0;
                n[i] = profile[i].1;
            }
        }
    }
    Ok(UniaxialState {
        s,
        n: DirectorField::new(grid.clone(), n)?,
    })
}

/// Mean over interior nodes, used by callers that need a scalar summary.
pub fn interior_mean(grid: &Grid, v: &[f64]) -> f64 {
    let nodes = grid.interior_nodes();
    let total = chunked_sum(nodes.len(), |r| [r.map(|k| v[nodes[k]]).sum::<f64>()])[0];
    total / nodes.len() as f64
}

/// Mode-tagged result of one minimization, as used by continuation.
#[derive(Clone, Debug)]
pub enum ModeRecord {
    Full2(RunRecord<Field<crate::tensor::QTensor2>>),
    Full3(RunRecord<Field<QTensor3>>),
    Uniaxial(RunRecord<UniaxialState>),
}

impl ModeRecord {
    pub fn mode(&self) -> Mode {
        match self {
            ModeRecord::Uniaxial(_) => Mode::Uniaxial,
            _ => Mode::Full,
        }
    }

    pub fn history(&self) -> &[IterRecord] {
        match self {
            ModeRecord::Full2(r) => &r.history,
            ModeRecord::Full3(r) => &r.history,
            ModeRecord::Uniaxial(r) => &r.history,
        }
    }

    pub fn energy(&self) -> EnergyParts {
        match self {
            ModeRecord::Full2(r) => r.energy,
            ModeRecord::Full3(r) => r.energy,
            ModeRecord::Uniaxial(r) => r.energy,
        }
    }

    pub fn termination(&self) -> Termination {
        match self {
            ModeRecord::Full2(r) => r.termination,
            ModeRecord::Full3(r) => r.termination,
            ModeRecord::Uniaxial(r) => r.termination,
        }
    }

    pub fn residual(&self) -> f64 {
        match self {
            ModeRecord::Full2(r) => r.residual,
            ModeRecord::Full3(r) => r.residual,
            ModeRecord::Uniaxial(r) => r.residual,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            ModeRecord::Full2(r) => r.iterations,
            ModeRecord::Full3(r) => r.iterations,
            ModeRecord::Uniaxial(r) => r.iterations,
        }
    }
}
