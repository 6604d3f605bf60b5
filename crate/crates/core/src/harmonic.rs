//! Harmonic maps into the sphere: the limiting director problem, its
//! singular set, and the canonical planar map with prescribed punctures.

use std::sync::Arc;

use rayon::prelude::*;

use crate::defects::{director_winding, wrap_angle};
use crate::error::{Error, Result};
use crate::field::{field_from_uniaxial, DirectorField, EnergyParts, Field3};
use crate::grid::{chunked_max, Grid, NodeKind, CHUNK};
use crate::minimizer::RunRecord;
use crate::optimize::{optimize, MinimizeOptions, Objective};
use crate::tensor::{MaterialParams, Vec3};

struct Dirichlet<'a> {
    grid: &'a Grid,
}

impl Objective for Dirichlet<'_> {
    fn len(&self) -> usize {
        self.grid.len() * 3
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> EnergyParts {
        let g = self.grid;
        let n = g.extents();
        let strides = g.strides();
        let inv_h2 = 1.0 / (g.h() * g.h());
        let vol = g.cell_volume();
        let mask = g.mask();
        let parts: Vec<f64> = grad
            .par_chunks_mut(CHUNK * 3)
            .enumerate()
            .map(|(c, gchunk)| {
                let mut acc = 0.0;
                for (off, slot) in gchunk.chunks_mut(3).enumerate() {
                    let idx = c * CHUNK + off;
                    slot.iter_mut().for_each(|v| *v = 0.0);
                    if !mask[idx].in_domain() {
                        continue;
                    }
                    let a = &x[3 * idx..3 * idx + 3];
                    let coords = g.coords(idx);
                    for axis in 0..g.dim() {
                        if coords[axis] + 1 >= n[axis] {
                            continue;
                        }
                        let b = idx + strides[axis];
                        if !mask[b].in_domain() {
                            continue;
                        }
                        let d2: f64 = (0..3).map(|k| (x[3 * b + k] - a[k]).powi(2)).sum();
                        acc += 0.5 * d2 * inv_h2 * g.edge_weight(idx, axis) * vol;
                    }
                    if mask[idx] == NodeKind::Interior {
                        let mut lap = [0.0; 3];
                        for &st in strides.iter().take(g.dim()) {
                            for b in [idx - st, idx + st] {
                                for k in 0..3 {
                                    lap[k] += a[k] - x[3 * b + k];
                                }
                            }
                        }
                        let radial: f64 = (0..3).map(|k| lap[k] * a[k]).sum();
                        for k in 0..3 {
                            slot[k] = vol * inv_h2 * (lap[k] - radial * a[k]);
                        }
                    }
                }
                acc
            })
            .collect();
        EnergyParts {
            elastic: parts.iter().sum(),
            bulk_over_l: 0.0,
        }
    }

    fn precondition(&self, _x: &[f64], g: &[f64], out: &mut [f64]) {
        let diag = self.grid.cell_volume() * 2.0 * self.grid.dim() as f64
            / (self.grid.h() * self.grid.h());
        out.par_iter_mut().zip(g.par_iter()).for_each(|(o, gi)| *o = gi / diag);
    }

    fn retract(&self, x: &mut [f64]) {
        let mask = self.grid.mask();
        x.par_chunks_mut(3).enumerate().for_each(|(i, v)| {
            if mask[i] == NodeKind::Interior {
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|c| *c /= norm);
                }
            }
        });
    }

    fn transport(&self, x: &[f64], v: &mut [f64]) {
        v.par_chunks_mut(3).enumerate().for_each(|(i, w)| {
            let n = &x[3 * i..3 * i + 3];
            let d = n[0] * w[0] + n[1] * w[1] + n[2] * w[2];
            for k in 0..3 {
                w[k] -= d * n[k];
            }
        });
    }

    fn residual(&self, g: &[f64]) -> f64 {
        chunked_max(g.len(), |r| r.map(|i| g[i].abs()).fold(0.0, f64::max)) / self.grid.cell_volume()
    }
}

/// Discrete Dirichlet energy `½Σ_edges |Δn|²/h²` (trapezoid-weighted).
pub fn dirichlet_energy(n: &DirectorField) -> f64 {
    let obj = Dirichlet { grid: n.grid() };
    let x: Vec<f64> = n.values().iter().flatten().copied().collect();
    let mut g = vec![0.0; x.len()];
    obj.evaluate(&x, &mut g).elastic
}

/// Max-norm of the tangent part of the discrete Laplacian at interior nodes.
pub fn harmonic_residual(n: &DirectorField) -> f64 {
    let obj = Dirichlet { grid: n.grid() };
    let x: Vec<f64> = n.values().iter().flatten().copied().collect();
    let mut g = vec![0.0; x.len()];
    obj.evaluate(&x, &mut g);
    obj.residual(&g)
}

/// Harmonic-map flow with pointwise renormalization. Boundary nodes take the
/// values of `boundary`; `opts.grad_tol` bounds the tangent Laplacian.
pub fn minimize_dirichlet(
    n0: &DirectorField,
    boundary: &DirectorField,
    opts: &MinimizeOptions,
) -> Result<RunRecord<DirectorField>> {
    let grid = n0.grid().clone();
    if !grid.same_layout(boundary.grid()) {
        return Err(Error::Shape("boundary directors live on a different grid".into()));
    }
    if grid.dim() == 2 {
        let w = director_winding(boundary, &grid.boundary_loop())?;
        if w.abs() > 0.25 {
            return Err(Error::Topology(format!(
                "planar boundary data of degree {w} admit no finite-energy S¹-valued extension"
            )));
        }
    }
    let mut x: Vec<f64> = n0.values().iter().flatten().copied().collect();
    for &b in grid.boundary_nodes() {
        x[3 * b..3 * b + 3].copy_from_slice(&boundary.values()[b]);
    }
    let obj = Dirichlet { grid: &grid };
    obj.retract(&mut x);
    let out = optimize(&obj, x, opts)?;
    let values: Vec<Vec3> = out.x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(RunRecord {
        state: DirectorField::new(grid, values)?,
        history: out.history,
        termination: out.termination,
        iterations: out.iterations,
        energy: out.parts,
        residual: out.residual,
        clamped_nodes: 0,
    })
}

/// `s₊(n⊗n − I/3)` at every node.
pub fn limiting_map(n: &DirectorField, p: &MaterialParams) -> Result<Field3> {
    let s = vec![p.s_plus; n.grid().len()];
    field_from_uniaxial(&s, n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingularPoint {
    pub position: Vec3,
    pub nodes: Vec<usize>,
    /// Sum of the flagged nodal scaled energies.
    pub weight: f64,
}

pub const SINGULAR_THRESHOLD: f64 = 4.0;

/// Nodal scaled energy `Σ_b |n_b − n_a|²` over the axis neighbours in the domain
/// (a discrete `|∇n|²h²`).
pub fn scaled_energy(n: &DirectorField) -> Vec<f64> {
    let g = n.grid();
    (0..g.len())
        .map(|i| {
            if !g.kind(i).in_domain() {
                return 0.0;
            }
            let a = n.values()[i];
            g.axis_neighbors(i)
                .filter(|&b| g.kind(b).in_domain())
                .map(|b| {
                    let v = n.values()[b];
                    (0..3).map(|k| (v[k] - a[k]).powi(2)).sum::<f64>()
                })
                .sum()
        })
        .collect()
}

/// Nodes whose scaled energy exceeds `threshold`, clustered by block
/// connectivity; each cluster is reported at its energy-weighted centroid.
/// Results are ordered lexicographically by position.
pub fn singular_set(n: &DirectorField, threshold: f64) -> Vec<SingularPoint> {
    let g = n.grid();
    let e = scaled_energy(n);
    let member: Vec<bool> = e.iter().map(|v| *v > threshold).collect();
    let mut out: Vec<SingularPoint> = g
        .components(&member)
        .into_iter()
        .map(|nodes| {
            let weight: f64 = nodes.iter().map(|&i| e[i]).sum();
            let mut c = [0.0; 3];
            for &i in &nodes {
                let x = g.position(i);
                for k in 0..3 {
                    c[k] += e[i] * x[k] / weight;
                }
            }
            SingularPoint {
                position: c,
                nodes,
                weight,
            }
        })
        .collect();
    out.sort_by(|a, b| a.position.partial_cmp(&b.position).unwrap_or(std::cmp::Ordering::Equal));
    out
}

/// Planar director with prescribed punctures.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalMap {
    pub director: DirectorField,
    /// Director angle `Σ dᵢ arg(x − bᵢ) + H` (continuous away from the
    /// punctures and the branch cuts of the `arg` terms).
    pub angle: Vec<f64>,
    /// Harmonic correction `H`.
    pub correction: Vec<f64>,
}

/// Canonical harmonic map for director degrees `dᵢ` (integers or
/// half-integers) at the interior points `bᵢ`, matching `boundary`.
pub fn canonical_harmonic_2d(defects: &[(Vec3, f64)], boundary: &DirectorField) -> Result<CanonicalMap> {
    let grid = boundary.grid().clone();
    if grid.dim() != 2 {
        return Err(Error::Domain("canonical harmonic maps are planar".into()));
    }
    for (_, d) in defects {
        if (2.0 * d).fract() != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "defect degree {d} is not an integer or half-integer"
            )));
        }
    }
    let loop_nodes = grid.boundary_loop();
    let wb = director_winding(boundary, &loop_nodes)?;
    let total: f64 = defects.iter().map(|(_, d)| d).sum();
    if (total - wb).abs() > 1e-9 {
        return Err(Error::Topology(format!(
            "defect degrees sum to {total} but the boundary winding is {wb}"
        )));
    }
    // doubled angles carry integer degrees and are single valued mod 2π
    let singular = |x: &Vec3| -> f64 {
        defects
            .iter()
            .map(|(b, d)| 2.0 * d * (x[1] - b[1]).atan2(x[0] - b[0]))
            .sum()
    };
    let mut lifted = vec![0.0; grid.len()];
    let mut prev: Option<f64> = None;
    let mut first = 0.0;
    for &b in &loop_nodes {
        let n = boundary.values()[b];
        let raw = 2.0 * n[1].atan2(n[0]) - singular(&grid.position(b));
        let v = match prev {
            None => {
                first = wrap_angle(raw);
                first
            }
            Some(p) => p + wrap_angle(raw - p),
        };
        lifted[b] = v;
        prev = Some(v);
    }
    if let Some(last) = prev {
        let close = last + wrap_angle(first - last) - first;
        if close.abs() > 1e-6 {
            return Err(Error::Topology("boundary mismatch does not close".into()));
        }
    }
    for v in lifted.iter_mut() {
        *v *= 0.5;
    }
    let correction = solve_laplace(&grid, &lifted)?;
    let angle: Vec<f64> = (0..grid.len())
        .map(|i| {
            if grid.kind(i).in_domain() {
                0.5 * singular(&grid.position(i)) + correction[i]
            } else {
                0.0
            }
        })
        .collect();
    let director = DirectorField::from_fn(grid.clone(), |i| [angle[i].cos(), angle[i].sin(), 0.0])?;
    Ok(CanonicalMap {
        director,
        angle,
        correction,
    })
}

/// Solves `Δ_h u = 0` at interior nodes with `u = data` on boundary nodes by
/// conjugate gradients.
pub fn solve_laplace(grid: &Arc<Grid>, data: &[f64]) -> Result<Vec<f64>> {
    let interior = grid.interior_nodes();
    let strides = grid.strides();
    let dim = grid.dim();
    let mut u = vec![0.0; grid.len()];
    for &b in grid.boundary_nodes() {
        u[b] = data[b];
    }
    // A x = −Δ_h x h² on interior unknowns; rhs from boundary values
    let apply = |x: &[f64], out: &mut [f64]| {
        for &i in interior {
            let mut acc = 2.0 * dim as f64 * x[i];
            for &st in strides.iter().take(dim) {
                for b in [i - st, i + st] {
                    if grid.kind(b) == NodeKind::Interior {
                        acc -= x[b];
                    }
                }
            }
            out[i] = acc;
        }
    };
    let mut rhs = vec![0.0; grid.len()];
    for &i in interior {
        for &st in strides.iter().take(dim) {
            for b in [i - st, i + st] {
                if grid.kind(b) == NodeKind::Boundary {
                    rhs[i] += u[b];
                }
            }
        }
    }
    let mut x = vec![0.0; grid.len()];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; grid.len()];
    let dot = |a: &[f64], b: &[f64]| interior.iter().map(|&i| a[i] * b[i]).sum::<f64>();
    let mut rr = dot(&r, &r);
    let target = 1e-26 * dot(&rhs, &rhs).max(1e-300);
    for _ in 0..10 * interior.len() {
        if rr <= target {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for &i in interior {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr1 = dot(&r, &r);
        let beta = rr1 / rr;
        for &i in interior {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr1;
    }
    if !(rr <= target.max(1e-20)) {
        return Err(Error::NonFinite("Laplace solve did not converge".into()));
    }
    for &i in interior {
        u[i] = x[i];
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{boundary_director, nodal_elastic_density, BoundarySpec};
    use crate::grid::{build_domain, Resolution, Shape};
    use crate::optimize::Method;
    use crate::tensor::{bulk_energy, norm3};

    fn ball(n: usize) -> Arc<Grid> {
        Arc::new(build_domain(Shape::Ball { radius: 1.0 }, Resolution::Nodes(n)).unwrap())
    }

    fn disk(n: usize) -> Arc<Grid> {
        Arc::new(build_domain(Shape::Disk { radius: 1.0 }, Resolution::Nodes(n)).unwrap())
    }

    #[test]
    fn constant_boundary_gives_constant_map() {
        let g = ball(17);
        let b = boundary_director(&g, &BoundarySpec::Uniform { director: [0.0, 0.0, 1.0] }).unwrap();
        let gg = g.clone();
        let n0 = DirectorField::from_fn(g.clone(), |i| {
            let x = gg.position(i);
            let v = [0.2 * x[0], 0.1, 1.0];
            let r = norm3(&v);
            [v[0] / r, v[1] / r, v[2] / r]
        })
        .unwrap();
        let opts = MinimizeOptions {
            method: Method::NonlinearCg,
            grad_tol: 1e-9,
            ..Default::default()
        };
        let rec = minimize_dirichlet(&n0, &b, &opts).unwrap();
        assert!(rec.converged());
        assert!(rec.energy.total() < 1e-12);
        for w in rec.history.windows(2) {
            assert!(w[1].energy <= w[0].energy * (1.0 + 1e-12) + 1e-15);
        }
        assert!(harmonic_residual(&rec.state) < 1e-9);
        assert!(rec.state.values().iter().all(|v| (norm3(v) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn radial_boundary_gives_hedgehog() {
        let g = ball(24);
        let b = boundary_director(&g, &BoundarySpec::Radial).unwrap();
        // start away from the hedgehog: radial field bent towards e3
        let gg = g.clone();
        let n0 = DirectorField::from_fn(g.clone(), |i| {
            let x = gg.position(i);
            let v = [x[0], x[1], x[2] + 0.3];
            let r = norm3(&v);
            [v[0] / r, v[1] / r, v[2] / r]
        })
        .unwrap();
        let opts = MinimizeOptions {
            method: Method::NonlinearCg,
            grad_tol: 1e-6,
            max_iters: 5000,
            ..Default::default()
        };
        let rec = minimize_dirichlet(&n0, &b, &opts).unwrap();
        let mut sum = 0.0;
        let mut cnt = 0.0;
        for i in 0..g.len() {
            let x = g.position(i);
            let r = norm3(&x);
            if g.kind(i).in_domain() && r > 0.2 {
                let n = rec.state.values()[i];
                sum += (n[0] * x[0] + n[1] * x[1] + n[2] * x[2]).abs() / r;
                cnt += 1.0;
            }
        }
        assert!(sum / cnt > 0.99, "{}", sum / cnt);
        let pts = singular_set(&rec.state, SINGULAR_THRESHOLD);
        assert_eq!(pts.len(), 1);
        assert!(norm3(&pts[0].position) < 2.0 * g.h());
    }

    #[test]
    fn planar_nonzero_degree_rejected() {
        let g = disk(21);
        let b = boundary_director(&g, &BoundarySpec::Planar { degree: 1.0 }).unwrap();
        assert!(matches!(
            minimize_dirichlet(&b, &b, &MinimizeOptions::default()),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn limiting_map_properties() {
        let g = ball(16);
        let p = MaterialParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let n = boundary_director(&g, &BoundarySpec::Uniform { director: [0.0, 0.0, 1.0] }).unwrap();
        let q = limiting_map(&n, &p).unwrap();
        let m = q.get(g.interior_nodes()[0]).to_matrix();
        assert!((m[2][2] - 2.0 * p.s_plus / 3.0).abs() < 1e-14);
        assert!((m[0][0] + p.s_plus / 3.0).abs() < 1e-14);
        let gg = ball(41);
        let ggg = gg.clone();
        let n = DirectorField::from_fn(gg.clone(), |i| {
            let x = ggg.position(i);
            let t = 0.7 * x[0] + 0.4 * x[1] * x[1];
            [t.sin(), 0.0, t.cos()]
        })
        .unwrap();
        let q = limiting_map(&n, &p).unwrap();
        let target = (2.0f64 / 3.0).sqrt() * p.s_plus;
        for i in 0..gg.len() {
            if gg.kind(i).in_domain() {
                assert!((q.get(i).norm() - target).abs() < 1e-12);
                assert!(bulk_energy(&q.get(i), &p).abs() < 1e-13);
            }
        }
        let dq = nodal_elastic_density(&q);
        let dn = n.grad_sq();
        let mut worst: f64 = 0.0;
        for &i in gg.interior_nodes() {
            worst = worst.max((2.0 * dq[i] - 2.0 * p.s_plus * p.s_plus * dn[i]).abs());
        }
        assert!(worst < 5.0 * gg.h(), "{worst}");
    }

    #[test]
    fn canonical_map_symmetric_case() {
        let g = disk(41);
        let b = boundary_director(&g, &BoundarySpec::Planar { degree: 1.0 }).unwrap();
        let m = canonical_harmonic_2d(&[([0.0, 0.0, 0.0], 1.0)], &b).unwrap();
        assert!(m.correction.iter().all(|c| c.abs() < 1e-9));
        assert!(canonical_harmonic_2d(&[([0.0, 0.0, 0.0], 0.5)], &b).is_err());
        assert!(canonical_harmonic_2d(&[([0.0, 0.0, 0.0], 0.3)], &b).is_err());
    }

    #[test]
    fn canonical_map_windings_and_log_growth() {
        let g = disk(129);
        let b = boundary_director(&g, &BoundarySpec::Planar { degree: 1.0 }).unwrap();
        let pts = [([0.3, 0.1, 0.0], 0.5), ([-0.25, -0.2, 0.0], 0.5)];
        let m = canonical_harmonic_2d(&pts, &b).unwrap();
        for (p, d) in &pts {
            let c = g.nearest_node(p);
            let ring = crate::defects::square_loop(&g, c, 4).unwrap();
            let w = director_winding(&m.director, &ring).unwrap();
            assert!((w - d).abs() < 1e-9, "{w}");
        }
        // single degree-1 puncture off center: Σ|∇n|² over Ω∖B_ε grows like 2π log(1/ε)
        let b0 = [0.2, -0.1, 0.0];
        let m = canonical_harmonic_2d(&[(b0, 1.0)], &b).unwrap();
        let gn = m.director.grad_sq();
        let energy_outside = |eps: f64| -> f64 {
            (0..g.len())
                .filter(|&i| {
                    let x = g.position(i);
                    g.kind(i).in_domain() && ((x[0] - b0[0]).powi(2) + (x[1] - b0[1]).powi(2)).sqrt() > eps
                })
                .map(|i| gn[i] * g.node_weight(i))
                .sum::<f64>()
                * g.cell_volume()
        };
        let (e1, e2) = (0.05, 0.2);
        let slope = (energy_outside(e1) - energy_outside(e2)) / (e2 / e1).ln();
        let expect = 2.0 * std::f64::consts::PI;
        assert!((slope - expect).abs() / expect < 0.1, "{slope}");
    }
}
