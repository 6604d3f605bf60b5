//! Defect analysis: isotropic set, winding numbers and degrees, sub-grid
//! localization, core-profile fits and the renormalized energy on the disk.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{uniaxial_fields, DirectorField, Field, FieldTensor};
use crate::grid::{Grid, NodeKind};
use crate::io::Num;
use crate::tensor::{cross3, dot3, norm3, MaterialParams, Vec3, UNIAXIAL_TOL};

/// Default isotropic-set threshold as a fraction of the well order.
pub const ISOTROPIC_FRAC: f64 = 0.3;

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

fn closed_winding(angles: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = angles.collect();
    if v.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..v.len() {
        total += wrap_angle(v[(k + 1) % v.len()] - v[k]);
    }
    // the sum of wrapped increments is an exact multiple of 2π up to rounding
    (total / (2.0 * PI)).round()
}

/// The pair whose phase is the doubled director angle: `(q1, q2)` for planar
/// tensors, `((Q11 − Q22)/2, Q12)` up to a common factor otherwise.
pub fn planar_pair<T: FieldTensor>(q: &T) -> (f64, f64) {
    if T::DOFS == 2 {
        (q.component(0), q.component(1))
    } else {
        (q.component(0), q.component(2))
    }
}

/// Q-winding of a planar field along a closed node cycle.
pub fn q_winding<T: FieldTensor>(f: &Field<T>, cycle: &[usize]) -> Result<f64> {
    let mut angles = Vec::with_capacity(cycle.len());
    for &i in cycle {
        let (a, b) = planar_pair(&f.get(i));
        if a == 0.0 && b == 0.0 {
            return Err(Error::Topology(format!("winding loop passes through a zero at node {i}")));
        }
        angles.push(b.atan2(a));
    }
    Ok(closed_winding(angles.into_iter()))
}

/// Director winding by line-field lifting; half-integers are possible.
pub fn director_winding(n: &DirectorField, cycle: &[usize]) -> Result<f64> {
    let mut angles = Vec::with_capacity(cycle.len());
    for &i in cycle {
        let v = n.values()[i];
        if v[0].hypot(v[1]) < 1e-12 {
            return Err(Error::Topology(format!(
                "director is normal to the plane at node {i}"
            )));
        }
        angles.push(2.0 * v[1].atan2(v[0]));
    }
    Ok(0.5 * closed_winding(angles.into_iter()))
}

/// Counter-clockwise cycle of nodes at Chebyshev distance `k` around `center`
/// on a planar grid.
pub fn square_loop(grid: &Grid, center: usize, k: usize) -> Result<Vec<usize>> {
    if grid.dim() != 2 || k == 0 {
        return Err(Error::Domain("square loops need a planar grid and k ≥ 1".into()));
    }
    let c = grid.coords(center);
    let n = grid.extents();
    let (ci, cj, k) = (c[0] as isize, c[1] as isize, k as isize);
    if ci - k < 0 || cj - k < 0 || ci + k >= n[0] as isize || cj + k >= n[1] as isize {
        return Err(Error::Region("loop leaves the grid".into()));
    }
    let mut pts = Vec::with_capacity(8 * k as usize);
    for j in -k..k {
        pts.push((ci + k, cj + j));
    }
    for i in (-k + 1..=k).rev() {
        pts.push((ci + i, cj + k));
    }
    for j in (-k + 1..=k).rev() {
        pts.push((ci - k, cj + j));
    }
    for i in -k..k {
        pts.push((ci + i, cj - k));
    }
    let out: Vec<usize> = pts
        .into_iter()
        .map(|(i, j)| grid.index([i as usize, j as usize, 0]))
        .collect();
    if out.iter().any(|&i| !grid.kind(i).in_domain()) {
        return Err(Error::Region("loop leaves the domain".into()));
    }
    Ok(out)
}

/// Q-windings of all unit plaquettes whose corners lie in the domain and
/// avoid exact zeros, keyed by the lower-left corner.
pub fn plaquette_windings<T: FieldTensor>(f: &Field<T>) -> Result<Vec<(usize, f64)>> {
    let g = f.grid();
    if g.dim() != 2 {
        return Err(Error::Domain("plaquette windings are planar".into()));
    }
    let s = g.strides();
    let n = g.extents();
    let mut out = Vec::new();
    for i in 0..n[0] - 1 {
        for j in 0..n[1] - 1 {
            let a = g.index([i, j, 0]);
            let cycle = [a, a + s[0], a + s[0] + s[1], a + s[1]];
            if cycle.iter().any(|&c| !g.kind(c).in_domain()) {
                continue;
            }
            if let Ok(w) = q_winding(f, &cycle) {
                out.push((a, w));
            }
        }
    }
    Ok(out)
}

/// Degree of the director on the surface of the node cube of half-width `k`
/// around `center`, from signed solid angles after sign alignment along the
/// surface. Line fields fix the degree only up to sign.
pub fn surface_degree(n: &DirectorField, center: usize, k: usize) -> Result<f64> {
    let g = n.grid();
    if g.dim() != 3 || k == 0 {
        return Err(Error::Domain("surface degrees need a 3D grid and k ≥ 1".into()));
    }
    let c = g.coords(center);
    let ext = g.extents();
    for a in 0..3 {
        if c[a] < k || c[a] + k >= ext[a] {
            return Err(Error::Region("surface leaves the grid".into()));
        }
    }
    let ki = k as isize;
    let at = |o: [isize; 3]| -> usize {
        g.index([
            (c[0] as isize + o[0]) as usize,
            (c[1] as isize + o[1]) as usize,
            (c[2] as isize + o[2]) as usize,
        ])
    };
    // offsets of surface nodes and their aligned directors
    let side = 2 * k + 1;
    let local = |o: [isize; 3]| -> usize {
        (((o[0] + ki) as usize * side) + (o[1] + ki) as usize) * side + (o[2] + ki) as usize
    };
    let on_surface = |o: [isize; 3]| o.iter().all(|v| v.abs() <= ki) && o.iter().any(|v| v.abs() == ki);
    let mut dirs: Vec<Option<Vec3>> = vec![None; side * side * side];
    let start = [ki, 0, 0];
    let mut queue = std::collections::VecDeque::from([start]);
    let first = at(start);
    if !g.kind(first).in_domain() {
        return Err(Error::Region("surface leaves the domain".into()));
    }
    dirs[local(start)] = Some(n.values()[first]);
    while let Some(o) = queue.pop_front() {
        let v = dirs[local(o)].unwrap();
        for a in 0..3 {
            for d in [-1isize, 1] {
                let mut w = o;
                w[a] += d;
                if !on_surface(w) || dirs[local(w)].is_some() {
                    continue;
                }
                let idx = at(w);
                if !g.kind(idx).in_domain() {
                    return Err(Error::Region("surface leaves the domain".into()));
                }
                let mut m = n.values()[idx];
                if dot3(&m, &v) < 0.0 {
                    m = [-m[0], -m[1], -m[2]];
                }
                dirs[local(w)] = Some(m);
                queue.push_back(w);
            }
        }
    }
    let mut total = 0.0;
    for a in 0..3 {
        for sigma in [-1isize, 1] {
            let (mut b, mut cc) = ((a + 1) % 3, (a + 2) % 3);
            if sigma < 0 {
                std::mem::swap(&mut b, &mut cc);
            }
            let point = |u: isize, v: isize| -> Vec3 {
                let mut o = [0isize; 3];
                o[a] = sigma * ki;
                o[b] = u;
                o[cc] = v;
                dirs[local(o)].unwrap()
            };
            for u in -ki..ki {
                for v in -ki..ki {
                    let p00 = point(u, v);
                    let p10 = point(u + 1, v);
                    let p11 = point(u + 1, v + 1);
                    let p01 = point(u, v + 1);
                    total += solid_angle(&p00, &p10, &p11) + solid_angle(&p00, &p11, &p01);
                }
            }
        }
    }
    Ok(total / (4.0 * PI))
}

/// Signed solid angle of the spherical triangle spanned by unit vectors.
pub fn solid_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let num = dot3(a, &cross3(b, c));
    let den = 1.0 + dot3(a, b) + dot3(b, c) + dot3(c, a);
    2.0 * num.atan2(den)
}

/// Connected piece of `{s < frac·s_well}`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotropicComponent {
    pub nodes: Vec<usize>,
    pub centroid: Vec3,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
}

pub fn isotropic_set(grid: &Grid, s: &[f64], s_well: f64, frac: f64) -> Result<Vec<IsotropicComponent>> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidParameter(format!("isotropic fraction {frac} outside (0, 1)")));
    }
    if s.len() != grid.len() {
        return Err(Error::Shape("order parameter length mismatch".into()));
    }
    let member: Vec<bool> = (0..grid.len())
        .map(|i| grid.kind(i).in_domain() && s[i] < frac * s_well)
        .collect();
    Ok(grid
        .components(&member)
        .into_iter()
        .map(|nodes| {
            let mut c = [0.0; 3];
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for &i in &nodes {
                let x = grid.position(i);
                for k in 0..3 {
                    c[k] += x[k] / nodes.len() as f64;
                    lo[k] = lo[k].min(x[k]);
                    hi[k] = hi[k].max(x[k]);
                }
            }
            IsotropicComponent {
                nodes,
                centroid: c,
                bbox_min: lo,
                bbox_max: hi,
            }
        })
        .collect())
}

/// Power-law fit of the core profile about a defect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoreFit {
    /// Exponent of `s ∼ α rⁿ`.
    pub fitted_n: f64,
    /// Mean of the shell-averaged `r²|∇n|²`.
    pub fitted_alpha: f64,
    /// RMS residual of the log-log fit.
    pub fit_residual: f64,
    /// Relative spread of the shell averages of `r²|∇n|²`.
    pub alpha_spread: f64,
    pub shells: usize,
}

/// Log-log fit over shells of width `h` in `[r_in, r_out]` about `center`.
/// Shells average `log s`, `log r` and `r²|∇n|²` over their nodes.
pub fn fit_core_exponents(
    s: &[f64],
    n: &DirectorField,
    center: &Vec3,
    annulus: (f64, f64),
) -> Result<CoreFit> {
    let g = n.grid();
    let h = g.h();
    let (r_in, r_out) = annulus;
    if r_in < 2.0 * h * (1.0 - 1e-9) || r_out <= r_in {
        return Err(Error::Region(format!(
            "fit annulus [{r_in}, {r_out}] needs r_in ≥ 2h = {}",
            2.0 * h
        )));
    }
    let count = ((r_out - r_in) / h).floor() as usize;
    if count < 4 {
        return Err(Error::Region(format!("fit annulus holds {count} shells, need at least 4")));
    }
    let gn = n.grad_sq();
    let mut acc = vec![(0.0, 0.0, 0.0, 0usize, 0usize); count];
    for i in 0..g.len() {
        let x = g.position(i);
        let r = norm3(&[x[0] - center[0], x[1] - center[1], x[2] - center[2]]);
        if r < r_in || r >= r_in + count as f64 * h {
            continue;
        }
        if g.kind(i) != NodeKind::Interior {
            return Err(Error::Region("fit annulus reaches the boundary".into()));
        }
        let k = ((r - r_in) / h) as usize;
        let e = &mut acc[k.min(count - 1)];
        e.2 += r * r * gn[i];
        e.4 += 1;
        if s[i] > 0.0 {
            e.0 += r.ln();
            e.1 += s[i].ln();
            e.3 += 1;
        }
    }
    let pts: Vec<(f64, f64)> = acc
        .iter()
        .filter(|e| e.3 > 0)
        .map(|e| (e.0 / e.3 as f64, e.1 / e.3 as f64))
        .collect();
    let alphas: Vec<f64> = acc.iter().filter(|e| e.4 > 0).map(|e| e.2 / e.4 as f64).collect();
    if pts.len() < 4 {
        return Err(Error::Region("fewer than 4 populated shells".into()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let res = (pts
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    let alpha = alphas.iter().sum::<f64>() / alphas.len() as f64;
    let spread = (alphas.iter().map(|a| (a - alpha).powi(2)).sum::<f64>() / alphas.len() as f64).sqrt()
        / alpha.abs().max(f64::MIN_POSITIVE);
    Ok(CoreFit {
        fitted_n: slope,
        fitted_alpha: alpha,
        fit_residual: res,
        alpha_spread: spread,
        shells: pts.len(),
    })
}

/// Radius where the shell-averaged `s` about `center` first reaches
/// `0.5·s_well`, linearly interpolated between shell centres.
pub fn core_radius(grid: &Grid, s: &[f64], center: &Vec3, s_well: f64) -> f64 {
    let h = grid.h();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for i in 0..grid.len() {
        if !grid.kind(i).in_domain() {
            continue;
        }
        let x = grid.position(i);
        let r = norm3(&[x[0] - center[0], x[1] - center[1], x[2] - center[2]]);
        let k = (r / h).round() as usize;
        if k >= sums.len() {
            sums.resize(k + 1, (0.0, 0));
        }
        sums[k].0 += s[i];
        sums[k].1 += 1;
    }
    let target = 0.5 * s_well;
    let mut prev: Option<(f64, f64)> = None;
    for (k, (sum, cnt)) in sums.iter().enumerate() {
        if *cnt == 0 {
            continue;
        }
        let r = k as f64 * h;
        let v = sum / *cnt as f64;
        if v >= target {
            return match prev {
                Some((r0, v0)) if v > v0 => (r0 + (target - v0) / (v - v0) * (r - r0)).max(0.5 * h),
                _ => 0.5 * h,
            };
        }
        prev = Some((r, v));
    }
    prev.map(|p| p.0).unwrap_or(h).max(0.5 * h)
}

/// One located defect.
#[derive(Clone, Debug, PartialEq)]
pub struct DefectRecord {
    /// Sub-grid refined position.
    pub position: Vec3,
    /// Node of minimal `|Q|²` in the component.
    pub node: usize,
    pub component_size: usize,
    /// Q-winding in 2D, surface degree in 3D.
    pub q_winding: Option<f64>,
    /// Line-field director winding in 2D, `|degree|` in 3D.
    pub director_winding: Option<f64>,
    pub core_radius: f64,
    pub fit: Option<CoreFit>,
    /// Component reaches the boundary: reported at its centroid, not fitted.
    pub touches_boundary: bool,
}

pub fn defects_csv_header(dim: usize) -> &'static str {
    if dim == 3 {
        "run_id,L,x,y,z,q_winding,director_winding,core_radius,fitted_n,fitted_alpha,fit_residual"
    } else {
        "run_id,L,x,y,q_winding,director_winding,core_radius,fitted_n,fitted_alpha,fit_residual"
    }
}

fn opt(v: Option<f64>) -> Num {
    Num(v.unwrap_or(f64::NAN))
}

impl DefectRecord {
    pub fn csv_row(&self, run_id: &str, l: f64, dim: usize) -> String {
        let pos: Vec<String> = self.position[..dim].iter().map(|x| Num(*x).to_string()).collect();
        format!(
            "{run_id},{},{},{},{},{},{},{},{}",
            Num(l),
            pos.join(","),
            opt(self.q_winding),
            opt(self.director_winding),
            Num(self.core_radius),
            opt(self.fit.map(|f| f.fitted_n)),
            opt(self.fit.map(|f| f.fitted_alpha)),
            opt(self.fit.map(|f| f.fit_residual)),
        )
    }
}

/// Least-squares quadratic of `|Q|²` on the `3^dim` block around `node`;
/// returns the stationary point when it is a minimum within one cell.
fn quadratic_refine(grid: &Grid, q2: &[f64], node: usize) -> Option<Vec3> {
    let d = grid.dim();
    let c = grid.coords(node);
    let ext = grid.extents();
    if (0..d).any(|a| c[a] == 0 || c[a] + 1 >= ext[a]) {
        return None;
    }
    let nb = 1 + d + d * (d + 1) / 2;
    let mut ata = vec![vec![0.0; nb]; nb];
    let mut aty = vec![0.0; nb];
    let basis = |o: &[f64; 3]| -> Vec<f64> {
        let mut v = vec![1.0];
        v.extend_from_slice(&o[..d]);
        for i in 0..d {
            for j in i..d {
                v.push(o[i] * o[j]);
            }
        }
        v
    };
    let kr: Vec<isize> = if d == 3 { vec![-1, 0, 1] } else { vec![0] };
    for di in -1isize..=1 {
        for dj in -1isize..=1 {
            for &dk in &kr {
                let idx = grid.index([
                    (c[0] as isize + di) as usize,
                    (c[1] as isize + dj) as usize,
                    (c[2] as isize + dk) as usize,
                ]);
                if !grid.kind(idx).in_domain() {
                    return None;
                }
                let b = basis(&[di as f64, dj as f64, dk as f64]);
                for r in 0..nb {
                    aty[r] += b[r] * q2[idx];
                    for s in 0..nb {
                        ata[r][s] += b[r] * b[s];
                    }
                }
            }
        }
    }
    let coef = solve_dense(ata, aty)?;
    let g: Vec<f64> = coef[1..1 + d].to_vec();
    let mut hm = vec![vec![0.0; d]; d];
    let mut k = 1 + d;
    for i in 0..d {
        for j in i..d {
            if i == j {
                hm[i][i] = 2.0 * coef[k];
            } else {
                hm[i][j] = coef[k];
                hm[j][i] = coef[k];
            }
            k += 1;
        }
    }
    let step = solve_dense(hm.clone(), g.iter().map(|v| -v).collect())?;
    // require a minimum: positive curvature along the step and every axis
    if (0..d).any(|i| hm[i][i] <= 0.0) || step.iter().any(|v| v.abs() > 1.0 || !v.is_finite()) {
        return None;
    }
    let mut x = grid.position(node);
    for a in 0..d {
        x[a] += step[a] * grid.h();
    }
    Some(x)
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Largest distance from the origin to an in-domain node.
pub(crate) fn domain_radius(grid: &Grid) -> f64 {
    (0..grid.len())
        .filter(|&i| grid.kind(i).in_domain())
        .map(|i| norm3(&grid.position(i)))
        .fold(0.0, f64::max)
}

/// Defects of a converged field, one per isotropic component, ordered
/// lexicographically by position.
pub fn locate_defects<T: FieldTensor>(f: &Field<T>, p: &MaterialParams) -> Result<Vec<DefectRecord>> {
    let grid = f.grid();
    let uf = uniaxial_fields(f, UNIAXIAL_TOL);
    let s_well = T::well_order(p);
    let comps = isotropic_set(grid, &uf.s, s_well, ISOTROPIC_FRAC)?;
    let q2: Vec<f64> = (0..grid.len()).map(|i| f.get(i).norm_sq()).collect();
    let member: Vec<bool> = (0..grid.len())
        .map(|i| grid.kind(i).in_domain() && uf.s[i] < ISOTROPIC_FRAC * s_well)
        .collect();
    let r_dom = domain_radius(grid);
    let mut out = Vec::with_capacity(comps.len());
    for comp in comps {
        let touches = comp
            .nodes
            .iter()
            .any(|&i| grid.kind(i) == NodeKind::Boundary || grid.axis_neighbors(i).any(|b| grid.kind(b) == NodeKind::Boundary));
        let node = *comp
            .nodes
            .iter()
            .min_by(|&&a, &&b| q2[a].partial_cmp(&q2[b]).unwrap().then(a.cmp(&b)))
            .unwrap();
        if touches {
            out.push(DefectRecord {
                position: comp.centroid,
                node,
                component_size: comp.nodes.len(),
                q_winding: None,
                director_winding: None,
                core_radius: core_radius(grid, &uf.s, &comp.centroid, s_well),
                fit: None,
                touches_boundary: true,
            });
            continue;
        }
        let position = quadratic_refine(grid, &q2, node).unwrap_or_else(|| grid.position(node));
        let mut q_w = None;
        let mut d_w = None;
        for k in 1..=grid.extents()[0] / 2 {
            if grid.dim() == 2 {
                let Ok(cycle) = square_loop(grid, node, k) else { break };
                if cycle.iter().any(|&i| member[i]) {
                    continue;
                }
                if let (Ok(a), Ok(b)) = (q_winding(f, &cycle), director_winding(&uf.n, &cycle)) {
                    q_w = Some(a);
                    d_w = Some(b);
                    break;
                }
            } else {
                let (lo, hi) = (node_cube_touches(grid, node, k, &member), false);
                if lo.is_err() {
                    break;
                }
                if lo.unwrap() || hi {
                    continue;
                }
                if let Ok(deg) = surface_degree(&uf.n, node, k) {
                    q_w = Some(deg.round());
                    d_w = Some(deg.round().abs());
                    break;
                }
            }
        }
        let r_core = core_radius(grid, &uf.s, &position, s_well);
        let fit = fit_core_exponents(&uf.s, &uf.n, &position, (3.0 * grid.h(), 0.3 * r_dom)).ok();
        out.push(DefectRecord {
            position,
            node,
            component_size: comp.nodes.len(),
            q_winding: q_w,
            director_winding: d_w,
            core_radius: r_core,
            fit,
            touches_boundary: false,
        });
    }
    out.sort_by(|a, b| a.position.partial_cmp(&b.position).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

/// Whether the cube surface of half-width `k` meets `member`; errors when it
/// leaves the grid or the domain.
fn node_cube_touches(grid: &Grid, center: usize, k: usize, member: &[bool]) -> Result<bool> {
    let c = grid.coords(center);
    let ext = grid.extents();
    if (0..3).any(|a| c[a] < k || c[a] + k >= ext[a]) {
        return Err(Error::Region("surface leaves the grid".into()));
    }
    let ki = k as isize;
    let mut hit = false;
    for di in -ki..=ki {
        for dj in -ki..=ki {
            for dk in -ki..=ki {
                if di.abs().max(dj.abs()).max(dk.abs()) != ki {
                    continue;
                }
                let idx = grid.index([
                    (c[0] as isize + di) as usize,
                    (c[1] as isize + dj) as usize,
                    (c[2] as isize + dk) as usize,
                ]);
                if !grid.kind(idx).in_domain() {
                    return Err(Error::Region("surface leaves the domain".into()));
                }
                hit |= member[idx];
            }
        }
    }
    Ok(hit)
}

/// Renormalized energy of unit-degree vortices in the unit disk,
/// `W = −2π Σ_{i≠j} dᵢdⱼ log|bᵢ − bⱼ| − 2π Σ_{i,j} dᵢdⱼ log|1 − bᵢ b̄ⱼ|`.
pub fn renormalized_energy_disk(points: &[[f64; 2]], degrees: &[f64]) -> Result<f64> {
    if points.len() != degrees.len() {
        return Err(Error::Shape("one degree per point".into()));
    }
    for (b, d) in points.iter().zip(degrees) {
        if b[0].hypot(b[1]) >= 1.0 {
            return Err(Error::Domain(format!("point ({}, {}) outside the unit disk", b[0], b[1])));
        }
        if d.abs() != 1.0 {
            return Err(Error::InvalidParameter(format!("degree {d} is not ±1")));
        }
    }
    let mut w = 0.0;
    for (i, bi) in points.iter().enumerate() {
        for (j, bj) in points.iter().enumerate() {
            let dd = degrees[i] * degrees[j];
            if i != j {
                let dist = (bi[0] - bj[0]).hypot(bi[1] - bj[1]);
                if dist == 0.0 {
                    return Err(Error::Domain("coincident vortex positions".into()));
                }
                w -= 2.0 * PI * dd * dist.ln();
            }
            // 1 − bᵢ conj(bⱼ)
            let re = 1.0 - (bi[0] * bj[0] + bi[1] * bj[1]);
            let im = -(bi[1] * bj[0] - bi[0] * bj[1]);
            w -= 2.0 * PI * dd * re.hypot(im).ln();
        }
    }
    Ok(w)
}

/// Distance from the centre minimizing `W` over symmetric pairs `±b` of
/// same-sign vortices, by a grid search refined by golden sections.
pub fn symmetric_pair_optimum() -> f64 {
    let w = |r: f64| renormalized_energy_disk(&[[r, 0.0], [-r, 0.0]], &[1.0, 1.0]).unwrap();
    let samples = 999;
    let best = (1..samples)
        .map(|k| k as f64 / samples as f64)
        .min_by(|a, b| w(*a).partial_cmp(&w(*b)).unwrap())
        .unwrap();
    let (mut lo, mut hi) = (best - 1.0 / samples as f64, best + 1.0 / samples as f64);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if w(a) < w(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{boundary_director, BoundarySpec, Field2, Field3};
    use crate::grid::{build_domain, Resolution, Shape};
    use crate::tensor::QTensor2;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn disk(n: usize) -> Arc<Grid> {
        Arc::new(build_domain(Shape::Disk { radius: 1.0 }, Resolution::Nodes(n)).unwrap())
    }

    fn square(n: usize) -> Arc<Grid> {
        Arc::new(build_domain(Shape::Square { side: 2.0 }, Resolution::Nodes(n)).unwrap())
    }

    #[test]
    fn boundary_windings_of_unit_degree() {
        let g = disk(65);
        let n = boundary_director(&g, &BoundarySpec::Planar { degree: 1.0 }).unwrap();
        let lp = g.boundary_loop();
        assert!((director_winding(&n, &lp).unwrap() - 1.0).abs() < 1e-12);
        let p = MaterialParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let q: Field2 = Field2::with_boundary(g.clone(), &n, &p, |_| QTensor2::new(1.0, 0.0)).unwrap();
        assert!((q_winding(&q, &lp).unwrap() - 2.0).abs() < 1e-12);
        let c = boundary_director(&g, &BoundarySpec::Uniform { director: [1.0, 0.0, 0.0] }).unwrap();
        assert_eq!(director_winding(&c, &lp).unwrap(), 0.0);
        let half = boundary_director(&g, &BoundarySpec::Planar { degree: 0.5 }).unwrap();
        assert!((director_winding(&half, &lp).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn loop_through_zero_rejected() {
        let g = square(17);
        let f = Field2::from_fn(g.clone(), |i| {
            let x = g.position(i);
            QTensor2::new(x[0], x[1])
        })
        .unwrap();
        let centre = g.nearest_node(&[0.0, 0.0, 0.0]);
        let lp = square_loop(&g, centre, 2).unwrap();
        assert!((q_winding(&f, &lp).unwrap() - 1.0).abs() < 1e-12);
        let through = [centre, centre + 1, centre + 1 + g.strides()[0]];
        assert!(matches!(q_winding(&f, &through), Err(Error::Topology(_))));
    }

    #[test]
    fn plaquettes_telescope_to_boundary_winding() {
        let g = square(24);
        let zeros = [[0.31, -0.22], [-0.4, 0.13], [0.05, 0.52]];
        let signs = [1.0, 1.0, -1.0];
        let f = Field2::from_fn(g.clone(), |i| {
            let x = g.position(i);
            let mut ph = 0.0;
            for (z, s) in zeros.iter().zip(signs) {
                ph += s * (x[1] - z[1]).atan2(x[0] - z[0]);
            }
            QTensor2::new(ph.cos(), ph.sin())
        })
        .unwrap();
        let total: f64 = plaquette_windings(&f).unwrap().iter().map(|p| p.1).sum();
        let wb = q_winding(&f, &g.boundary_loop()).unwrap();
        assert!((total - wb).abs() < 1e-9 && (wb - 1.0).abs() < 1e-9, "{total} {wb}");
        let nonzero = plaquette_windings(&f).unwrap().into_iter().filter(|p| p.1.abs() > 0.5).count();
        assert_eq!(nonzero, 3);
    }

    #[test]
    fn hedgehog_surface_degree() {
        let g = Arc::new(build_domain(Shape::Ball { radius: 1.0 }, Resolution::Nodes(25)).unwrap());
        let n = boundary_director(&g, &BoundarySpec::Radial).unwrap();
        let c = g.nearest_node(&[0.0, 0.0, 0.0]);
        for k in 1..5 {
            assert!((surface_degree(&n, c, k).unwrap().abs() - 1.0).abs() < 1e-9);
        }
        let u = boundary_director(&g, &BoundarySpec::Uniform { director: [0.0, 0.0, 1.0] }).unwrap();
        assert!(surface_degree(&u, c, 3).unwrap().abs() < 1e-9);
    }

    #[test]
    fn isotropic_set_examples() {
        let g = disk(65);
        let p = MaterialParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let s = vec![p.s_plus; g.len()];
        assert!(isotropic_set(&g, &s, p.s_plus, 0.3).unwrap().is_empty());
        let s: Vec<f64> = (0..g.len()).map(|i| p.s_plus * (norm3(&g.position(i)) / 0.1).min(1.0)).collect();
        let comps = isotropic_set(&g, &s, p.s_plus, 0.3).unwrap();
        assert_eq!(comps.len(), 1);
        let origin = g.nearest_node(&[0.0, 0.0, 0.0]);
        assert!(comps[0].nodes.contains(&origin));
        assert!(isotropic_set(&g, &s, p.s_plus, 1.0).is_err());
    }

    #[test]
    fn core_fit_examples() {
        let g = Arc::new(build_domain(Shape::Ball { radius: 1.0 }, Resolution::Nodes(41)).unwrap());
        let n = boundary_director(&g, &BoundarySpec::Radial).unwrap();
        let r = |i: usize| norm3(&g.position(i));
        let s2: Vec<f64> = (0..g.len()).map(|i| r(i).powi(2)).collect();
        let o = [0.0; 3];
        let fit = fit_core_exponents(&s2, &n, &o, (3.0 * g.h(), 0.5)).unwrap();
        assert!((fit.fitted_n - 2.0).abs() < 1e-3, "{}", fit.fitted_n);
        assert!((fit.fitted_alpha - 2.0).abs() < 0.1, "{}", fit.fitted_alpha);
        let s1: Vec<f64> = (0..g.len()).map(|i| r(i) * (1.0 + 0.01 * r(i))).collect();
        let fit = fit_core_exponents(&s1, &n, &o, (3.0 * g.h(), 0.5)).unwrap();
        assert!((fit.fitted_n - 1.0).abs() < 0.05);
        assert!(fit_core_exponents(&s1, &n, &o, (g.h(), 0.5)).is_err());
        assert!(fit_core_exponents(&s1, &n, &o, (0.2, 0.2 + 2.0 * g.h())).is_err());
    }

    #[test]
    fn synthetic_planar_defect_located() {
        let g = disk(81);
        let p = MaterialParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let sp = p.planar_s_plus();
        let b = [0.1234, -0.0567];
        let n = boundary_director(&g, &BoundarySpec::Planar { degree: 0.5 }).unwrap();
        let f = Field2::with_boundary(g.clone(), &n, &p, |i| {
            let x = g.position(i);
            let (dx, dy) = (x[0] - b[0], x[1] - b[1]);
            let r = dx.hypot(dy);
            let amp = sp * (r / 0.35).min(1.0);
            let ph = dy.atan2(dx);
            QTensor2::new(0.5 * amp * ph.cos(), 0.5 * amp * ph.sin())
        })
        .unwrap();
        let recs = locate_defects(&f, &p).unwrap();
        assert_eq!(recs.len(), 1);
        let d = recs[0].position;
        assert!((d[0] - b[0]).hypot(d[1] - b[1]) < 0.5 * g.h(), "{d:?}");
        assert_eq!(recs[0].q_winding, Some(1.0));
        assert_eq!(recs[0].director_winding, Some(0.5));
        assert!((recs[0].core_radius - 0.175).abs() < 2.0 * g.h());
        let fit = recs[0].fit.unwrap();
        assert!((fit.fitted_n - 1.0).abs() < 0.05, "{fit:?}");
        // half-degree director: r²|∇n|² = 1/4
        assert!((fit.fitted_alpha - 0.25).abs() < 0.02, "{fit:?}");
        let row = recs[0].csv_row("r", 0.01, 2);
        assert_eq!(row.split(',').count(), defects_csv_header(2).split(',').count());
    }

    #[test]
    fn uniform_field_has_no_defects() {
        let g = disk(41);
        let p = MaterialParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let n = boundary_director(&g, &BoundarySpec::Uniform { director: [1.0, 0.0, 0.0] }).unwrap();
        let f: Field3 = crate::field::field_from_uniaxial(&vec![p.s_plus; g.len()], &n).unwrap();
        assert!(locate_defects(&f, &p).unwrap().is_empty());
    }

    #[test]
    fn renormalized_energy_examples() {
        let w0 = renormalized_energy_disk(&[[0.0, 0.0]], &[1.0]).unwrap();
        for k in 1..50 {
            let r = k as f64 / 50.0;
            assert!(renormalized_energy_disk(&[[r * 0.6, r * 0.8]], &[1.0]).unwrap() > w0);
        }
        let b = symmetric_pair_optimum();
        assert!((b - 5f64.powf(-0.25)).abs() < 1e-6, "{b}");
        assert!(renormalized_energy_disk(&[[0.1, 0.0], [0.1, 0.0]], &[1.0, 1.0]).is_err());
        assert!(renormalized_energy_disk(&[[1.0, 0.0]], &[1.0]).is_err());
    }

    /// Finite-ε Dirichlet energy of the canonical phase minus the log
    /// divergence reproduces W up to a constant.
    #[test]
    fn renormalized_energy_matches_canonical_map() {
        let g = disk(257);
        let bd = boundary_director(&g, &BoundarySpec::Planar { degree: 0.5 }).unwrap();
        let eps = 0.08;
        let excess = |b: [f64; 2]| -> f64 {
            let m = crate::harmonic::canonical_harmonic_2d(&[([b[0], b[1], 0.0], 0.5)], &bd).unwrap();
            let phase: Vec<f64> = m.angle.iter().map(|a| 2.0 * a).collect();
            let outside = |i: usize| {
                let x = g.position(i);
                g.kind(i).in_domain() && (x[0] - b[0]).hypot(x[1] - b[1]) > eps
            };
            let mut e = 0.0;
            for i in 0..g.len() {
                if !outside(i) {
                    continue;
                }
                for axis in 0..2 {
                    if let Some(j) = g.shift(i, axis, 1) {
                        if outside(j) {
                            e += wrap_angle(phase[j] - phase[i]).powi(2) * g.edge_weight(i, axis);
                        }
                    }
                }
            }
            e - 2.0 * PI * (1.0 / eps).ln()
        };
        let (b1, b2) = ([0.0, 0.0], [0.35, 0.2]);
        let numeric = excess(b2) - excess(b1);
        let w = renormalized_energy_disk(&[b2], &[1.0]).unwrap() - renormalized_energy_disk(&[b1], &[1.0]).unwrap();
        assert!((numeric - w).abs() < 0.05 * w.abs(), "{numeric} vs {w}");
    }

    proptest! {
        #[test]
        fn renormalized_energy_rotation_invariant(
            r1 in 0.05f64..0.9, t1 in 0.0f64..6.28, r2 in 0.05f64..0.9, t2 in 0.0f64..6.28,
            rot in 0.0f64..6.28, sgn in prop::bool::ANY
        ) {
            let d2 = if sgn { 1.0 } else { -1.0 };
            let p = [[r1 * t1.cos(), r1 * t1.sin()], [r2 * t2.cos(), r2 * t2.sin()]];
            prop_assume!((p[0][0] - p[1][0]).hypot(p[0][1] - p[1][1]) > 1e-3);
            let q: Vec<[f64; 2]> = p.iter().map(|b| {
                [b[0] * rot.cos() - b[1] * rot.sin(), b[0] * rot.sin() + b[1] * rot.cos()]
            }).collect();
            let a = renormalized_energy_disk(&p, &[1.0, d2]).unwrap();
            let b = renormalized_energy_disk(&q, &[1.0, d2]).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn constant_field_winding_zero(t in 0.0f64..6.28) {
            let g = square(16);
            let n = DirectorField::from_fn(g.clone(), |_| [t.cos(), t.sin(), 0.0]).unwrap();
            prop_assert_eq!(director_winding(&n, &g.boundary_loop()).unwrap(), 0.0);
        }
    }
}
