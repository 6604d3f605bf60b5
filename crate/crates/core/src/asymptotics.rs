//! Diagnostics for the small-`L` regime: ψ, the leading-order ψ formula,
//! gradient decay, maximum principle, biaxiality and boundary energy bounds.

use rayon::prelude::*;

use crate::defects::DefectRecord;
use crate::error::{Error, Result};
use crate::field::{
    ball_energy_from_density, scalar_gradient_norm, total_energy, DirectorField, Field, FieldTensor,
    Field3,
};
use crate::grid::{Grid, NodeKind};
use crate::io::Num;
use crate::tensor::{biaxiality, decompose, norm3, MaterialParams, Vec3, UNIAXIAL_TOL};

/// Analysis region: the interior minus balls of radius `delta` around the
/// given points, minus a boundary layer of `standoff` cells, optionally
/// restricted to an annulus `r_in ≤ |x| ≤ r_out` about the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSpec {
    pub delta: f64,
    pub points: Vec<Vec3>,
    pub standoff: usize,
    pub annulus: Option<(f64, f64)>,
}

impl RegionSpec {
    pub fn new(grid: &Grid, points: Vec<Vec3>, delta: f64, standoff: usize) -> Result<RegionSpec> {
        if !(delta >= 3.0 * grid.h() * (1.0 - 1e-12)) {
            return Err(Error::Region(format!(
                "exclusion radius {delta} below 3h = {}",
                3.0 * grid.h()
            )));
        }
        Ok(RegionSpec {
            delta,
            points,
            standoff,
            annulus: None,
        })
    }

    /// `δ = max(3h, 2·core_radius)` around the given defects, standoff 2.
    pub fn around_defects(grid: &Grid, defects: &[DefectRecord]) -> RegionSpec {
        let core = defects.iter().map(|d| d.core_radius).fold(0.0, f64::max);
        RegionSpec {
            delta: (3.0 * grid.h()).max(2.0 * core),
            points: defects.iter().map(|d| d.position).collect(),
            standoff: 2,
            annulus: None,
        }
    }

    /// One region per level of a schedule, all sharing the largest `δ`, so
    /// scaling comparisons see the same excluded set at every `L`.
    pub fn along_schedule(grid: &Grid, levels: &[&[DefectRecord]]) -> Vec<RegionSpec> {
        let mut regions: Vec<RegionSpec> = levels.iter().map(|d| Self::around_defects(grid, d)).collect();
        let delta = regions.iter().map(|r| r.delta).fold(0.0, f64::max);
        for r in &mut regions {
            r.delta = delta;
        }
        regions
    }

    pub fn with_annulus(mut self, r_in: f64, r_out: f64) -> RegionSpec {
        self.annulus = Some((r_in, r_out));
        self
    }

    pub fn nodes(&self, grid: &Grid) -> Vec<usize> {
        let dist = grid.boundary_distance();
        grid.interior_nodes()
            .iter()
            .copied()
            .filter(|&i| {
                if dist[i] < self.standoff {
                    return false;
                }
                let x = grid.position(i);
                if let Some((a, b)) = self.annulus {
                    let r = norm3(&x);
                    if r < a || r > b {
                        return false;
                    }
                }
                self.points.iter().all(|p| {
                    norm3(&[x[0] - p[0], x[1] - p[1], x[2] - p[2]]) > self.delta
                })
            })
            .collect()
    }

    fn nonempty(&self, grid: &Grid) -> Result<Vec<usize>> {
        let nodes = self.nodes(grid);
        if nodes.is_empty() {
            return Err(Error::Region("analysis region is empty after exclusions".into()));
        }
        Ok(nodes)
    }
}

/// `(s₊ − s)/L` at every node.
pub fn psi_field(s: &[f64], p: &MaterialParams) -> Vec<f64> {
    psi_with_well(s, p.s_plus, p.l)
}

/// `(s_well − s)/L`; planar runs measure against the planar well order.
pub fn psi_with_well(s: &[f64], s_well: f64, l: f64) -> Vec<f64> {
    s.iter().map(|v| (s_well - v) / l).collect()
}

/// Leading-order prediction `9|∇n₀|²/√(b⁴ + 24a²c²)`.
pub fn psi_prediction(n0: &DirectorField, p: &MaterialParams) -> Vec<f64> {
    let k = 9.0 / (p.b2 * p.b2 + 24.0 * p.a2 * p.c2).sqrt();
    n0.grad_sq().into_iter().map(|g| k * g).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PsiErrors {
    pub sup_abs: f64,
    pub mean_abs: f64,
    pub sup_psi: f64,
    /// `sup|ψ − pred| / sup ψ`.
    pub sup_scaled: f64,
    /// `mean|ψ − pred| / sup ψ`.
    pub mean_scaled: f64,
    /// Mean of the nodewise relative error `|ψ − pred| / pred` (nodes with a
    /// vanishing prediction are skipped).
    pub mean_rel: f64,
}

pub fn verify_psi(
    s: &[f64],
    n0: &DirectorField,
    p: &MaterialParams,
    region: &RegionSpec,
) -> Result<PsiErrors> {
    let grid = n0.grid();
    let nodes = region.nonempty(grid)?;
    let psi = psi_field(s, p);
    let pred = psi_prediction(n0, p);
    let mut e = PsiErrors::default();
    let mut rel_sum = 0.0;
    let mut rel_cnt = 0usize;
    for &i in &nodes {
        let d = (psi[i] - pred[i]).abs();
        e.sup_abs = e.sup_abs.max(d);
        e.mean_abs += d;
        e.sup_psi = e.sup_psi.max(psi[i].abs());
        if pred[i] > 0.0 {
            rel_sum += d / pred[i];
            rel_cnt += 1;
        }
    }
    e.mean_abs /= nodes.len() as f64;
    let scale = if e.sup_psi > 0.0 { e.sup_psi } else { 1.0 };
    e.sup_scaled = e.sup_abs / scale;
    e.mean_scaled = e.mean_abs / scale;
    e.mean_rel = if rel_cnt > 0 { rel_sum / rel_cnt as f64 } else { e.mean_scaled };
    Ok(e)
}

/// `(sup|∇s|, sup||∇n|² − |∇n₀|²|)` over the region.
pub fn verify_lemma7(s: &[f64], n: &DirectorField, n0: &DirectorField, region: &RegionSpec) -> Result<(f64, f64)> {
    let grid = n.grid();
    let nodes = region.nonempty(grid)?;
    let gs = scalar_gradient_norm(grid, s);
    let gn = n.grad_sq();
    let gn0 = n0.grad_sq();
    let a = nodes.iter().map(|&i| gs[i]).fold(0.0, f64::max);
    let b = nodes.iter().map(|&i| (gn[i] - gn0[i]).abs()).fold(0.0, f64::max);
    Ok((a, b))
}

/// `max|Q| − r_well` (positive means a violation); `r_well` is `√(2/3)s₊`
/// for 3D tensors and `a/c` for planar ones.
pub fn check_max_principle<T: FieldTensor>(f: &Field<T>, p: &MaterialParams) -> f64 {
    f.max_norm() - T::well_norm(p)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BiaxialityReport {
    pub max_beta2: f64,
    /// `sup(2s₊/3 − λ₁)`.
    pub lambda1_gap: f64,
    pub max_r2: f64,
}

pub fn biaxiality_report(f: &Field3, p: &MaterialParams, region: &RegionSpec) -> Result<BiaxialityReport> {
    let grid = f.grid();
    let nodes = region.nonempty(grid)?;
    let per: Vec<(f64, f64, f64)> = nodes
        .par_iter()
        .map(|&i| {
            let q = f.get(i);
            let d = decompose(&q, UNIAXIAL_TOL);
            let b = biaxiality(&q).unwrap_or(0.0);
            (b, 2.0 * p.s_plus / 3.0 - d.eigenvalues[0], d.r_l * d.r_l)
        })
        .collect();
    let mut r = BiaxialityReport {
        max_beta2: 0.0,
        lambda1_gap: f64::NEG_INFINITY,
        max_r2: 0.0,
    };
    for (b, g, r2) in per {
        r.max_beta2 = r.max_beta2.max(b);
        r.lambda1_gap = r.lambda1_gap.max(g);
        r.max_r2 = r.max_r2.max(r2);
    }
    Ok(r)
}

/// Extreme boundary nodes along diagonal directions: a deterministic sample
/// off the coordinate axes, where symmetric runs place their defects.
pub fn default_boundary_samples(grid: &Grid) -> Vec<usize> {
    let mut out = Vec::new();
    let dirs: Vec<Vec3> = match grid.dim() {
        2 => vec![[1.0, 1.0, 0.0], [-1.0, 1.0, 0.0], [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0]],
        _ => vec![
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
            [-1.0, -1.0, -1.0],
        ],
    };
    for d in dirs {
        let u = norm3(&d);
        let best = grid
            .boundary_nodes()
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let fa = dot(&grid.position(a), &d) / u;
                let fb = dot(&grid.position(b), &d) / u;
                fa.partial_cmp(&fb).unwrap().then(b.cmp(&a))
            });
        if let Some(b) = best {
            if !out.contains(&b) {
                out.push(b);
            }
        }
    }
    out
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `max_samples r²·sup{e_L(y) : y ∈ Ω, |y − x| < r/2}`.
pub fn boundary_energy_diagnostic<T: FieldTensor>(
    f: &Field<T>,
    p: &MaterialParams,
    samples: &[usize],
    r: f64,
) -> Result<f64> {
    let grid = f.grid();
    if r < 4.0 * grid.h() * (1.0 - 1e-12) {
        return Err(Error::Region(format!("radius {r} below 4h = {}", 4.0 * grid.h())));
    }
    let e = total_energy(f, p).per_node_density;
    let mut best: f64 = 0.0;
    for &b in samples {
        if grid.kind(b) != NodeKind::Boundary {
            return Err(Error::Region(format!("sample node {b} is not a boundary node")));
        }
        let x = grid.position(b);
        let sup = (0..grid.len())
            .filter(|&i| {
                let y = grid.position(i);
                grid.kind(i).in_domain() && norm3(&[y[0] - x[0], y[1] - x[1], y[2] - x[2]]) < 0.5 * r
            })
            .map(|i| e[i])
            .fold(0.0, f64::max);
        best = best.max(r * r * sup);
    }
    Ok(best)
}

/// `F(Q, x, r) = r⁻¹ ∫_{B_r(x)} e_L` for each radius.
pub fn monotonicity_profile<T: FieldTensor>(
    f: &Field<T>,
    p: &MaterialParams,
    center: &Vec3,
    radii: &[f64],
) -> Result<Vec<f64>> {
    let e = total_energy(f, p).per_node_density;
    radii
        .iter()
        .map(|&r| ball_energy_from_density(f.grid(), &e, center, r))
        .collect()
}

pub const ASYMPTOTICS_CSV_HEADER: &str = "run_id,L,sup_psi,psi_sup_err,psi_mean_err,sup_grad_s,gradn_err,max_beta2,lambda1_gap,max_principle_excess,r2_supE";

/// One row of `asymptotics.csv`; entries that do not apply to a run are NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsymptoticsReport {
    pub l: f64,
    pub sup_psi: f64,
    pub psi_sup_err: f64,
    pub psi_mean_err: f64,
    pub sup_grad_s: f64,
    pub gradn_err: f64,
    pub max_beta2: f64,
    pub lambda1_gap: f64,
    pub max_principle_excess: f64,
    pub r2_supe: f64,
}

impl AsymptoticsReport {
    pub fn empty(l: f64) -> AsymptoticsReport {
        AsymptoticsReport {
            l,
            sup_psi: f64::NAN,
            psi_sup_err: f64::NAN,
            psi_mean_err: f64::NAN,
            sup_grad_s: f64::NAN,
            gradn_err: f64::NAN,
            max_beta2: f64::NAN,
            lambda1_gap: f64::NAN,
            max_principle_excess: f64::NAN,
            r2_supe: f64::NAN,
        }
    }

    /// Every diagnostic that applies to `f`. `n0` enables the comparisons
    /// with the limiting map; biaxiality is evaluated for 3D tensors only.
    pub fn compute<T: FieldTensor>(
        f: &Field<T>,
        s: &[f64],
        n: &DirectorField,
        n0: Option<&DirectorField>,
        p: &MaterialParams,
        region: &RegionSpec,
    ) -> Result<AsymptoticsReport> {
        let grid = f.grid();
        let nodes = region.nonempty(grid)?;
        let mut r = AsymptoticsReport::empty(p.l);
        let psi = psi_with_well(s, T::well_order(p), p.l);
        r.sup_psi = nodes.iter().map(|&i| psi[i].abs()).fold(0.0, f64::max);
        let gs = scalar_gradient_norm(grid, s);
        r.sup_grad_s = nodes.iter().map(|&i| gs[i]).fold(0.0, f64::max);
        if let Some(n0) = n0 {
            // the leading-order ψ formula is a statement about 3D tensors
            if T::DOFS == 5 {
                let e = verify_psi(s, n0, p, region)?;
                r.psi_sup_err = e.sup_scaled;
                r.psi_mean_err = e.mean_rel;
            }
            r.gradn_err = verify_lemma7(s, n, n0, region)?.1;
        }
        if T::DOFS == 5 {
            let f3 = Field3::from_values(grid.clone(), f.values().to_vec())?;
            let b = biaxiality_report(&f3, p, region)?;
            r.max_beta2 = b.max_beta2;
            r.lambda1_gap = b.lambda1_gap;
        }
        r.max_principle_excess = check_max_principle(f, p);
        let samples = default_boundary_samples(grid);
        r.r2_supe = boundary_energy_diagnostic(f, p, &samples, (4.0 * grid.h()).max(0.2))?;
        Ok(r)
    }

    pub fn csv_row(&self, run_id: &str) -> String {
        format!(
            "{run_id},{},{},{},{},{},{},{},{},{},{}",
            Num(self.l),
            Num(self.sup_psi),
            Num(self.psi_sup_err),
            Num(self.psi_mean_err),
            Num(self.sup_grad_s),
            Num(self.gradn_err),
            Num(self.max_beta2),
            Num(self.lambda1_gap),
            Num(self.max_principle_excess),
            Num(self.r2_supe)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{boundary_director, field_from_uniaxial, BoundarySpec};
    use crate::grid::{build_domain, Resolution, Shape};
    use crate::tensor::{make_uniaxial, QTensor3};
    use std::sync::Arc;

    fn ball(n: usize) -> Arc<Grid> {
        Arc::new(build_domain(Shape::Ball { radius: 1.0 }, Resolution::Nodes(n)).unwrap())
    }

    fn params(l: f64) -> MaterialParams {
        MaterialParams::new(1.0, 1.0, 1.0, l).unwrap()
    }

    #[test]
    fn psi_examples() {
        let p = params(0.01);
        let s = vec![p.s_plus; 10];
        assert!(psi_field(&s, &p).iter().all(|v| *v == 0.0));
        let s = vec![p.s_plus - p.l; 10];
        assert!(psi_field(&s, &p).iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn region_validation_and_exclusion() {
        let g = ball(21);
        assert!(RegionSpec::new(&g, vec![], 2.0 * g.h(), 0).is_err());
        let r = RegionSpec::new(&g, vec![[0.0; 3]], 0.3, 2).unwrap();
        let nodes = r.nodes(&g);
        assert!(!nodes.is_empty());
        assert!(nodes.iter().all(|&i| norm3(&g.position(i)) > 0.3));
        let huge = RegionSpec::new(&g, vec![[0.0; 3]], 5.0, 0).unwrap();
        let n0 = boundary_director(&g, &BoundarySpec::Radial).unwrap();
        assert!(matches!(
            verify_psi(&vec![0.0; g.len()], &n0, &params(0.1), &huge),
            Err(Error::Region(_))
        ));
    }

    #[test]
    fn psi_constructed_and_trivial() {
        let g = ball(25);
        let p = params(0.01);
        let region = RegionSpec::new(&g, vec![[0.0; 3]], 0.3, 2).unwrap();
        let n0 = boundary_director(&g, &BoundarySpec::Radial).unwrap();
        let pred = psi_prediction(&n0, &p);
        let s: Vec<f64> = pred.iter().map(|v| p.s_plus - p.l * v).collect();
        let e = verify_psi(&s, &n0, &p, &region).unwrap();
        assert!(e.sup_abs < 1e-9 && e.mean_rel < 1e-9);
        let c = boundary_director(&g, &BoundarySpec::Uniform { director: [0.0, 0.0, 1.0] }).unwrap();
        let e = verify_psi(&vec![p.s_plus; g.len()], &c, &p, &region).unwrap();
        assert_eq!(e.sup_abs, 0.0);
        let (a, b) = verify_lemma7(&vec![p.s_plus; g.len()], &n0, &n0, &region).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
    }

    #[test]
    fn max_principle_examples() {
        let g = ball(17);
        let p = params(0.1);
        let n = boundary_director(&g, &BoundarySpec::Radial).unwrap();
        let f: Field3 = field_from_uniaxial(&vec![p.s_plus; g.len()], &n).unwrap();
        assert!(check_max_principle(&f, &p).abs() < 1e-14);
        let scaled = Field3::from_fn(g.clone(), |i| f.get(i) * 1.1).unwrap();
        let want = 0.1 * (2.0f64 / 3.0).sqrt() * p.s_plus;
        assert!((check_max_principle(&scaled, &p) - want).abs() < 1e-12);
        let one = make_uniaxial(p.s_plus, &[0.0, 0.0, 1.0]).unwrap();
        assert!(((one.norm() - (2.0f64 / 3.0).sqrt() * p.s_plus) as f64).abs() < 1e-14);
    }

    #[test]
    fn biaxiality_of_uniaxial_field_vanishes() {
        let g = ball(33);
        let p = params(0.1);
        let region = RegionSpec::new(&g, vec![[0.0; 3]], 0.3, 1).unwrap();
        let n = boundary_director(&g, &BoundarySpec::Radial).unwrap();
        let s: Vec<f64> = (0..g.len()).map(|i| 0.5 + 0.5 * norm3(&g.position(i))).collect();
        let f: Field3 = field_from_uniaxial(&s, &n).unwrap();
        let b = biaxiality_report(&f, &p, &region).unwrap();
        assert!(b.max_beta2 < 1e-10 && b.max_r2 < 1e-20);
        let biax = Field3::from_fn(g.clone(), |_| QTensor3::new([0.3, 0.1, 0.0, 0.0, 0.0])).unwrap();
        assert!(biaxiality_report(&biax, &p, &region).unwrap().max_beta2 > 0.1);
    }

    #[test]
    fn boundary_energy_examples() {
        let g = ball(25);
        let p = params(0.1);
        let n = boundary_director(&g, &BoundarySpec::Uniform { director: [1.0, 0.0, 0.0] }).unwrap();
        let f: Field3 = field_from_uniaxial(&vec![p.s_plus; g.len()], &n).unwrap();
        let samples = default_boundary_samples(&g);
        assert_eq!(samples.len(), 6);
        assert!(boundary_energy_diagnostic(&f, &p, &samples, 0.4).unwrap().abs() < 1e-12);
        assert!(boundary_energy_diagnostic(&f, &p, &samples, g.h()).is_err());
        let rad = boundary_director(&g, &BoundarySpec::Radial).unwrap();
        let f: Field3 = field_from_uniaxial(&vec![p.s_plus; g.len()], &rad).unwrap();
        let a = boundary_energy_diagnostic(&f, &p, &samples, 0.35).unwrap();
        let b = boundary_energy_diagnostic(&f, &p, &samples, 0.7).unwrap();
        // r²·sup over a growing half-ball cannot decrease
        assert!(a > 0.0 && b >= 4.0 * a);
    }

    #[test]
    fn monotonicity_of_smooth_field() {
        let g = ball(33);
        let p = params(0.1);
        let rad = boundary_director(&g, &BoundarySpec::Radial).unwrap();
        let f: Field3 = field_from_uniaxial(&vec![p.s_plus; g.len()], &rad).unwrap();
        let h = g.h();
        let prof = monotonicity_profile(&f, &p, &[0.2, 0.1, 0.0], &[2.0 * h, 4.0 * h, 6.0 * h]).unwrap();
        assert!(prof.windows(2).all(|w| w[1] >= w[0] * 0.9));
        assert!(monotonicity_profile(&f, &p, &[0.0; 3], &[2.0]).is_err());
    }

    #[test]
    fn report_row_matches_header() {
        let r = AsymptoticsReport::empty(0.1);
        assert_eq!(r.csv_row("x").split(',').count(), ASYMPTOTICS_CSV_HEADER.split(',').count());
    }
}
