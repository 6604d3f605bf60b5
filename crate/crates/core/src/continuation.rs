//! Continuation in `L`: a chain of minimizations along a decreasing
//! schedule, each warm-started from the previous solution.

use std::sync::Arc;

use crate::asymptotics::{check_max_principle, psi_with_well, RegionSpec};
use crate::defects::{locate_defects, DefectRecord};
use crate::error::{Error, Result};
use crate::field::{uniaxial_fields, BoundarySpec, Field, Field2, Field3, FieldTensor};
use crate::grid::Grid;
use crate::minimizer::{
    initial_field, initial_uniaxial, minimize_full, minimize_uniaxial, ModeRecord, RunRecord,
};
use crate::optimize::{MinimizeOptions, Mode, Termination};
use crate::tensor::{biaxiality, MaterialParams, UNIAXIAL_TOL};

/// Relative tolerance of the discrete maximum principle; converged runs
/// beyond it count as failures.
pub const MAX_PRINCIPLE_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ContinuationSetup {
    pub grid: Arc<Grid>,
    pub boundary: BoundarySpec,
    /// Material constants; `l` is replaced by each schedule entry.
    pub params: MaterialParams,
    pub schedule: Vec<f64>,
    pub opts: MinimizeOptions,
}

/// Scalar summary of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSummary {
    pub l: f64,
    pub energy: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub residual: f64,
    pub defects: Vec<DefectRecord>,
    /// Sup of `(s_well − s)/L` away from the defects.
    pub sup_psi: f64,
    /// Sup of `β²` over the same region (3D tensors only).
    pub max_beta2: Option<f64>,
    pub max_principle_excess: f64,
    pub clamped_nodes: usize,
}

#[derive(Clone, Debug)]
pub struct ContinuationStep {
    pub params: MaterialParams,
    pub summary: LevelSummary,
    pub record: ModeRecord,
}

/// Completed levels in schedule order; `failure` holds the level that
/// aborted the chain, if any (its step is included when a record exists).
#[derive(Debug)]
pub struct ContinuationOutcome {
    pub steps: Vec<ContinuationStep>,
    pub failure: Option<(f64, Error)>,
}

impl ContinuationOutcome {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

pub fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("empty L schedule".into()));
    }
    if schedule.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter("L values must be positive".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("L schedule must be strictly decreasing".into()));
    }
    Ok(())
}

enum State {
    Full2(Field2),
    Full3(Field3),
    Uniaxial(crate::minimizer::UniaxialState),
}

fn summarize<T: FieldTensor>(
    f: &Field<T>,
    p: &MaterialParams,
    rec_energy: f64,
    iterations: usize,
    termination: Termination,
    residual: f64,
    clamped: usize,
) -> Result<LevelSummary> {
    let grid = f.grid();
    let defects = locate_defects(f, p)?;
    let uf = uniaxial_fields(f, UNIAXIAL_TOL);
    let region = RegionSpec::around_defects(grid, &defects);
    let nodes = region.nodes(grid);
    let psi = psi_with_well(&uf.s, T::well_order(p), p.l);
    let sup_psi = nodes.iter().map(|&i| psi[i].abs()).fold(0.0, f64::max);
    let max_beta2 = if T::DOFS == 5 {
        let f3 = Field3::from_values(grid.clone(), f.values().to_vec())?;
        Some(
            nodes
                .iter()
                .map(|&i| biaxiality(&f3.get(i)).unwrap_or(0.0))
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(LevelSummary {
        l: p.l,
        energy: rec_energy,
        iterations,
        termination,
        residual,
        defects,
        sup_psi,
        max_beta2,
        max_principle_excess: check_max_principle(f, p),
        clamped_nodes: clamped,
    })
}

fn summary_of<T: FieldTensor>(r: &RunRecord<Field<T>>, p: &MaterialParams) -> Result<LevelSummary> {
    summarize(&r.state, p, r.energy.total(), r.iterations, r.termination, r.residual, 0)
}

/// Runs the schedule. Invalid setups are errors; a failing level (solver
/// error, non-converged termination, maximum-principle violation) ends the
/// chain and is reported in `failure` with the earlier levels kept.
pub fn continuation(setup: &ContinuationSetup) -> Result<ContinuationOutcome> {
    validate_schedule(&setup.schedule)?;
    setup.opts.validate()?;
    let grid = &setup.grid;
    let p0 = setup.params.with_l(setup.schedule[0])?;
    let mut state = match (setup.opts.mode, grid.dim()) {
        (Mode::Uniaxial, _) => State::Uniaxial(initial_uniaxial(grid, &setup.boundary, &p0)?),
        (Mode::Full, 2) => State::Full2(initial_field(grid, &setup.boundary, &p0)?),
        (Mode::Full, _) => State::Full3(initial_field(grid, &setup.boundary, &p0)?),
    };
    let mut steps = Vec::with_capacity(setup.schedule.len());
    for &l in &setup.schedule {
        let p = setup.params.with_l(l)?;
        let run = match &state {
            State::Full2(f) => minimize_full(f, &p, &setup.opts).and_then(|r| {
                let s = summary_of(&r, &p)?;
                Ok((ModeRecord::Full2(r), s))
            }),
            State::Full3(f) => minimize_full(f, &p, &setup.opts).and_then(|r| {
                let s = summary_of(&r, &p)?;
                Ok((ModeRecord::Full3(r), s))
            }),
            State::Uniaxial(u) => minimize_uniaxial(&u.s, &u.n, &p, &setup.opts).and_then(|r| {
                let f = r.state.to_field()?;
                let s = summarize(&f, &p, r.energy.total(), r.iterations, r.termination, r.residual, r.clamped_nodes)?;
                Ok((ModeRecord::Uniaxial(r), s))
            }),
        };
        let (record, summary) = match run {
            Ok(v) => v,
            Err(e) => return Ok(ContinuationOutcome { steps, failure: Some((l, e)) }),
        };
        let well = match &record {
            ModeRecord::Full2(_) => <crate::tensor::QTensor2 as FieldTensor>::well_norm(&p),
            _ => <crate::tensor::QTensor3 as FieldTensor>::well_norm(&p),
        };
        let failure = if summary.termination != Termination::Converged {
            Some(Error::NonFinite(format!(
                "L = {l}: minimizer stopped ({}) at residual {:.3e}",
                summary.termination.name(),
                summary.residual
            )))
        } else if summary.max_principle_excess > MAX_PRINCIPLE_TOL * well {
            Some(Error::NonFinite(format!(
                "L = {l}: maximum principle violated by {:.3e}",
                summary.max_principle_excess
            )))
        } else {
            None
        };
        state = match &record {
            ModeRecord::Full2(r) => State::Full2(r.state.clone()),
            ModeRecord::Full3(r) => State::Full3(r.state.clone()),
            ModeRecord::Uniaxial(r) => State::Uniaxial(r.state.clone()),
        };
        steps.push(ContinuationStep { params: p, summary, record });
        if let Some(e) = failure {
            return Ok(ContinuationOutcome { steps, failure: Some((l, e)) });
        }
    }
    Ok(ContinuationOutcome { steps, failure: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, Resolution, Shape};
    use crate::optimize::Method;

    #[test]
    fn schedule_validation() {
        assert!(validate_schedule(&[0.04, 0.02, 0.01]).is_ok());
        assert!(validate_schedule(&[0.02, 0.02]).is_err());
        assert!(validate_schedule(&[0.01, 0.02]).is_err());
        assert!(validate_schedule(&[0.01, -0.02]).is_err());
        assert!(validate_schedule(&[]).is_err());
    }

    #[test]
    fn planar_chain_tracks_one_defect() {
        let grid = Arc::new(build_domain(Shape::Disk { radius: 1.0 }, Resolution::Nodes(41)).unwrap());
        let setup = ContinuationSetup {
            grid: grid.clone(),
            boundary: BoundarySpec::Planar { degree: 0.5 },
            params: MaterialParams::new(1.0, 1.0, 1.0, 1.0).unwrap(),
            schedule: vec![0.04, 0.02],
            opts: MinimizeOptions {
                method: Method::NonlinearCg,
                ..Default::default()
            },
        };
        let out = continuation(&setup).unwrap();
        assert!(out.succeeded(), "{:?}", out.failure);
        assert_eq!(out.steps.len(), 2);
        for st in &out.steps {
            assert_eq!(st.summary.defects.len(), 1);
            assert!(st.summary.max_beta2.is_none());
            assert!(st.record.history().windows(2).all(|w| w[1].energy <= w[0].energy * (1.0 + 1e-12)));
        }
        let a = out.steps[0].summary.defects[0].position;
        let b = out.steps[1].summary.defects[0].position;
        assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 2.0 * grid.h());
    }

    #[test]
    fn iteration_cap_aborts_with_partial_results() {
        let grid = Arc::new(build_domain(Shape::Disk { radius: 1.0 }, Resolution::Nodes(33)).unwrap());
        let setup = ContinuationSetup {
            grid,
            boundary: BoundarySpec::Planar { degree: 1.0 },
            params: MaterialParams::new(1.0, 1.0, 1.0, 1.0).unwrap(),
            schedule: vec![0.04, 0.02],
            opts: MinimizeOptions {
                max_iters: 3,
                ..Default::default()
            },
        };
        let out = continuation(&setup).unwrap();
        assert_eq!(out.steps.len(), 1);
        assert_eq!(out.failure.as_ref().unwrap().0, 0.04);
    }
}
