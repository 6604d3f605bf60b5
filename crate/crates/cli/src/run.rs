//! `qtensor run`: continuation, analyses and artifact files for one config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use qtensor_core::asymptotics::{AsymptoticsReport, RegionSpec};
use qtensor_core::defects::defects_csv_header;
use qtensor_core::field::uniaxial_fields;
use qtensor_core::harmonic::{dirichlet_energy, harmonic_residual, singular_set, SINGULAR_THRESHOLD};
use qtensor_core::io::Num;
use qtensor_core::optimize::CONVERGENCE_CSV_HEADER;
use qtensor_core::tensor::UNIAXIAL_TOL;
use qtensor_core::{
    boundary_director, build_domain, canonical_harmonic_2d, continuation, minimize_dirichlet, read_any,
    BoundarySpec, ContinuationOutcome, ContinuationSetup, DirectorField, Error, Field, FieldTensor, Grid,
    ModeRecord,
};

use crate::config::{BoundaryConfig, ExperimentConfig};

#[derive(Debug)]
pub enum RunError {
    /// The config is valid text but cannot be set up (bad boundary file,
    /// unwritable output directory); maps to the usage exit code.
    Setup(String),
    /// The chain aborted; partial artifacts were written to `dir`.
    Solver { dir: PathBuf, message: String },
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Setup(m) => write!(f, "{m}"),
            RunError::Solver { dir, message } => {
                write!(f, "{message} (partial results in {})", dir.display())
            }
        }
    }
}

fn setup_err(e: impl std::fmt::Display) -> RunError {
    RunError::Setup(e.to_string())
}

fn boundary_spec(cfg: &ExperimentConfig, grid: &Arc<Grid>) -> Result<BoundarySpec, RunError> {
    Ok(match &cfg.boundary {
        BoundaryConfig::Planar { degree } => BoundarySpec::Planar { degree: *degree },
        BoundaryConfig::Radial => BoundarySpec::Radial,
        BoundaryConfig::Uniform { director } => BoundarySpec::Uniform { director: *director },
        BoundaryConfig::Tabulated { file } => {
            let text = fs::read(file).map_err(|e| setup_err(format!("{}: {e}", file.display())))?;
            let n = read_any(&text[..])
                .and_then(|d| d.into_directors())
                .map_err(|e| setup_err(format!("{}: {e}", file.display())))?;
            if !n.grid().same_layout(grid) {
                return Err(setup_err(format!(
                    "{}: director grid does not match the configured domain",
                    file.display()
                )));
            }
            let spec = BoundarySpec::Tabulated(n);
            boundary_director(grid, &spec).map_err(|e| setup_err(format!("{}: {e}", file.display())))?;
            spec
        }
    })
}

/// Either tensor representation of one level.
enum LevelField {
    Planar(Field<qtensor_core::QTensor2>),
    Spatial(Field<qtensor_core::QTensor3>),
}

fn level_field(rec: &ModeRecord) -> Result<LevelField, Error> {
    Ok(match rec {
        ModeRecord::Full2(r) => LevelField::Planar(r.state.clone()),
        ModeRecord::Full3(r) => LevelField::Spatial(r.state.clone()),
        ModeRecord::Uniaxial(r) => LevelField::Spatial(r.state.to_field()?),
    })
}

fn asymptotics_of<T: FieldTensor>(
    f: &Field<T>,
    n0: Option<&DirectorField>,
    p: &qtensor_core::MaterialParams,
    region: &RegionSpec,
) -> AsymptoticsReport {
    let u = uniaxial_fields(f, UNIAXIAL_TOL);
    match AsymptoticsReport::compute(f, &u.s, &u.n, n0, p, region) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("warning: asymptotics at L = {}: {e}", p.l);
            AsymptoticsReport::empty(p.l)
        }
    }
}

fn level_tag(l: f64) -> String {
    format!("L{}", Num(l))
}

fn write(dir: &Path, name: &str, contents: &[u8]) -> Result<(), RunError> {
    fs::write(dir.join(name), contents).map_err(|e| setup_err(format!("{}: {e}", dir.join(name).display())))
}

struct LimitingMap {
    director: DirectorField,
    /// Discrete harmonic residual; not reported for punctured canonical maps.
    residual: Option<f64>,
    singular_points: usize,
}

/// 3D and degree-zero planar data: discrete harmonic map from the boundary
/// extension. Planar data of nonzero degree: canonical map with the
/// punctures at the defects of the last level.
fn limiting_map(
    grid: &Arc<Grid>,
    spec: &BoundarySpec,
    cfg: &ExperimentConfig,
    out: &ContinuationOutcome,
) -> Result<LimitingMap, Error> {
    let b = boundary_director(grid, spec)?;
    let (director, residual) = match minimize_dirichlet(&b, &b, &cfg.opts) {
        Ok(rec) => {
            if !rec.converged() {
                eprintln!(
                    "warning: limiting map stopped ({}) at residual {:.3e}",
                    rec.termination.name(),
                    rec.residual
                );
            }
            let r = harmonic_residual(&rec.state);
            (rec.state, Some(r))
        }
        Err(Error::Topology(_)) => {
            let last = out
                .steps
                .last()
                .ok_or_else(|| Error::Topology("no level to take defect positions from".into()))?;
            let punctures: Vec<_> = last
                .summary
                .defects
                .iter()
                .filter_map(|d| d.director_winding.map(|w| (d.position, w)))
                .collect();
            (canonical_harmonic_2d(&punctures, &b)?.director, None)
        }
        Err(e) => return Err(e),
    };
    let singular_points = if grid.dim() == 3 { singular_set(&director, SINGULAR_THRESHOLD).len() } else { 0 };
    Ok(LimitingMap {
        residual,
        director,
        singular_points,
    })
}

/// One `key=value` line per scalar, in a fixed order.
fn summary_text(
    cfg: &ExperimentConfig,
    grid: &Grid,
    out: &ContinuationOutcome,
    limit: Option<&LimitingMap>,
) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("run_id", &cfg.run_id);
    kv("status", &if out.succeeded() { "ok" } else { "failed" });
    let n = grid.extents();
    kv("grid.dim", &grid.dim());
    kv("grid.shape", &grid.shape().tag());
    kv("grid.nx", &n[0]);
    kv("grid.ny", &n[1]);
    kv("grid.nz", &n[2]);
    kv("grid.h", &Num(grid.h()));
    kv("grid.interior_nodes", &grid.interior_nodes().len());
    kv("mode", &cfg.opts.mode.name());
    kv("method", &cfg.opts.method.name());
    kv("levels", &out.steps.len());
    for (k, st) in out.steps.iter().enumerate() {
        let e = st.record.energy();
        let m = &st.summary;
        let key = |name: &str| format!("level{k}.{name}");
        kv(&key("L"), &Num(m.l));
        kv(&key("energy"), &Num(m.energy));
        kv(&key("elastic"), &Num(e.elastic));
        kv(&key("bulk_over_L"), &Num(e.bulk_over_l));
        kv(&key("iterations"), &m.iterations);
        kv(&key("termination"), &m.termination.name());
        kv(&key("residual"), &Num(m.residual));
        kv(&key("defects"), &m.defects.len());
        kv(&key("sup_psi"), &Num(m.sup_psi));
        if let Some(b) = m.max_beta2 {
            kv(&key("max_beta2"), &Num(b));
        }
        kv(&key("max_principle_excess"), &Num(m.max_principle_excess));
        kv(&key("clamped_nodes"), &m.clamped_nodes);
    }
    if let Some(st) = out.steps.last() {
        kv("energy", &Num(st.summary.energy));
    }
    if let Some((l, e)) = &out.failure {
        kv("failure.L", &Num(*l));
        kv("failure.message", &e.to_string().replace('\n', " "));
    }
    if let Some(m) = limit {
        kv("limiting_map.energy", &Num(dirichlet_energy(&m.director)));
        if let Some(r) = m.residual {
            kv("limiting_map.residual", &Num(r));
        }
        if grid.dim() == 3 {
            kv("limiting_map.singular_points", &m.singular_points);
        }
    }
    s
}

/// Runs a parsed config and writes every artifact into its run directory.
/// Returns the directory on success.
pub fn execute(cfg: &ExperimentConfig) -> Result<PathBuf, RunError> {
    let t0 = Instant::now();
    let grid = Arc::new(build_domain(cfg.shape, cfg.resolution).map_err(setup_err)?);
    let spec = boundary_spec(cfg, &grid)?;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| setup_err(format!("{}: {e}", dir.display())))?;
    write(&dir, "config.ini", cfg.emit().as_bytes())?;

    let setup = ContinuationSetup {
        grid: grid.clone(),
        boundary: spec.clone(),
        params: cfg.params(),
        schedule: cfg.schedule.clone(),
        opts: cfg.opts.clone(),
    };
    let out = continuation(&setup).map_err(setup_err)?;
    for st in &out.steps {
        eprintln!(
            "L = {}: energy {:.10e}, {} iterations ({}), {} defect(s), {:.1}s",
            st.summary.l,
            st.summary.energy,
            st.summary.iterations,
            st.summary.termination.name(),
            st.summary.defects.len(),
            t0.elapsed().as_secs_f64()
        );
    }

    let mut fields = Vec::with_capacity(out.steps.len());
    for st in &out.steps {
        let tag = level_tag(st.summary.l);
        let mut conv = String::from(CONVERGENCE_CSV_HEADER);
        conv.push('\n');
        for r in st.record.history() {
            conv.push_str(&r.csv_row());
            conv.push('\n');
        }
        write(&dir, &format!("convergence_{tag}.csv"), conv.as_bytes())?;
        let f = level_field(&st.record).map_err(setup_err)?;
        if cfg.analysis.dump_fields {
            let mut buf = Vec::new();
            match &f {
                LevelField::Planar(f) => f.write_qfield(&mut buf),
                LevelField::Spatial(f) => f.write_qfield(&mut buf),
            }
            .map_err(setup_err)?;
            write(&dir, &format!("field_{tag}.qfield"), &buf)?;
        }
        fields.push(f);
    }

    let limit = if cfg.analysis.limiting_map {
        match limiting_map(&grid, &spec, cfg, &out) {
            Ok(m) => {
                let mut buf = Vec::new();
                m.director.write_qfield(&mut buf).map_err(setup_err)?;
                write(&dir, "limiting_director.qfield", &buf)?;
                Some(m)
            }
            Err(e) => {
                eprintln!("warning: limiting map skipped: {e}");
                None
            }
        }
    } else {
        None
    };

    if cfg.analysis.defects {
        let dim = grid.dim();
        let mut csv = format!("{}\n", defects_csv_header(dim));
        for st in &out.steps {
            for d in &st.summary.defects {
                csv.push_str(&d.csv_row(&cfg.run_id, st.summary.l, dim));
                csv.push('\n');
            }
        }
        write(&dir, "defects.csv", csv.as_bytes())?;
    }

    if cfg.analysis.asymptotics {
        let levels: Vec<&[_]> = out.steps.iter().map(|st| st.summary.defects.as_slice()).collect();
        let regions = RegionSpec::along_schedule(&grid, &levels);
        let n0 = limit.as_ref().map(|m| &m.director);
        let mut csv = format!("{}\n", qtensor_core::asymptotics::ASYMPTOTICS_CSV_HEADER);
        for ((st, f), region) in out.steps.iter().zip(&fields).zip(regions) {
            let region = match cfg.analysis.annulus {
                Some((a, b)) => region.with_annulus(a, b),
                None => region,
            };
            let row = match f {
                LevelField::Planar(f) => asymptotics_of(f, n0, &st.params, &region),
                LevelField::Spatial(f) => asymptotics_of(f, n0, &st.params, &region),
            };
            csv.push_str(&row.csv_row(&cfg.run_id));
            csv.push('\n');
        }
        write(&dir, "asymptotics.csv", csv.as_bytes())?;
    }

    write(&dir, "summary.txt", summary_text(cfg, &grid, &out, limit.as_ref()).as_bytes())?;
    eprintln!("wrote {} in {:.1}s", dir.display(), t0.elapsed().as_secs_f64());
    match &out.failure {
        None => Ok(dir),
        Some((l, e)) => Err(RunError::Solver {
            dir,
            message: format!("continuation failed at L = {l}: {e}"),
        }),
    }
}
