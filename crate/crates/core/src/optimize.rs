//! Descent methods over a flat state vector.
//!
//! An [`Objective`] supplies the energy and its gradient, a diagonal
//! preconditioner, and optionally a retraction onto a constraint set with the
//! matching tangent projection (used for unit directors).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::EnergyParts;
use crate::grid::chunked_sum;
use crate::io::Num;

pub trait Objective: Sync {
    fn len(&self) -> usize;
    /// Energy at `x`; writes the (tangent) gradient into `grad`.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> EnergyParts;
    /// Applies the inverse of a positive diagonal preconditioner to `g`.
    fn precondition(&self, x: &[f64], g: &[f64], out: &mut [f64]);
    /// Maps a trial point back onto the constraint set.
    fn retract(&self, _x: &mut [f64]) {}
    /// Projects `v` onto the tangent space at `x`.
    fn transport(&self, _x: &[f64], _v: &mut [f64]) {}
    /// Stopping measure of a gradient (max-norm per unit cell volume).
    fn residual(&self, g: &[f64]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    GradientFlow,
    NonlinearCg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GradientFlow => "gradient-flow",
            Method::NonlinearCg => "ncg",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "gradient-flow" | "gf" => Some(Method::GradientFlow),
            "ncg" | "nonlinear-cg" | "cg" => Some(Method::NonlinearCg),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Full,
    Uniaxial,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Uniaxial => "uniaxial",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "full" => Some(Mode::Full),
            "uniaxial" => Some(Mode::Uniaxial),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizeOptions {
    pub mode: Mode,
    pub method: Method,
    /// Pseudo-time step in preconditioned units (gradient flow; halved on
    /// energy increase and regrown up to this value), or the first trial step
    /// of the NCG line search.
    pub dt: f64,
    /// Threshold on the max-norm of the gradient per unit cell volume.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Record every `record_cadence`-th iterate in the history.
    pub record_cadence: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            mode: Mode::Full,
            method: Method::GradientFlow,
            dt: 0.5,
            grad_tol: 1e-6,
            max_iters: 20_000,
            record_cadence: 10,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive (got {})", self.dt)));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grad_tol must be positive (got {})",
                self.grad_tol
            )));
        }
        if self.record_cadence == 0 {
            return Err(Error::InvalidParameter("record_cadence must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub energy: f64,
    pub elastic: f64,
    pub bulk_over_l: f64,
    pub grad_max: f64,
}

pub const CONVERGENCE_CSV_HEADER: &str = "iter,energy,elastic,bulk_over_L,grad_max";

impl IterRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iter,
            Num(self.energy),
            Num(self.elastic),
            Num(self.bulk_over_l),
            Num(self.grad_max)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
    /// No step lowered the energy beyond roundoff along a descent direction.
    Stalled,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::Stalled => "stalled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeOutcome {
    pub x: Vec<f64>,
    pub history: Vec<IterRecord>,
    pub termination: Termination,
    pub iterations: usize,
    pub parts: EnergyParts,
    pub residual: f64,
}

/// Relative slack on energy increases accepted as roundoff.
pub const ENERGY_SLACK: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    chunked_sum(a.len(), |r| [r.map(|i| a[i] * b[i]).sum::<f64>()])[0]
}

fn axpy_into(out: &mut [f64], x: &[f64], a: f64, d: &[f64]) {
    out.par_iter_mut()
        .zip(x.par_iter().zip(d.par_iter()))
        .for_each(|(o, (xi, di))| *o = xi + a * di);
}

fn all_finite(v: &[f64]) -> bool {
    v.par_iter().all(|x| x.is_finite())
}

struct Recorder {
    cadence: usize,
    history: Vec<IterRecord>,
}

impl Recorder {
    fn push(&mut self, iter: usize, parts: &EnergyParts, res: f64, force: bool) {
        if force || iter % self.cadence == 0 {
            if self.history.last().map(|r| r.iter) == Some(iter) {
                return;
            }
            self.history.push(IterRecord {
                iter,
                energy: parts.total(),
                elastic: parts.elastic,
                bulk_over_l: parts.bulk_over_l,
                grad_max: res,
            });
        }
    }
}

pub fn optimize<O: Objective>(obj: &O, x0: Vec<f64>, opts: &MinimizeOptions) -> Result<OptimizeOutcome> {
    opts.validate()?;
    if x0.len() != obj.len() {
        return Err(Error::Shape("initial state has the wrong length".into()));
    }
    if !all_finite(&x0) {
        return Err(Error::NonFinite("initial state".into()));
    }
    match opts.method {
        Method::GradientFlow => gradient_flow(obj, x0, opts),
        Method::NonlinearCg => nonlinear_cg(obj, x0, opts),
    }
}

fn check_energy(parts: &EnergyParts, iter: usize) -> Result<()> {
    if parts.total().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("energy at iteration {iter}")))
    }
}

fn gradient_flow<O: Objective>(obj: &O, mut x: Vec<f64>, opts: &MinimizeOptions) -> Result<OptimizeOutcome> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut parts = obj.evaluate(&x, &mut g);
    check_energy(&parts, 0)?;
    let mut res = obj.residual(&g);
    let mut rec = Recorder {
        cadence: opts.record_cadence,
        history: Vec::new(),
    };
    rec.push(0, &parts, res, true);
    let mut dt = opts.dt;
    let min_dt = opts.dt * 1e-14;
    let mut iter = 0;
    let termination = loop {
        if res < opts.grad_tol {
            break Termination::Converged;
        }
        if iter >= opts.max_iters {
            break Termination::MaxIters;
        }
        obj.precondition(&x, &g, &mut z);
        let e0 = parts.total();
        let accepted = loop {
            axpy_into(&mut trial, &x, -dt, &z);
            obj.retract(&mut trial);
            let p1 = obj.evaluate(&trial, &mut g_trial);
            if p1.total().is_finite() && p1.total() <= e0 + ENERGY_SLACK * e0.abs() {
                break Some(p1);
            }
            dt *= 0.5;
            if dt < min_dt {
                break None;
            }
        };
        let Some(p1) = accepted else {
            break Termination::Stalled;
        };
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_trial);
        parts = p1;
        res = obj.residual(&g);
        iter += 1;
        dt = (dt * 1.1).min(opts.dt);
        rec.push(iter, &parts, res, false);
    };
    rec.push(iter, &parts, res, true);
    if !all_finite(&x) {
        return Err(Error::NonFinite("state after gradient flow".into()));
    }
    Ok(OptimizeOutcome {
        x,
        history: rec.history,
        termination,
        iterations: iter,
        parts,
        residual: res,
    })
}

struct LineSearchResult {
    alpha: f64,
    parts: EnergyParts,
}

const ARMIJO_C1: f64 = 1e-4;
const CURVATURE_C2: f64 = 0.5;
const MAX_LINE_EVALS: usize = 30;

/// Finds a step satisfying sufficient decrease and a curvature condition.
/// On success `x1` and `g1` hold the accepted point and its gradient.
#[allow(clippy::too_many_arguments)]
fn line_search<O: Objective>(
    obj: &O,
    x: &[f64],
    e0: f64,
    d: &[f64],
    dphi0: f64,
    alpha0: f64,
    x1: &mut [f64],
    g1: &mut [f64],
    scratch: &mut [f64],
) -> Option<LineSearchResult> {
    let slack = ENERGY_SLACK * e0.abs();
    let mut a = alpha0;
    let (mut lo, mut dlo) = (0.0, dphi0);
    let mut hi: Option<(f64, Option<f64>)> = None;
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..MAX_LINE_EVALS {
        axpy_into(x1, x, a, d);
        obj.retract(x1);
        let p1 = obj.evaluate(x1, g1);
        let e1 = p1.total();
        if !e1.is_finite() {
            hi = Some((a, None));
            a = 0.5 * (lo + a);
            continue;
        }
        scratch.copy_from_slice(d);
        obj.transport(x1, scratch);
        let dphi = dot(g1, scratch);
        let armijo = e1 <= e0 + ARMIJO_C1 * a * dphi0 + slack;
        if armijo {
            if dphi.abs() <= CURVATURE_C2 * dphi0.abs() {
                return Some(LineSearchResult { alpha: a, parts: p1 });
            }
            if best.map_or(true, |(_, eb)| e1 < eb) {
                best = Some((a, e1));
            }
        }
        let next = if !armijo {
            hi = Some((a, Some(dphi)));
            // quadratic model through φ(0), φ'(0), φ(a)
            let denom = 2.0 * (e1 - e0 - dphi0 * a);
            let q = if denom > 0.0 { -dphi0 * a * a / denom } else { 0.5 * a };
            q.clamp(lo + 0.1 * (a - lo), lo + 0.5 * (a - lo))
        } else if dphi < 0.0 {
            lo = a;
            dlo = dphi;
            match hi {
                Some((h, Some(dh))) if dh > dlo => {
                    let s = lo - dlo * (h - lo) / (dh - dlo);
                    s.clamp(lo + 0.1 * (h - lo), h - 0.1 * (h - lo))
                }
                Some((h, _)) => 0.5 * (lo + h),
                None => {
                    let s = if dphi > dphi0 { a * dphi0 / (dphi0 - dphi) } else { 4.0 * a };
                    s.clamp(1.5 * a, 10.0 * a)
                }
            }
        } else {
            hi = Some((a, Some(dphi)));
            let s = lo - dlo * (a - lo) / (dphi - dlo);
            s.clamp(lo + 0.1 * (a - lo), a - 0.1 * (a - lo))
        };
        if !(next > 0.0) || (next - a).abs() <= 1e-15 * a {
            break;
        }
        a = next;
    }
    let (a, _) = best?;
    axpy_into(x1, x, a, d);
    obj.retract(x1);
    let p1 = obj.evaluate(x1, g1);
    Some(LineSearchResult { alpha: a, parts: p1 })
}

fn nonlinear_cg<O: Objective>(obj: &O, mut x: Vec<f64>, opts: &MinimizeOptions) -> Result<OptimizeOutcome> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut x1 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    let mut z1 = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut parts = obj.evaluate(&x, &mut g);
    check_energy(&parts, 0)?;
    let mut res = obj.residual(&g);
    let mut rec = Recorder {
        cadence: opts.record_cadence,
        history: Vec::new(),
    };
    rec.push(0, &parts, res, true);
    obj.precondition(&x, &g, &mut z);
    d.par_iter_mut().zip(z.par_iter()).for_each(|(di, zi)| *di = -zi);
    let mut gz = dot(&g, &z);
    let mut alpha = opts.dt;
    let mut iter = 0;
    let termination = loop {
        if res < opts.grad_tol {
            break Termination::Converged;
        }
        if iter >= opts.max_iters {
            break Termination::MaxIters;
        }
        let mut dphi0 = dot(&g, &d);
        let mut steepest = false;
        if !(dphi0 < 0.0) {
            d.par_iter_mut().zip(z.par_iter()).for_each(|(di, zi)| *di = -zi);
            dphi0 = -gz;
            steepest = true;
        }
        let e0 = parts.total();
        let mut found = line_search(obj, &x, e0, &d, dphi0, alpha, &mut x1, &mut g1, &mut scratch);
        if found.is_none() && !steepest {
            d.par_iter_mut().zip(z.par_iter()).for_each(|(di, zi)| *di = -zi);
            found = line_search(obj, &x, e0, &d, -gz, opts.dt, &mut x1, &mut g1, &mut scratch);
        }
        let Some(ls) = found else {
            break Termination::Stalled;
        };
        alpha = ls.alpha;
        // carry the previous direction and gradient to the new point
        obj.transport(&x1, &mut d);
        obj.transport(&x1, &mut g);
        obj.precondition(&x1, &g1, &mut z1);
        let gz1 = dot(&g1, &z1);
        let yz = gz1 - dot(&g, &z1);
        let beta = if gz > 0.0 { (yz / gz).max(0.0) } else { 0.0 };
        d.par_iter_mut()
            .zip(z1.par_iter())
            .for_each(|(di, zi)| *di = -zi + beta * *di);
        std::mem::swap(&mut x, &mut x1);
        std::mem::swap(&mut g, &mut g1);
        std::mem::swap(&mut z, &mut z1);
        gz = gz1;
        parts = ls.parts;
        check_energy(&parts, iter + 1)?;
        res = obj.residual(&g);
        iter += 1;
        rec.push(iter, &parts, res, false);
    };
    rec.push(iter, &parts, res, true);
    if !all_finite(&x) {
        return Err(Error::NonFinite("state after conjugate gradient".into()));
    }
    Ok(OptimizeOutcome {
        x,
        history: rec.history,
        termination,
        iterations: iter,
        parts,
        residual: res,
    })
}
