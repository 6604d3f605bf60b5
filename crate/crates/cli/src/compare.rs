//! `qtensor compare`: differences between the `summary.txt` of two runs.

use std::collections::BTreeMap;
use std::path::Path;

pub type Summary = BTreeMap<String, String>;

pub fn read_summary(dir: &Path) -> Result<Summary, String> {
    let path = dir.join("summary.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Summary::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{} line {}: expected key=value", path.display(), i + 1))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Delta {
    /// `|a − b| / max(|a|, |b|)`; infinite when exactly one side is NaN.
    Relative(f64),
    /// Non-numeric values that differ.
    Text,
    /// Field-derived key of runs on different grids.
    Incomparable,
    OnlyA,
    OnlyB,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffRow {
    pub key: String,
    pub a: Option<String>,
    pub b: Option<String>,
    pub delta: Delta,
}

fn is_grid_key(k: &str) -> bool {
    k.starts_with("grid.")
}

/// Keys computed from the solution fields; on different grids their
/// numeric difference mixes discretization with physics.
fn is_field_key(k: &str) -> bool {
    k.starts_with("level") && k != "levels" || k == "energy" || k.starts_with("limiting_map.")
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b || (a.is_nan() && b.is_nan()) {
        0.0
    } else if a.is_nan() || b.is_nan() {
        f64::INFINITY
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Rows for every key whose values differ, in key order.
pub fn diff(a: &Summary, b: &Summary) -> Vec<DiffRow> {
    let grids_differ = a
        .iter()
        .chain(b.iter())
        .filter(|(k, _)| is_grid_key(k))
        .any(|(k, _)| a.get(k) != b.get(k));
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::new();
    for k in keys {
        let (va, vb) = (a.get(k), b.get(k));
        let delta = match (va, vb) {
            (Some(_), None) => Delta::OnlyA,
            (None, Some(_)) => Delta::OnlyB,
            (Some(_), Some(_)) if grids_differ && is_field_key(k) => Delta::Incomparable,
            (Some(x), Some(y)) => match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(p), Ok(q)) => {
                    let r = relative(p, q);
                    if r == 0.0 {
                        continue;
                    }
                    Delta::Relative(r)
                }
                _ if x == y => continue,
                _ => Delta::Text,
            },
            (None, None) => unreachable!(),
        };
        rows.push(DiffRow {
            key: k.clone(),
            a: va.cloned(),
            b: vb.cloned(),
            delta,
        });
    }
    rows
}

/// Rows whose relative delta exceeds `tol`.
pub fn breaches(rows: &[DiffRow], tol: f64) -> usize {
    rows.iter()
        .filter(|r| matches!(r.delta, Delta::Relative(d) if d > tol))
        .count()
}

pub fn format_table(rows: &[DiffRow]) -> String {
    let w = rows.iter().map(|r| r.key.len()).max().unwrap_or(3).max(3);
    let mut s = String::new();
    for r in rows {
        let a = r.a.as_deref().unwrap_or("-");
        let b = r.b.as_deref().unwrap_or("-");
        let d = match r.delta {
            Delta::Relative(d) => format!("{d:.3e}"),
            Delta::Text => "differs".into(),
            Delta::Incomparable => "incomparable".into(),
            Delta::OnlyA => "only in A".into(),
            Delta::OnlyB => "only in B".into(),
        };
        s.push_str(&format!("{:<w$}  {a}  {b}  {d}\n", r.key));
    }
    s
}
