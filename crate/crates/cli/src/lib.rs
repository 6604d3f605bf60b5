//! Configuration, orchestration and artifact handling behind the `qtensor`
//! binary.

pub mod compare;
pub mod config;
pub mod export;
pub mod run;

pub const EXIT_OK: i32 = 0;
/// `compare` found a delta above the tolerance.
pub const EXIT_DIFF: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Applies `QTENSOR_THREADS` to the global worker pool. Unset or empty
/// leaves the default; anything else must be a positive integer.
pub fn configure_threads() -> Result<Option<usize>, String> {
    let raw = match std::env::var("QTENSOR_THREADS") {
        Ok(v) if !v.trim().is_empty() => v,
        _ => return Ok(None),
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("QTENSOR_THREADS must be a positive integer (got '{raw}')"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    Ok(Some(n))
}
