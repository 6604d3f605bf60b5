//! `qtensor export`: convert a field dump between QFIELD and CSV.

use std::io::Write;
use std::path::Path;

use qtensor_core::read_any;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Qfield,
}

/// Reads `input` (either format) and writes it in `format`.
pub fn export<W: Write>(input: &Path, format: Format, out: &mut W) -> Result<(), String> {
    let bytes = std::fs::read(input).map_err(|e| format!("{}: {e}", input.display()))?;
    let data = read_any(&bytes[..]).map_err(|e| format!("{}: {e}", input.display()))?;
    match format {
        Format::Csv => data.write_csv(out),
        Format::Qfield => data.write_qfield(out),
    }
    .map_err(|e| e.to_string())
}
