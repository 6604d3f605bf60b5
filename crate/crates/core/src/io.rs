//! Text dumps of tensor and director fields.
//!
//! ```text
//! QFIELD v1 dim=3 nx=48 ny=48 nz=48 h=0.0425531914893617 dofs=5
//! 0 0 0 0 0 0 0 0 0
//! ...
//! ```
//!
//! One line per node in linear-index order: grid coordinates, mask code
//! (0 exterior, 1 boundary, 2 interior) and the coefficients. Director dumps
//! use `dofs=<dim>` and carry `unit=1`. Numbers use the shortest
//! representation that reads back to the same `f64`.
//!
//! The CSV export carries the same header as a `#` comment and adds the
//! derived columns `s` and `beta2`; reading it back drops them.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{DirectorField, Field, FieldTensor};
use crate::grid::{Grid, NodeKind};
use crate::tensor::{biaxiality, decompose, QTensor2, QTensor3, UNIAXIAL_TOL};

/// Shortest round-trip text of an `f64`, in exponent form outside
/// `[1e-5, 1e16)` so tiny and huge values stay short.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QFieldData {
    pub grid: Arc<Grid>,
    pub dofs: usize,
    pub unit: bool,
    /// `dofs` values per node, exterior nodes included.
    pub values: Vec<f64>,
}

pub fn header_line(grid: &Grid, dofs: usize, unit: bool) -> String {
    let n = grid.extents();
    let mut s = format!("QFIELD v1 dim={} nx={} ny={}", grid.dim(), n[0], n[1]);
    if grid.dim() == 3 {
        s.push_str(&format!(" nz={}", n[2]));
    }
    s.push_str(&format!(" h={} dofs={}", Num(grid.h()), dofs));
    if unit {
        s.push_str(" unit=1");
    }
    s
}

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_qfield<W: Write>(
    w: &mut W,
    grid: &Grid,
    dofs: usize,
    unit: bool,
    values: &[f64],
) -> Result<()> {
    if values.len() != grid.len() * dofs {
        return Err(Error::Shape("value array does not match the grid".into()));
    }
    let mut out = String::with_capacity(grid.len() * (12 + 24 * dofs));
    out.push_str(&header_line(grid, dofs, unit));
    out.push('\n');
    for idx in 0..grid.len() {
        let c = grid.coords(idx);
        out.push_str(&format!("{} {}", c[0], c[1]));
        if grid.dim() == 3 {
            out.push_str(&format!(" {}", c[2]));
        }
        out.push_str(&format!(" {}", grid.kind(idx).code()));
        for v in &values[idx * dofs..(idx + 1) * dofs] {
            out.push_str(&format!(" {}", Num(*v)));
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(io_err)
}

/// Parsed header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct QFieldHeader {
    pub dim: usize,
    pub n: [usize; 3],
    pub h: f64,
    pub dofs: usize,
    pub unit: bool,
}

pub fn parse_header(line: &str) -> Result<QFieldHeader> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("QFIELD") || tokens.next() != Some("v1") {
        return Err(Error::Format("missing 'QFIELD v1' header".into()));
    }
    let mut dim = None;
    let mut n = [None, None, None];
    let mut h = None;
    let mut dofs = None;
    let mut unit = false;
    for t in tokens {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed header token '{t}'")))?;
        let int = || {
            v.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad integer in '{t}'")))
        };
        match k {
            "dim" => dim = Some(int()?),
            "nx" => n[0] = Some(int()?),
            "ny" => n[1] = Some(int()?),
            "nz" => n[2] = Some(int()?),
            "dofs" => dofs = Some(int()?),
            "unit" => unit = int()? == 1,
            "h" => {
                h = Some(
                    v.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad spacing in '{t}'")))?,
                )
            }
            _ => return Err(Error::Format(format!("unknown header key '{k}'"))),
        }
    }
    let dim = dim.ok_or_else(|| Error::Format("header lacks dim".into()))?;
    if dim != 2 && dim != 3 {
        return Err(Error::Format(format!("dim must be 2 or 3 (got {dim})")));
    }
    let nx = n[0].ok_or_else(|| Error::Format("header lacks nx".into()))?;
    let ny = n[1].ok_or_else(|| Error::Format("header lacks ny".into()))?;
    let nz = if dim == 3 {
        n[2].ok_or_else(|| Error::Format("header lacks nz".into()))?
    } else {
        1
    };
    Ok(QFieldHeader {
        dim,
        n: [nx, ny, nz],
        h: h.ok_or_else(|| Error::Format("header lacks h".into()))?,
        dofs: dofs.ok_or_else(|| Error::Format("header lacks dofs".into()))?,
        unit,
    })
}

pub fn read_qfield<R: BufRead>(r: R) -> Result<QFieldData> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty dump".into()))?
        .map_err(io_err)?;
    let hd = parse_header(&header)?;
    let mut asm = Assembler::new(hd, 0);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        asm.push(lineno + 2, &line.split_whitespace().collect::<Vec<_>>())?;
    }
    asm.finish()
}

/// Collects node rows (coordinates, mask, coefficients, then `extra`
/// ignored columns) and checks them against the header.
struct Assembler {
    hd: QFieldHeader,
    extra: usize,
    mask: Vec<NodeKind>,
    values: Vec<f64>,
}

impl Assembler {
    fn new(hd: QFieldHeader, extra: usize) -> Assembler {
        let total = hd.n[0] * hd.n[1] * hd.n[2];
        Assembler {
            mask: Vec::with_capacity(total),
            values: Vec::with_capacity(total * hd.dofs),
            hd,
            extra,
        }
    }

    fn total(&self) -> usize {
        self.hd.n[0] * self.hd.n[1] * self.hd.n[2]
    }

    fn push(&mut self, at: usize, toks: &[&str]) -> Result<()> {
        let hd = &self.hd;
        let ncoord = hd.dim;
        let want = ncoord + 1 + hd.dofs + self.extra;
        if toks.len() != want {
            return Err(Error::Format(format!(
                "line {at}: expected {want} columns, found {}",
                toks.len()
            )));
        }
        let count = self.mask.len();
        if count >= self.total() {
            return Err(Error::Format(format!("line {at}: more nodes than the header declares")));
        }
        let mut c = [0usize; 3];
        for a in 0..ncoord {
            c[a] = toks[a]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {at}: bad index '{}'", toks[a])))?;
        }
        let expect = {
            let k = count % hd.n[2];
            let j = (count / hd.n[2]) % hd.n[1];
            let i = count / (hd.n[1] * hd.n[2]);
            [i, j, k]
        };
        if c != expect {
            return Err(Error::Format(format!("line {at}: nodes out of row-major order")));
        }
        let code: u8 = toks[ncoord]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {at}: bad mask '{}'", toks[ncoord])))?;
        let kind = NodeKind::from_code(code)
            .ok_or_else(|| Error::Format(format!("line {at}: bad mask code {code}")))?;
        self.mask.push(kind);
        for t in &toks[ncoord + 1..ncoord + 1 + hd.dofs] {
            self.values.push(
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {at}: bad value '{t}'")))?,
            );
        }
        Ok(())
    }

    fn finish(self) -> Result<QFieldData> {
        let total = self.total();
        if self.mask.len() != total {
            return Err(Error::Format(format!(
                "expected {total} nodes, found {}",
                self.mask.len()
            )));
        }
        let hd = self.hd;
        let inside: Vec<bool> = self.mask.iter().map(|k| k.in_domain()).collect();
        let grid = Grid::from_mask(hd.dim, hd.n, hd.h, &inside)?;
        if grid.mask() != self.mask.as_slice() {
            return Err(Error::Format("mask codes are inconsistent with the domain".into()));
        }
        Ok(QFieldData {
            grid: Arc::new(grid),
            dofs: hd.dofs,
            unit: hd.unit,
            values: self.values,
        })
    }
}

/// Column names of the CSV export: grid indices, mask, coefficients, then
/// the derived order parameter `s` and biaxiality `beta2`.
pub fn csv_columns(dim: usize, dofs: usize) -> String {
    let mut cols: Vec<String> = ["i", "j", "k"][..dim].iter().map(|c| c.to_string()).collect();
    cols.push("mask".into());
    cols.extend((1..=dofs).map(|c| format!("c{c}")));
    cols.push("s".into());
    cols.push("beta2".into());
    cols.join(",")
}

/// `(s, beta2)` of one node. 3D tensors use the spectral amplitude `S`;
/// planar tensors `s = √2|Q|` and have no biaxiality; directors have neither.
fn derived(dofs: usize, unit: bool, c: &[f64]) -> (f64, f64) {
    match (dofs, unit) {
        (5, false) => {
            let q = QTensor3::new([c[0], c[1], c[2], c[3], c[4]]);
            let s = decompose(&q, UNIAXIAL_TOL).s_l;
            (s, biaxiality(&q).unwrap_or(f64::NAN))
        }
        (2, false) => (std::f64::consts::SQRT_2 * QTensor2::new(c[0], c[1]).norm(), f64::NAN),
        _ => (f64::NAN, f64::NAN),
    }
}

/// CSV export: a `# QFIELD ...` comment carrying the header, the column
/// row, then one row per node. Exterior nodes get `NaN` derived columns.
pub fn write_csv<W: Write>(w: &mut W, grid: &Grid, dofs: usize, unit: bool, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() * dofs {
        return Err(Error::Shape("value array does not match the grid".into()));
    }
    let mut out = String::with_capacity(grid.len() * (16 + 24 * (dofs + 2)));
    out.push_str("# ");
    out.push_str(&header_line(grid, dofs, unit));
    out.push('\n');
    out.push_str(&csv_columns(grid.dim(), dofs));
    out.push('\n');
    for idx in 0..grid.len() {
        let c = grid.coords(idx);
        for v in &c[..grid.dim()] {
            out.push_str(&format!("{v},"));
        }
        let kind = grid.kind(idx);
        out.push_str(&kind.code().to_string());
        let coeffs = &values[idx * dofs..(idx + 1) * dofs];
        for v in coeffs {
            out.push_str(&format!(",{}", Num(*v)));
        }
        let (s, b) = if kind.in_domain() { derived(dofs, unit, coeffs) } else { (f64::NAN, f64::NAN) };
        out.push_str(&format!(",{},{}\n", Num(s), Num(b)));
    }
    w.write_all(out.as_bytes()).map_err(io_err)
}

pub fn read_csv<R: BufRead>(r: R) -> Result<QFieldData> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?
        .map_err(io_err)?;
    let header = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::Format("CSV lacks the '# QFIELD' header comment".into()))?;
    let hd = parse_header(header)?;
    let cols = lines
        .next()
        .ok_or_else(|| Error::Format("CSV lacks a column row".into()))?
        .map_err(io_err)?;
    if cols.trim() != csv_columns(hd.dim, hd.dofs) {
        return Err(Error::Format(format!("line 2: unexpected columns '{}'", cols.trim())));
    }
    let mut asm = Assembler::new(hd, 2);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        asm.push(lineno + 3, &line.split(',').collect::<Vec<_>>())?;
    }
    asm.finish()
}

/// Reads either format, detected from the first line.
pub fn read_any<R: BufRead>(mut r: R) -> Result<QFieldData> {
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(io_err)?;
    if text.starts_with("# QFIELD") {
        read_csv(text.as_bytes())
    } else {
        read_qfield(text.as_bytes())
    }
}

impl QFieldData {
    pub fn write_qfield<W: Write>(&self, w: &mut W) -> Result<()> {
        write_qfield(w, &self.grid, self.dofs, self.unit, &self.values)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write_csv(w, &self.grid, self.dofs, self.unit, &self.values)
    }

    pub fn into_field<T: FieldTensor>(self) -> Result<Field<T>> {
        if self.unit || self.dofs != T::DOFS {
            return Err(Error::Format(format!(
                "dump holds {} values per node{}, expected a {}-dof tensor field",
                self.dofs,
                if self.unit { " (director)" } else { "" },
                T::DOFS
            )));
        }
        Field::from_values(self.grid, self.values)
    }

    pub fn into_directors(self) -> Result<DirectorField> {
        let dim = self.grid.dim();
        if !self.unit || self.dofs != dim {
            return Err(Error::Format("dump is not a director field".into()));
        }
        let values = self
            .values
            .chunks(dim)
            .map(|c| if dim == 2 { [c[0], c[1], 0.0] } else { [c[0], c[1], c[2]] })
            .collect();
        DirectorField::new(self.grid, values)
    }
}

impl<T: FieldTensor> Field<T> {
    pub fn write_qfield<W: Write>(&self, w: &mut W) -> Result<()> {
        write_qfield(w, self.grid(), T::DOFS, false, self.values())
    }
}

impl DirectorField {
    pub fn write_qfield<W: Write>(&self, w: &mut W) -> Result<()> {
        let dim = self.grid().dim();
        let flat: Vec<f64> = self.values().iter().flat_map(|v| v[..dim].to_vec()).collect();
        write_qfield(w, self.grid(), dim, true, &flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{boundary_director, BoundarySpec, Field2, Field3};
    use crate::grid::{build_domain, Resolution, Shape};
    use crate::tensor::{QTensor2, QTensor3};

    #[test]
    fn tensor_dump_roundtrip() {
        let g = Arc::new(build_domain(Shape::Ball { radius: 1.0 }, Resolution::Nodes(16)).unwrap());
        let gg = g.clone();
        let f = Field3::from_fn(g, |i| {
            let x = gg.position(i);
            QTensor3::new([x[0] / 3.0, x[1] * 1e-17, 0.1 + x[2], -x[0] * x[1], std::f64::consts::PI])
        })
        .unwrap();
        let mut buf = Vec::new();
        f.write_qfield(&mut buf).unwrap();
        let back: Field3 = read_qfield(&buf[..]).unwrap().into_field().unwrap();
        assert_eq!(back.values(), f.values());
        assert!(back.grid().same_layout(f.grid()));
    }

    #[test]
    fn director_dump_roundtrip_and_type_checks() {
        let g = Arc::new(build_domain(Shape::Disk { radius: 1.0 }, Resolution::Nodes(20)).unwrap());
        let n = boundary_director(&g, &BoundarySpec::Planar { degree: 0.5 }).unwrap();
        let mut buf = Vec::new();
        n.write_qfield(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("QFIELD v1 dim=2 nx=20 ny=20 h="));
        assert!(text.lines().next().unwrap().ends_with("dofs=2 unit=1"));
        let back = read_qfield(&buf[..]).unwrap();
        assert!(back.clone().into_field::<QTensor2>().is_err());
        assert_eq!(back.into_directors().unwrap(), n);
        let f = Field2::from_fn(g, |_| QTensor2::new(0.5, -0.25)).unwrap();
        let mut buf = Vec::new();
        f.write_qfield(&mut buf).unwrap();
        assert!(read_qfield(&buf[..]).unwrap().into_directors().is_err());
    }

    #[test]
    fn malformed_dumps_rejected() {
        assert!(read_qfield(&b"QFIELD v2 dim=2"[..]).is_err());
        assert!(read_qfield(&b"QFIELD v1 dim=2 nx=2 ny=2 h=1 dofs=2\n0 0 0 1 2\n"[..]).is_err());
    }

    fn csv_column(text: &str, name: &str) -> Vec<(Vec<usize>, f64)> {
        let mut lines = text.lines().skip(1);
        let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
        let at = cols.iter().position(|c| *c == name).unwrap();
        let nc = cols.iter().position(|c| *c == "mask").unwrap();
        lines
            .map(|l| {
                let t: Vec<&str> = l.split(',').collect();
                (t[..nc].iter().map(|v| v.parse().unwrap()).collect(), t[at].parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let g = Arc::new(build_domain(Shape::Ball { radius: 1.0 }, Resolution::Nodes(16)).unwrap());
        let gg = g.clone();
        let f = Field3::from_fn(g, |i| {
            let x = gg.position(i);
            QTensor3::new([x[0] / 7.0, 1e-300 * x[1], 0.3 - x[2], x[0] * x[2], 1.0 / 3.0])
        })
        .unwrap();
        let mut q = Vec::new();
        f.write_qfield(&mut q).unwrap();
        let data = read_qfield(&q[..]).unwrap();
        let mut csv = Vec::new();
        data.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap() == "i,j,k,mask,c1,c2,c3,c4,c5,s,beta2");
        let back = read_any(&csv[..]).unwrap();
        assert_eq!(back, data);
        let mut q2 = Vec::new();
        back.write_qfield(&mut q2).unwrap();
        assert_eq!(q, q2);
        assert_eq!(read_any(&q[..]).unwrap(), data);
    }

    #[test]
    fn csv_planar_and_director_columns() {
        let g = Arc::new(build_domain(Shape::Disk { radius: 1.0 }, Resolution::Nodes(16)).unwrap());
        let f = Field2::from_fn(g.clone(), |_| QTensor2::new(0.3, -0.4)).unwrap();
        let mut csv = Vec::new();
        write_csv(&mut csv, f.grid(), 2, false, f.values()).unwrap();
        let text = String::from_utf8(csv).unwrap();
        for (_, s) in csv_column(&text, "s").iter().filter(|(_, s)| !s.is_nan()) {
            // |q| = 0.5, s = 2|q|
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert!(csv_column(&text, "beta2").iter().all(|(_, b)| b.is_nan()));
        let n = boundary_director(&g, &BoundarySpec::Planar { degree: 0.5 }).unwrap();
        let mut buf = Vec::new();
        n.write_qfield(&mut buf).unwrap();
        let d = read_qfield(&buf[..]).unwrap();
        let mut csv = Vec::new();
        d.write_csv(&mut csv).unwrap();
        assert!(csv_column(std::str::from_utf8(&csv).unwrap(), "s").iter().all(|(_, s)| s.is_nan()));
        assert_eq!(read_csv(&csv[..]).unwrap().into_directors().unwrap(), n);
    }

    #[test]
    fn csv_constant_field_has_equal_s() {
        let g = Arc::new(build_domain(Shape::Ball { radius: 1.0 }, Resolution::Nodes(16)).unwrap());
        let q = QTensor3::new([0.4, -0.1, 0.2, 0.05, 0.3]);
        let f = Field3::from_fn(g, |_| q).unwrap();
        let mut csv = Vec::new();
        write_csv(&mut csv, f.grid(), 5, false, f.values()).unwrap();
        let s: Vec<f64> = csv_column(std::str::from_utf8(&csv).unwrap(), "s")
            .into_iter()
            .map(|(_, s)| s)
            .filter(|s| !s.is_nan())
            .collect();
        assert!(!s.is_empty());
        assert!(s.iter().all(|v| v.to_bits() == s[0].to_bits()));
    }

    #[test]
    fn csv_hedgehog_s_minimal_at_origin() {
        let g = Arc::new(build_domain(Shape::Ball { radius: 1.0 }, Resolution::Nodes(17)).unwrap());
        let gg = g.clone();
        let f = Field3::from_fn(g.clone(), |i| {
            let x = gg.position(i);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let n = if r > 0.0 { [x[0] / r, x[1] / r, x[2] / r] } else { [0.0, 0.0, 1.0] };
            crate::tensor::make_uniaxial(1.5 * r.min(1.0), &n).unwrap()
        })
        .unwrap();
        let mut csv = Vec::new();
        write_csv(&mut csv, f.grid(), 5, false, f.values()).unwrap();
        let col = csv_column(std::str::from_utf8(&csv).unwrap(), "s");
        let (at, _) = col
            .iter()
            .filter(|(_, s)| !s.is_nan())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let origin = g.nearest_node(&[0.0; 3]);
        assert_eq!(g.index([at[0], at[1], at[2]]), origin);
    }

    #[test]
    fn malformed_csv_rejected() {
        assert!(read_csv(&b"QFIELD v1 dim=2 nx=1 ny=1 h=1 dofs=2\n"[..]).is_err());
        assert!(read_csv(&b"# QFIELD v1 dim=2 nx=1 ny=1 h=1 dofs=2\ni,j,c1,c2\n"[..]).is_err());
        assert!(read_csv(&b"# QFIELD v1 dim=2 nx=1 ny=1 h=1 dofs=2\ni,j,mask,c1,c2,s,beta2\n0,0,0,1\n"[..]).is_err());
    }
}
