//! Experiment configuration: INI-style sections of `key = value` lines.
//!
//! ```text
//! [run]
//! run_id = disk_d1
//! output_dir = runs
//!
//! [domain]
//! shape = disk
//! radius = 1
//! nodes = 128
//!
//! [boundary]
//! type = planar
//! degree = 0.5
//!
//! [material]
//! a2 = 1
//! b2 = 1
//! c2 = 1
//!
//! [solver]
//! mode = full
//! method = ncg
//! L_schedule = 0.04, 0.02, 0.01
//! ```
//!
//! Relative paths are resolved against the directory of the config file, and
//! the emitted form always carries absolute paths, so `emit` followed by
//! `parse` reproduces the config exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use qtensor_core::continuation::validate_schedule;
use qtensor_core::tensor::{norm3, Vec3};
use qtensor_core::{MaterialParams, Method, MinimizeOptions, Mode, Resolution, Shape};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: Option<usize>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryConfig {
    Planar { degree: f64 },
    Radial,
    Uniform { director: Vec3 },
    /// Director dump (QFIELD or CSV) on the run grid.
    Tabulated { file: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub defects: bool,
    pub asymptotics: bool,
    pub limiting_map: bool,
    pub dump_fields: bool,
    /// Optional restriction of the asymptotics region to `r_in ≤ |x| ≤ r_out`.
    pub annulus: Option<(f64, f64)>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            defects: true,
            asymptotics: true,
            limiting_map: false,
            dump_fields: true,
            annulus: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub output_dir: PathBuf,
    pub shape: Shape,
    pub resolution: Resolution,
    pub boundary: BoundaryConfig,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    pub opts: MinimizeOptions,
    pub schedule: Vec<f64>,
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    /// Material constants at the first schedule entry.
    pub fn params(&self) -> MaterialParams {
        MaterialParams::new(self.a2, self.b2, self.c2, self.schedule[0])
            .expect("parameters were validated at parse time")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn emit(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        s.push_str("[run]\n");
        s.push_str(&format!("run_id = {}\n", self.run_id));
        s.push_str(&format!("output_dir = {}\n", self.output_dir.display()));
        s.push_str("\n[domain]\n");
        s.push_str(&format!("shape = {}\n", self.shape.tag()));
        match self.shape {
            Shape::Disk { radius } | Shape::Ball { radius } => s.push_str(&format!("radius = {radius}\n")),
            Shape::Square { side } | Shape::Cube { side } => s.push_str(&format!("side = {side}\n")),
            Shape::Imported { .. } => unreachable!("configs never hold imported shapes"),
        }
        match self.resolution {
            Resolution::Nodes(n) => s.push_str(&format!("nodes = {n}\n")),
            Resolution::Spacing(h) => s.push_str(&format!("spacing = {h}\n")),
        }
        s.push_str("\n[boundary]\n");
        match &self.boundary {
            BoundaryConfig::Planar { degree } => s.push_str(&format!("type = planar\ndegree = {degree}\n")),
            BoundaryConfig::Radial => s.push_str("type = radial\n"),
            BoundaryConfig::Uniform { director } => {
                s.push_str(&format!("type = uniform\ndirector = {}\n", list(director)))
            }
            BoundaryConfig::Tabulated { file } => {
                s.push_str(&format!("type = tabulated\nfile = {}\n", file.display()))
            }
        }
        s.push_str("\n[material]\n");
        s.push_str(&format!("a2 = {}\nb2 = {}\nc2 = {}\n", self.a2, self.b2, self.c2));
        s.push_str("\n[solver]\n");
        s.push_str(&format!("mode = {}\n", self.opts.mode.name()));
        s.push_str(&format!("method = {}\n", self.opts.method.name()));
        s.push_str(&format!("dt = {}\n", self.opts.dt));
        s.push_str(&format!("grad_tol = {}\n", self.opts.grad_tol));
        s.push_str(&format!("max_iters = {}\n", self.opts.max_iters));
        s.push_str(&format!("record_cadence = {}\n", self.opts.record_cadence));
        s.push_str(&format!("L_schedule = {}\n", list(&self.schedule)));
        let a = &self.analysis;
        s.push_str("\n[analysis]\n");
        s.push_str(&format!("defects = {}\n", a.defects));
        s.push_str(&format!("asymptotics = {}\n", a.asymptotics));
        s.push_str(&format!("limiting_map = {}\n", a.limiting_map));
        s.push_str(&format!("dump_fields = {}\n", a.dump_fields));
        if let Some((r0, r1)) = a.annulus {
            s.push_str(&format!("annulus = {r0}, {r1}\n"));
        }
        s
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { line: None, message: format!("cannot read {}: {e}", path.display()) })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        parse(&text, base)
    }
}

struct Entry {
    value: String,
    line: usize,
}

/// `section → key → entry`, plus the header line of each section.
struct Sections {
    map: BTreeMap<String, BTreeMap<String, Entry>>,
    header_line: BTreeMap<String, usize>,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("run", &["run_id", "output_dir"]),
    ("domain", &["shape", "radius", "side", "nodes", "spacing"]),
    ("boundary", &["type", "degree", "director", "file"]),
    ("material", &["a2", "b2", "c2"]),
    ("solver", &["mode", "method", "dt", "grad_tol", "max_iters", "record_cadence", "L_schedule"]),
    ("analysis", &["defects", "asymptotics", "limiting_map", "dump_fields", "annulus"]),
];

fn split_sections(text: &str) -> Result<Sections, ConfigError> {
    let mut map: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
    let mut header_line = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with(';') {
            continue;
        }
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim();
            if !KNOWN.iter().any(|(s, _)| *s == name) {
                return err(Some(line), format!("unknown section [{name}]"));
            }
            if header_line.insert(name.to_string(), line).is_some() {
                return err(Some(line), format!("section [{name}] appears twice"));
            }
            map.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let Some(sec) = &current else {
            return err(Some(line), "key outside of any section");
        };
        let Some((k, v)) = t.split_once('=') else {
            return err(Some(line), format!("expected 'key = value', found '{t}'"));
        };
        let (k, v) = (k.trim(), v.trim());
        let keys = KNOWN.iter().find(|(s, _)| s == sec).unwrap().1;
        if !keys.contains(&k) {
            return err(Some(line), format!("unknown key '{k}' in [{sec}]"));
        }
        if v.is_empty() {
            return err(Some(line), format!("empty value for '{k}'"));
        }
        let entry = Entry {
            value: v.to_string(),
            line,
        };
        if map.get_mut(sec).unwrap().insert(k.to_string(), entry).is_some() {
            return err(Some(line), format!("duplicate key '{k}' in [{sec}]"));
        }
    }
    Ok(Sections { map, header_line })
}

impl Sections {
    fn get(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.map.get(sec).and_then(|m| m.get(key))
    }

    fn require(&self, sec: &str, key: &str) -> Result<&Entry, ConfigError> {
        self.get(sec, key).ok_or_else(|| ConfigError {
            line: self.header_line.get(sec).copied(),
            message: format!("missing key '{key}' in [{sec}]"),
        })
    }
}

fn parse_f64(e: &Entry, key: &str) -> Result<f64, ConfigError> {
    match e.value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => err(Some(e.line), format!("'{key}' must be a finite number (got '{}')", e.value)),
    }
}

fn parse_usize(e: &Entry, key: &str) -> Result<usize, ConfigError> {
    e.value
        .parse::<usize>()
        .or_else(|_| err(Some(e.line), format!("'{key}' must be a non-negative integer (got '{}')", e.value)))
}

fn parse_bool(e: &Entry, key: &str) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        v => err(Some(e.line), format!("'{key}' must be true or false (got '{v}')")),
    }
}

fn parse_list(e: &Entry, key: &str) -> Result<Vec<f64>, ConfigError> {
    e.value
        .split(',')
        .map(|t| match t.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => err(Some(e.line), format!("'{key}' holds a non-numeric entry '{}'", t.trim())),
        })
        .collect()
}

fn positive(e: &Entry, key: &str) -> Result<f64, ConfigError> {
    let v = parse_f64(e, key)?;
    if v > 0.0 {
        Ok(v)
    } else {
        err(Some(e.line), format!("'{key}' must be positive (got {v})"))
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    let joined = if path.is_absolute() { path.to_path_buf() } else { base.join(path) };
    std::path::absolute(&joined).unwrap_or(joined)
}

/// Parses and validates a config. `base` anchors relative paths.
pub fn parse(text: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let secs = split_sections(text)?;

    let id = secs.require("run", "run_id")?;
    if !id.value.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || id.value.starts_with('.') {
        return err(Some(id.line), format!("run_id '{}' must be a plain file name", id.value));
    }
    let output_dir = resolve(base, &secs.require("run", "output_dir")?.value);

    let shape_e = secs.require("domain", "shape")?;
    let size_key = match shape_e.value.as_str() {
        "disk" | "ball" => "radius",
        "square" | "box" | "cube" => "side",
        v => return err(Some(shape_e.line), format!("unknown shape '{v}' (disk, ball, square, box)")),
    };
    let other = if size_key == "radius" { "side" } else { "radius" };
    if let Some(e) = secs.get("domain", other) {
        return err(Some(e.line), format!("'{other}' does not apply to shape '{}'", shape_e.value));
    }
    let size = positive(secs.require("domain", size_key)?, size_key)?;
    let shape = match shape_e.value.as_str() {
        "disk" => Shape::Disk { radius: size },
        "ball" => Shape::Ball { radius: size },
        "square" => Shape::Square { side: size },
        _ => Shape::Cube { side: size },
    };
    let resolution = match (secs.get("domain", "nodes"), secs.get("domain", "spacing")) {
        (Some(n), None) => Resolution::Nodes(parse_usize(n, "nodes")?),
        (None, Some(h)) => Resolution::Spacing(positive(h, "spacing")?),
        (Some(_), Some(h)) => return err(Some(h.line), "give either 'nodes' or 'spacing', not both"),
        (None, None) => {
            return err(secs.header_line.get("domain").copied(), "[domain] needs 'nodes' or 'spacing'")
        }
    };
    if let Err(e) = qtensor_core::build_domain(shape, resolution) {
        let at = secs.get("domain", "nodes").or(secs.get("domain", "spacing")).map(|e| e.line);
        return err(at, e.to_string());
    }
    let dim = shape.dim();

    let ty = secs.require("boundary", "type")?;
    let allowed: &[&str] = match ty.value.as_str() {
        "planar" => &["type", "degree"],
        "tabulated" => &["type", "file"],
        "uniform" => &["type", "director"],
        _ => &["type"],
    };
    if let Some((k, e)) = secs.map["boundary"].iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return err(Some(e.line), format!("'{k}' does not apply to boundary type '{}'", ty.value));
    }
    let boundary = match ty.value.as_str() {
        "planar" => {
            if dim != 2 {
                return err(Some(ty.line), "planar boundary data need a 2D shape");
            }
            let e = secs.require("boundary", "degree")?;
            let degree = parse_f64(e, "degree")?;
            if (2.0 * degree).fract() != 0.0 {
                return err(Some(e.line), format!("degree must be an integer or half-integer (got {degree})"));
            }
            BoundaryConfig::Planar { degree }
        }
        "radial" => {
            if dim != 3 {
                return err(Some(ty.line), "radial boundary data need a 3D shape");
            }
            BoundaryConfig::Radial
        }
        "uniform" => {
            let e = secs.require("boundary", "director")?;
            let v = parse_list(e, "director")?;
            if v.len() != 3 {
                return err(Some(e.line), format!("director needs 3 components (got {})", v.len()));
            }
            let n = [v[0], v[1], v[2]];
            if (norm3(&n) - 1.0).abs() > 1e-10 {
                return err(Some(e.line), format!("director must be a unit vector (|n| = {})", norm3(&n)));
            }
            if dim == 2 && n[2] != 0.0 {
                return err(Some(e.line), "planar directors must have a zero z component");
            }
            BoundaryConfig::Uniform { director: n }
        }
        "tabulated" => {
            let e = secs.require("boundary", "file")?;
            let file = resolve(base, &e.value);
            if !file.is_file() {
                return err(Some(e.line), format!("boundary file {} does not exist", file.display()));
            }
            BoundaryConfig::Tabulated { file }
        }
        v => return err(Some(ty.line), format!("unknown boundary type '{v}' (planar, radial, uniform, tabulated)")),
    };

    let a2e = secs.require("material", "a2")?;
    let b2e = secs.require("material", "b2")?;
    let c2e = secs.require("material", "c2")?;
    let a2 = positive(a2e, "a2")?;
    let b2 = parse_f64(b2e, "b2")?;
    if b2 < 0.0 {
        return err(Some(b2e.line), format!("'b2' must be non-negative (got {b2})"));
    }
    let c2 = positive(c2e, "c2")?;

    let sched = secs.require("solver", "L_schedule")?;
    let schedule = parse_list(sched, "L_schedule")?;
    if let Err(e) = validate_schedule(&schedule) {
        return err(Some(sched.line), e.to_string());
    }
    if let Err(e) = MaterialParams::new(a2, b2, c2, schedule[0]) {
        return err(Some(a2e.line), e.to_string());
    }

    let mut opts = MinimizeOptions::default();
    if let Some(e) = secs.get("solver", "mode") {
        opts.mode = Mode::parse(&e.value)
            .ok_or_else(|| ConfigError { line: Some(e.line), message: format!("unknown mode '{}' (full, uniaxial)", e.value) })?;
        if opts.mode == Mode::Uniaxial && dim != 3 {
            return err(Some(e.line), "uniaxial mode needs a 3D shape");
        }
    }
    if let Some(e) = secs.get("solver", "method") {
        opts.method = Method::parse(&e.value).ok_or_else(|| ConfigError {
            line: Some(e.line),
            message: format!("unknown method '{}' (gradient-flow, ncg)", e.value),
        })?;
    }
    if let Some(e) = secs.get("solver", "dt") {
        opts.dt = positive(e, "dt")?;
    }
    if let Some(e) = secs.get("solver", "grad_tol") {
        opts.grad_tol = positive(e, "grad_tol")?;
    }
    for (key, slot) in [("max_iters", &mut opts.max_iters), ("record_cadence", &mut opts.record_cadence)] {
        if let Some(e) = secs.get("solver", key) {
            *slot = parse_usize(e, key)?;
            if *slot == 0 {
                return err(Some(e.line), format!("'{key}' must be at least 1"));
            }
        }
    }
    if let Err(e) = opts.validate() {
        return err(secs.header_line.get("solver").copied(), e.to_string());
    }

    let mut analysis = AnalysisConfig::default();
    for (key, slot) in [
        ("defects", &mut analysis.defects),
        ("asymptotics", &mut analysis.asymptotics),
        ("limiting_map", &mut analysis.limiting_map),
        ("dump_fields", &mut analysis.dump_fields),
    ] {
        if let Some(e) = secs.get("analysis", key) {
            *slot = parse_bool(e, key)?;
        }
    }
    if let Some(e) = secs.get("analysis", "annulus") {
        let v = parse_list(e, "annulus")?;
        if v.len() != 2 || !(0.0 <= v[0] && v[0] < v[1]) {
            return err(Some(e.line), "annulus must be 'r_in, r_out' with 0 ≤ r_in < r_out");
        }
        analysis.annulus = Some((v[0], v[1]));
    }

    Ok(ExperimentConfig {
        run_id: id.value.clone(),
        output_dir,
        shape,
        resolution,
        boundary,
        a2,
        b2,
        c2,
        opts,
        schedule,
        analysis,
    })
}
