//! Study configuration, the convergence, decay, truncation and oracle
//! studies, and their CSV output.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::coefficient::{CoefficientField, CoefficientSpec};
use crate::corrector::CorrectorEngine;
use crate::error::{Error, Result};
use crate::fit::{convergence_order, linear_fit};
use crate::interpolation::BoundaryMode;
use crate::mesh::{build_cylinder_mesh, CylinderMesh, MeshHierarchy, Point};
use crate::solver::{solve_spectral_reference, trace_distance, trace_l2_error, FineProblem, MultiscaleSetup};
use crate::special::{extension_constant, FractionalOrder};

pub const CSV_HEADER: &str = "study,s,d,H,h,k,T,boundary_mode,coeff,value,eoc";

/// Cylinder height of the oracle check when `T = auto`.
pub const ORACLE_HEIGHT: f64 = 3.0;

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Domain(msg) => Error::Config(msg),
        other => other,
    }
}

/// Mesh size given as a decimal, `2^-k` or `1/n`.
fn parse_size(text: &str) -> Result<f64> {
    let t = text.trim();
    let value = if let Some((b, e)) = t.split_once('^') {
        let b: f64 = b.trim().parse().map_err(|_| Error::Config(format!("invalid mesh size `{t}`")))?;
        let e: i32 = e.trim().parse().map_err(|_| Error::Config(format!("invalid mesh size `{t}`")))?;
        b.powi(e)
    } else if let Some((n, m)) = t.split_once('/') {
        let n: f64 = n.trim().parse().map_err(|_| Error::Config(format!("invalid mesh size `{t}`")))?;
        let m: f64 = m.trim().parse().map_err(|_| Error::Config(format!("invalid mesh size `{t}`")))?;
        n / m
    } else {
        t.parse().map_err(|_| Error::Config(format!("invalid mesh size `{t}`")))?
    };
    if !(value > 0.0 && value <= 1.0) {
        return config_err(format!("mesh size `{t}` must lie in (0, 1]"));
    }
    Ok(value)
}

fn parse_number<T: FromStr>(key: &str, text: &str) -> Result<T> {
    text.trim().parse().map_err(|_| Error::Config(format!("invalid value `{text}` for `{key}`")))
}

fn parse_list<T>(text: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = text.split(',').filter(|t| !t.trim().is_empty()).map(item).collect::<Result<_>>()?;
    if items.is_empty() {
        return config_err(format!("empty list `{text}`"));
    }
    Ok(items)
}

/// Cells per axis for mesh size `h`.
pub fn cells_for(h: f64) -> Result<usize> {
    let n = (1.0 / h).round();
    if n < 1.0 || ((n * h) - 1.0).abs() > 1e-9 {
        return config_err(format!("mesh size {h} is not the reciprocal of an integer"));
    }
    Ok(n as usize)
}

/// Cells in the extension direction for height `t` and `n` cells per unit length.
pub fn height_cells(t: f64, n: usize) -> Result<usize> {
    let m = (t * n as f64).round();
    if m < 1.0 || (m - t * n as f64).abs() > 1e-9 {
        return config_err(format!("height {t} is not a multiple of the mesh size 1/{n}"));
    }
    Ok(m as usize)
}

/// Patch layers of the correctors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layers {
    Full,
    Fixed(usize),
}

impl Layers {
    pub fn as_option(self) -> Option<usize> {
        match self {
            Self::Full => None,
            Self::Fixed(k) => Some(k),
        }
    }
}

impl FromStr for Layers {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(Self::Full),
            t => Ok(Self::Fixed(parse_number("k", t)?)),
        }
    }
}

impl fmt::Display for Layers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Full => write!(f, "full"),
            Self::Fixed(k) => write!(f, "{k}"),
        }
    }
}

/// Cylinder height: explicit, or chosen per study (`auto`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Height {
    Auto,
    Fixed(f64),
}

impl Height {
    /// `T = 1` for `s < 1/2` and `T = 1.5` otherwise.
    pub fn for_order(self, s: f64) -> f64 {
        match self {
            Self::Fixed(t) => t,
            Self::Auto if s < 0.5 => 1.0,
            Self::Auto => 1.5,
        }
    }
}

impl FromStr for Height {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(Self::Auto),
            t => {
                let v: f64 = parse_number("T", t)?;
                if !(v > 0.0 && v.is_finite()) {
                    return config_err(format!("height must be positive, got {t}"));
                }
                Ok(Self::Fixed(v))
            }
        }
    }
}

impl fmt::Display for Height {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => write!(f, "auto"),
            Self::Fixed(t) => write!(f, "{t}"),
        }
    }
}

/// Right-hand side on `Omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceSpec {
    /// `(d pi^2)^s prod sin(pi x_i)`, whose fractional solution is `prod sin(pi x_i)`.
    Sine,
    Constant(f64),
}

impl SourceSpec {
    pub fn build(self, d: usize, s: f64) -> impl Fn(&Point) -> f64 + Sync {
        let pi = std::f64::consts::PI;
        let scale = (d as f64 * pi * pi).powf(s);
        move |p: &Point| match self {
            Self::Sine => scale * (0..d).map(|i| (pi * p[i]).sin()).product::<f64>(),
            Self::Constant(c) => c,
        }
    }

    /// Exact fractional solution for constant unit coefficient, if known.
    pub fn exact_trace(self, d: usize) -> Option<impl Fn(&[f64]) -> f64> {
        let pi = std::f64::consts::PI;
        match self {
            Self::Sine => Some(move |x: &[f64]| (0..d).map(|i| (pi * x[i]).sin()).product::<f64>()),
            Self::Constant(_) => None,
        }
    }
}

impl FromStr for SourceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sine" => Ok(Self::Sine),
            "zero" => Ok(Self::Constant(0.0)),
            t => match t.split_once(':') {
                Some(("const", v)) => Ok(Self::Constant(parse_number("f", v)?)),
                _ => config_err(format!("invalid source `{t}`")),
            },
        }
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sine => write!(f, "sine"),
            Self::Constant(c) => write!(f, "const:{c}"),
        }
    }
}

/// Parameters shared by all studies.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub d: usize,
    pub s_list: Vec<f64>,
    /// Coarse mesh sizes.
    pub coarse_sizes: Vec<f64>,
    /// Fine mesh size.
    pub h: f64,
    pub k: Layers,
    pub height: Height,
    pub coeff: CoefficientSpec,
    pub boundary_mode: BoundaryMode,
    pub source: SourceSpec,
    pub out: Option<PathBuf>,
    /// Overrides the seed of a generated coefficient.
    pub seed: Option<u64>,
    /// Largest layer count of the decay study.
    pub k_max: usize,
    /// Heights of the truncation study.
    pub heights: Vec<f64>,
    /// Reference height of the truncation study.
    pub reference_height: f64,
    /// Fine mesh sizes of the oracle check.
    pub oracle_sizes: Vec<f64>,
    /// Spectral modes per axis (default 64 in 1d, 32 in 2d).
    pub n_modes: Option<usize>,
    /// Also report the plain coarse Galerkin error.
    pub baseline: bool,
    /// Nodal dump of the `solve` study.
    pub dump: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            d: 1,
            s_list: vec![0.5],
            coarse_sizes: vec![0.5, 0.25, 0.125, 0.0625],
            h: 1.0 / 64.0,
            k: Layers::Fixed(2),
            height: Height::Auto,
            coeff: CoefficientSpec::Constant(1.0),
            boundary_mode: BoundaryMode::Local,
            source: SourceSpec::Sine,
            out: None,
            seed: None,
            k_max: 5,
            heights: vec![0.5, 1.0, 1.5, 2.0],
            reference_height: 3.0,
            oracle_sizes: vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            n_modes: None,
            baseline: false,
            dump: None,
        }
    }
}

impl StudyConfig {
    /// Reads `key = value` lines; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Load { path: path.into(), line: i + 1, msg: format!("expected `key = value`, got `{line}`") });
            };
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Load { path: path.into(), line: i + 1, msg: e.to_string() })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_number(key, value)?,
            "s" => self.s_list = parse_list(value, |t| parse_number(key, t))?,
            "H" => self.coarse_sizes = parse_list(value, parse_size)?,
            "h" => self.h = parse_size(value)?,
            "k" => self.k = value.parse()?,
            "T" => self.height = value.parse()?,
            "coeff" => self.coeff = value.parse().map_err(as_config)?,
            "boundary_mode" => self.boundary_mode = value.parse().map_err(as_config)?,
            "f" => self.source = value.parse()?,
            "out" => self.out = Some(value.into()),
            "seed" => self.seed = Some(parse_number(key, value)?),
            "k_max" => self.k_max = parse_number(key, value)?,
            "T_list" => self.heights = parse_list(value, |t| parse_number(key, t))?,
            "T_ref" => self.reference_height = parse_number(key, value)?,
            "oracle_h" => self.oracle_sizes = parse_list(value, parse_size)?,
            "n_modes" => self.n_modes = Some(parse_number(key, value)?),
            "baseline" => self.baseline = parse_number(key, value)?,
            "dump" => self.dump = Some(value.into()),
            _ => return config_err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Checks ranges and mesh nesting for the given study.
    pub fn validate(&self, study: Study) -> Result<()> {
        if !(self.d == 1 || self.d == 2) {
            return config_err(format!("d must be 1 or 2, got {}", self.d));
        }
        for &s in &self.s_list {
            if !(s > 0.0 && s < 1.0) {
                return config_err(format!("s must lie in (0, 1), got {s}"));
            }
        }
        let n_f = cells_for(self.h)?;
        let uses_coarse = matches!(study, Study::Converge | Study::Decay | Study::Solve);
        if uses_coarse {
            for &big in &self.coarse_sizes {
                let n_c = cells_for(big)?;
                if n_f % n_c != 0 {
                    return config_err(format!("fine mesh size {} does not refine coarse mesh size {big}", self.h));
                }
                for &s in &self.s_list {
                    height_cells(self.height.for_order(s), n_c)?;
                }
            }
        }
        match study {
            Study::Decay if self.k_max < 1 => return config_err("k_max must be at least 1"),
            Study::Truncate => {
                if self.heights.windows(2).any(|w| w[0] >= w[1]) {
                    return config_err("T_list must be increasing");
                }
                if self.heights.iter().any(|&t| t >= self.reference_height) {
                    return config_err("T_ref must exceed every height in T_list");
                }
                for &t in self.heights.iter().chain([&self.reference_height]) {
                    if t <= 0.0 {
                        return config_err(format!("height must be positive, got {t}"));
                    }
                    height_cells(t, n_f)?;
                }
            }
            Study::Oracle => {
                if !matches!(self.coeff, CoefficientSpec::Constant(_)) {
                    return config_err("the spectral oracle needs a constant coefficient");
                }
                if self.n_modes == Some(0) {
                    return config_err("n_modes must be at least 1");
                }
                for &h in &self.oracle_sizes {
                    height_cells(self.oracle_height(), cells_for(h)?)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn coefficient_spec(&self) -> CoefficientSpec {
        match (&self.coeff, self.seed) {
            (CoefficientSpec::LogRandom { contrast, .. }, Some(seed)) => CoefficientSpec::LogRandom { contrast: *contrast, seed },
            (c, _) => c.clone(),
        }
    }

    /// Coefficient resolved on the fine grid.
    pub fn field(&self) -> Result<CoefficientField> {
        self.coefficient_spec().build(self.d, cells_for(self.h)?)
    }

    fn oracle_height(&self) -> f64 {
        match self.height {
            Height::Fixed(t) => t,
            Height::Auto => ORACLE_HEIGHT,
        }
    }

    fn row(&self, study: &str, s: f64) -> CsvRow {
        CsvRow {
            study: study.into(),
            s,
            d: self.d,
            coarse: None,
            fine: None,
            k: None,
            height: None,
            boundary_mode: self.boundary_mode,
            coeff: self.coefficient_spec().to_string(),
            value: 0.0,
            eoc: None,
        }
    }
}

/// Subcommands of the driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Converge,
    Decay,
    Truncate,
    Oracle,
    Solve,
}

/// One line of the CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub study: String,
    pub s: f64,
    pub d: usize,
    pub coarse: Option<f64>,
    pub fine: Option<f64>,
    pub k: Option<String>,
    pub height: Option<f64>,
    pub boundary_mode: BoundaryMode,
    pub coeff: String,
    pub value: f64,
    pub eoc: Option<f64>,
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, |x| x.to_string())
}

impl fmt::Display for CsvRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.study,
            self.s,
            self.d,
            opt(&self.coarse),
            opt(&self.fine),
            opt(&self.k),
            opt(&self.height),
            self.boundary_mode,
            self.coeff,
            self.value,
            opt(&self.eoc)
        )
    }
}

pub fn write_csv<W: Write>(rows: &[CsvRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

/// Writes the rows to `config.out`, or to standard output.
pub fn emit(config: &StudyConfig, rows: &[CsvRow]) -> Result<()> {
    match &config.out {
        Some(p) => write_csv(rows, std::io::BufWriter::new(std::fs::File::create(p)?))?,
        None => write_csv(rows, std::io::stdout().lock())?,
    }
    Ok(())
}

/// `log(e_prev / e) / log(H_prev / H)`.
pub fn eoc(prev: (f64, f64), cur: (f64, f64)) -> f64 {
    (prev.1 / cur.1).ln() / (prev.0 / cur.0).ln()
}

fn fine_mesh(d: usize, n: usize, t: f64) -> Result<CylinderMesh> {
    build_cylinder_mesh(d, n, t, height_cells(t, n)?)
}

fn hierarchy(config: &StudyConfig, fine: &CylinderMesh, coarse_size: f64) -> Result<MeshHierarchy> {
    let n_c = cells_for(coarse_size)?;
    let coarse = build_cylinder_mesh(config.d, n_c, fine.height(), height_cells(fine.height(), n_c)?)?;
    MeshHierarchy::from_meshes(coarse, fine.clone())
}

struct Cell {
    errors: Vec<f64>,
    baseline: Vec<f64>,
}

/// Energy errors of the multiscale solution against the fine solution, one
/// row per `(s, H)`, followed by a least-squares rate per `s`.
pub fn run_convergence(config: &StudyConfig) -> Result<Vec<CsvRow>> {
    config.validate(Study::Converge)?;
    let field = config.field()?;
    let n_f = cells_for(config.h)?;
    let cells: Vec<Cell> = config
        .s_list
        .par_iter()
        .map(|&s| -> Result<Cell> {
            let order = FractionalOrder::new(s)?;
            let fine = fine_mesh(config.d, n_f, config.height.for_order(s))?;
            let f = config.source.build(config.d, s);
            let problem = FineProblem::new(&fine, &field, &order, &f)?;
            let reference = problem.solve()?;
            let results: Vec<(f64, f64)> = config
                .coarse_sizes
                .par_iter()
                .map(|&big| -> Result<(f64, f64)> {
                    let hier = hierarchy(config, &fine, big)?;
                    let setup = MultiscaleSetup::new(&hier, &field, &order, &problem, config.boundary_mode)?;
                    let ms = setup.solve(config.k.as_option())?;
                    let err = problem.norm.distance(&reference.values, &ms.fine)?;
                    let base = if config.baseline {
                        let cg = setup.solve_coarse_galerkin()?;
                        problem.norm.distance(&reference.values, &cg.fine)?
                    } else {
                        f64::NAN
                    };
                    Ok((err, base))
                })
                .collect::<Result<_>>()?;
            let (errors, baseline) = results.into_iter().unzip();
            Ok(Cell { errors, baseline })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (&s, cell) in config.s_list.iter().zip(&cells) {
        let t = config.height.for_order(s);
        let mut series = vec![("converge", &cell.errors, Some(config.k.to_string()))];
        if config.baseline {
            series.push(("converge_galerkin", &cell.baseline, None));
        }
        for (name, errors, k) in series {
            for (i, (&big, &e)) in config.coarse_sizes.iter().zip(errors).enumerate() {
                let mut row = config.row(name, s);
                row.coarse = Some(big);
                row.fine = Some(config.h);
                row.k = k.clone();
                row.height = Some(t);
                row.value = e;
                row.eoc = (i > 0).then(|| eoc((config.coarse_sizes[i - 1], errors[i - 1]), (big, e)));
                rows.push(row);
            }
            if config.coarse_sizes.len() > 1 {
                let mut row = config.row(&format!("{name}_fit"), s);
                row.fine = Some(config.h);
                row.k = k;
                row.height = Some(t);
                row.value = convergence_order(&config.coarse_sizes, errors).unwrap_or(f64::NAN);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Coarse trace node closest to the center of `Omega`.
pub fn center_trace_node(mesh: &CylinderMesh) -> Option<usize> {
    let class = mesh.classify_nodes();
    let dist = |v: usize| {
        let p = mesh.vertex(v);
        (0..mesh.dim()).map(|i| (p[i] - 0.5).powi(2)).sum::<f64>()
    };
    class.trace_nodes.iter().copied().min_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)))
}

/// Localization errors `e_k` of the corrector of the central trace node for
/// `k = 1..=k_max`, with the fitted decay factor, per `(s, H)`.
pub fn run_decay(config: &StudyConfig) -> Result<Vec<CsvRow>> {
    config.validate(Study::Decay)?;
    let field = config.field()?;
    let n_f = cells_for(config.h)?;
    let cells: Vec<(f64, f64)> = config.s_list.iter().flat_map(|&s| config.coarse_sizes.iter().map(move |&big| (s, big))).collect();
    let records = cells
        .par_iter()
        .map(|&(s, big)| {
            let order = FractionalOrder::new(s)?;
            let fine = fine_mesh(config.d, n_f, config.height.for_order(s))?;
            let hier = hierarchy(config, &fine, big)?;
            let problem = FineProblem::new(&fine, &field, &order, &|_| 0.0)?;
            let setup = MultiscaleSetup::new(&hier, &field, &order, &problem, config.boundary_mode)?;
            let engine: CorrectorEngine<'_> = setup.engine()?;
            let v = center_trace_node(&hier.coarse).ok_or_else(|| Error::Config("coarse mesh has no trace node".into()))?;
            engine.measure_decay(v, config.k_max, &problem.norm)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (&(s, big), rec) in cells.iter().zip(&records) {
        let t = config.height.for_order(s);
        let base = |name: &str| {
            let mut row = config.row(name, s);
            row.coarse = Some(big);
            row.fine = Some(config.h);
            row.height = Some(t);
            row
        };
        for (&k, &e) in rec.layers.iter().zip(&rec.energies) {
            let mut row = base("decay");
            row.k = Some(k.to_string());
            row.value = e;
            rows.push(row);
        }
        for (name, value) in [("decay_theta", rec.theta), ("decay_r2", rec.r_squared)] {
            let mut row = base(name);
            row.value = value;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Truncation errors per height for one `s`.
#[derive(Debug, Clone)]
pub struct TruncationResult {
    pub s: f64,
    pub heights: Vec<f64>,
    /// Relative trace distance to the reference height solution.
    pub errors: Vec<f64>,
    pub slope: f64,
    pub r_squared: f64,
}

/// Fine solutions at increasing heights compared on `Omega` with the
/// solution at the reference height.
pub fn truncation_results(config: &StudyConfig) -> Result<Vec<TruncationResult>> {
    config.validate(Study::Truncate)?;
    let field = config.field()?;
    let n_f = cells_for(config.h)?;
    config
        .s_list
        .par_iter()
        .map(|&s| {
            let order = FractionalOrder::new(s)?;
            let f = config.source.build(config.d, s);
            let solve = |t: f64| -> Result<(CylinderMesh, Vec<f64>)> {
                let mesh = fine_mesh(config.d, n_f, t)?;
                let u = FineProblem::new(&mesh, &field, &order, &f)?.solve()?.values;
                Ok((mesh, u))
            };
            let (ref_mesh, reference) = solve(config.reference_height)?;
            let scale = trace_distance(&ref_mesh, &reference, &vec![0.0; reference.len()])?;
            let errors = config
                .heights
                .par_iter()
                .map(|&t| {
                    let (mesh, u) = solve(t)?;
                    let e = trace_distance(&mesh, &u, &reference)?;
                    Ok(if scale > 0.0 { e / scale } else { e })
                })
                .collect::<Result<Vec<f64>>>()?;
            let logs: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
            let (slope, r_squared) = if logs.iter().all(|l| l.is_finite()) {
                linear_fit(&config.heights, &logs).map_or((f64::NAN, f64::NAN), |f| (f.slope, f.r_squared))
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok(TruncationResult { s, heights: config.heights.clone(), errors, slope, r_squared })
        })
        .collect()
}

pub fn run_truncation(config: &StudyConfig) -> Result<Vec<CsvRow>> {
    let results = truncation_results(config)?;
    let mut rows = Vec::new();
    for r in &results {
        let base = |name: &str| {
            let mut row = config.row(name, r.s);
            row.fine = Some(config.h);
            row
        };
        for (&t, &e) in r.heights.iter().zip(&r.errors) {
            let mut row = base("truncate");
            row.height = Some(t);
            row.value = e;
            rows.push(row);
        }
        let mut row = base("truncate");
        row.height = Some(config.reference_height);
        rows.push(row);
        for (name, value) in [("truncate_slope", r.slope), ("truncate_r2", r.r_squared)] {
            let mut row = base(name);
            row.value = value;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Spectral-versus-extension comparison for one `s`.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub s: f64,
    pub c_s: f64,
    pub sizes: Vec<f64>,
    /// Relative `L2(Omega)` trace discrepancy (absolute when the exact trace vanishes).
    pub discrepancies: Vec<f64>,
    pub monotone: bool,
}

pub fn oracle_results(config: &StudyConfig) -> Result<Vec<OracleResult>> {
    config.validate(Study::Oracle)?;
    let CoefficientSpec::Constant(c) = config.coeff else {
        return config_err("the spectral oracle needs a constant coefficient");
    };
    let t = config.oracle_height();
    let n_modes = config.n_modes.unwrap_or(if config.d == 1 { 64 } else { 32 });
    let field = config.field()?;
    config
        .s_list
        .par_iter()
        .map(|&s| {
            let order = FractionalOrder::new(s)?;
            let f = config.source.build(config.d, s);
            let mut spectral = solve_spectral_reference(&order, config.d, &f, n_modes)?;
            for m in &mut spectral.modes {
                m.eigenvalue *= c;
            }
            let discrepancies = config
                .oracle_sizes
                .par_iter()
                .map(|&h| {
                    let mesh = fine_mesh(config.d, cells_for(h)?, t)?;
                    let u = FineProblem::new(&mesh, &field, &order, &f)?.solve()?;
                    let (e, norm) = trace_l2_error(&mesh, &u.values, |x| spectral.trace(x))?;
                    Ok(if norm > 0.0 { e / norm } else { e })
                })
                .collect::<Result<Vec<f64>>>()?;
            let monotone = discrepancies.windows(2).all(|w| w[1] < w[0]) || discrepancies.iter().all(|&e| e == 0.0);
            Ok(OracleResult { s, c_s: extension_constant(s)?.c_s, sizes: config.oracle_sizes.clone(), discrepancies, monotone })
        })
        .collect()
}

pub fn run_oracle(config: &StudyConfig) -> Result<(Vec<CsvRow>, Vec<OracleResult>)> {
    let results = oracle_results(config)?;
    let t = config.oracle_height();
    let mut rows = Vec::new();
    for r in &results {
        for (&h, &e) in r.sizes.iter().zip(&r.discrepancies) {
            let mut row = config.row("oracle", r.s);
            row.fine = Some(h);
            row.height = Some(t);
            row.value = e;
            rows.push(row);
        }
        let mut row = config.row("oracle_cs", r.s);
        row.value = r.c_s;
        rows.push(row);
    }
    Ok((rows, results))
}

/// Human-readable summary of an oracle run.
pub fn oracle_report(results: &[OracleResult]) -> String {
    let mut out = String::new();
    for r in results {
        let list: Vec<String> = r.sizes.iter().zip(&r.discrepancies).map(|(h, e)| format!("h={h}: {e:.6e}")).collect();
        out.push_str(&format!(
            "s={} c_s={:.15e} {} [{}]\n",
            r.s,
            r.c_s,
            if r.monotone { "PASS" } else { "FAIL" },
            list.join(", ")
        ));
    }
    out
}

/// Single multiscale solve at the first `s` and `H`: energy error against
/// the fine solution and, for the sine source, the trace error of both.
pub fn run_solve(config: &StudyConfig) -> Result<Vec<CsvRow>> {
    config.validate(Study::Solve)?;
    let s = config.s_list[0];
    let big = config.coarse_sizes[0];
    let field = config.field()?;
    let order = FractionalOrder::new(s)?;
    let t = config.height.for_order(s);
    let fine = fine_mesh(config.d, cells_for(config.h)?, t)?;
    let f = config.source.build(config.d, s);
    let problem = FineProblem::new(&fine, &field, &order, &f)?;
    let reference = problem.solve()?;
    let hier = hierarchy(config, &fine, big)?;
    let setup = MultiscaleSetup::new(&hier, &field, &order, &problem, config.boundary_mode)?;
    let ms = setup.solve(config.k.as_option())?;
    let mut values = vec![("solve_energy", problem.norm.distance(&reference.values, &ms.fine)?)];
    if let (Some(exact), true) = (config.source.exact_trace(config.d), field.is_constant() && field.alpha() == 1.0) {
        values.push(("solve_trace_l2_ms", trace_l2_error(&fine, &ms.fine, &exact)?.0));
        values.push(("solve_trace_l2_fine", trace_l2_error(&fine, &reference.values, &exact)?.0));
    }
    if let Some(path) = &config.dump {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let coords = if config.d == 1 { "x1 y" } else { "x1 x2 y" };
        writeln!(w, "# {coords} u_ms u_h")?;
        for v in 0..fine.num_vertices() {
            let p = fine.vertex(v);
            let xs: Vec<String> = p[..config.d + 1].iter().map(|x| x.to_string()).collect();
            writeln!(w, "{} {} {}", xs.join(" "), ms.fine[v], reference.values[v])?;
        }
        w.flush()?;
    }
    Ok(values
        .into_iter()
        .map(|(name, value)| {
            let mut row = config.row(name, s);
            row.coarse = Some(big);
            row.fine = Some(config.h);
            row.k = Some(config.k.to_string());
            row.height = Some(t);
            row.value = value;
            row
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_keys() {
        assert_eq!(parse_size("2^-5").unwrap(), 1.0 / 32.0);
        assert_eq!(parse_size("1/8").unwrap(), 0.125);
        assert_eq!(parse_size("0.25").unwrap(), 0.25);
        assert!(parse_size("2").is_err());
        assert!(cells_for(0.3).is_err());
        let mut cfg = StudyConfig::default();
        cfg.set("H", "2^-1,2^-2").unwrap();
        cfg.set("k", "full").unwrap();
        cfg.set("T", "1.5").unwrap();
        cfg.set("coeff", "logrand:100:3").unwrap();
        cfg.set("seed", "9").unwrap();
        assert_eq!(cfg.coarse_sizes, vec![0.5, 0.25]);
        assert_eq!(cfg.k, Layers::Full);
        assert_eq!(cfg.height, Height::Fixed(1.5));
        assert_eq!(cfg.coefficient_spec(), CoefficientSpec::LogRandom { contrast: 100.0, seed: 9 });
        assert!(matches!(cfg.set("bogus", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("boundary_mode", "sideways"), Err(Error::Config(_))));
    }

    #[test]
    fn validation() {
        let mut cfg = StudyConfig::default();
        cfg.validate(Study::Converge).unwrap();
        cfg.h = 1.0 / 48.0;
        cfg.coarse_sizes = vec![1.0 / 32.0];
        assert!(matches!(cfg.validate(Study::Converge), Err(Error::Config(_))));
        let mut cfg = StudyConfig::default();
        cfg.s_list = vec![1.2];
        assert!(cfg.validate(Study::Converge).is_err());
        let mut cfg = StudyConfig::default();
        cfg.coeff = CoefficientSpec::LogRandom { contrast: 10.0, seed: 1 };
        assert!(matches!(cfg.validate(Study::Oracle), Err(Error::Config(_))));
        let mut cfg = StudyConfig::default();
        cfg.heights = vec![1.0, 0.5];
        assert!(cfg.validate(Study::Truncate).is_err());
    }

    #[test]
    fn config_file_with_comments() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# study\nd = 1\ns = 0.2, 0.8  # two orders\nH = 2^-1,2^-2\nh=2^-3\n\nboundary_mode = global").unwrap();
        let cfg = StudyConfig::from_file(file.path()).unwrap();
        assert_eq!(cfg.s_list, vec![0.2, 0.8]);
        assert_eq!(cfg.h, 0.125);
        assert_eq!(cfg.boundary_mode, BoundaryMode::Global);
        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "d = 1\nnonsense").unwrap();
        match StudyConfig::from_file(bad.path()) {
            Err(Error::Load { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn eoc_definition() {
        assert!((eoc((0.5, 4.0), (0.25, 1.0)) - 2.0).abs() < 1e-15);
        assert!((eoc((0.5, 1.0), (0.125, 0.125)) - 1.5).abs() < 1e-15);
    }

    fn small() -> StudyConfig {
        let mut cfg = StudyConfig::default();
        cfg.s_list = vec![0.3, 0.7];
        cfg.coarse_sizes = vec![0.5, 0.25];
        cfg.h = 0.0625;
        cfg
    }

    #[test]
    fn convergence_rows_are_deterministic() {
        let mut cfg = small();
        cfg.baseline = true;
        let rows = run_convergence(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * (2 * 2 + 2));
        let conv: Vec<&CsvRow> = rows.iter().filter(|r| r.study == "converge").collect();
        assert!(conv.iter().all(|r| r.value > 0.0));
        assert!(conv[0].eoc.is_none() && conv[1].eoc.is_some());
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&rows, &mut a).unwrap();
        write_csv(&run_convergence(&cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert!(text.lines().nth(1).unwrap().starts_with("converge,0.3,1,0.5,0.0625,2,1,local,constant:1,"));
    }

    #[test]
    fn decay_rows() {
        let mut cfg = small();
        cfg.s_list = vec![0.5];
        cfg.coarse_sizes = vec![0.25];
        cfg.k_max = 3;
        let rows = run_decay(&cfg).unwrap();
        let e: Vec<f64> = rows.iter().filter(|r| r.study == "decay").map(|r| r.value).collect();
        assert_eq!(e.len(), 3);
        assert!(e.windows(2).all(|w| w[1] <= w[0]));
        let theta = rows.iter().find(|r| r.study == "decay_theta").unwrap().value;
        assert!(theta > 0.0 && theta < 1.0);
        cfg.k_max = 12;
        let rows = run_decay(&cfg).unwrap();
        let last = rows.iter().filter(|r| r.study == "decay").last().unwrap();
        assert!(last.value < 1e-10);
    }

    #[test]
    fn oracle_zero_source() {
        let mut cfg = small();
        cfg.source = SourceSpec::Constant(0.0);
        cfg.oracle_sizes = vec![0.25, 0.125];
        cfg.n_modes = Some(4);
        let (rows, results) = run_oracle(&cfg).unwrap();
        assert!(results.iter().all(|r| r.discrepancies.iter().all(|&e| e == 0.0) && r.monotone));
        let cs = rows.iter().find(|r| r.study == "oracle_cs").unwrap();
        assert_eq!(cs.value, extension_constant(0.3).unwrap().c_s);
        assert!(oracle_report(&results).contains("PASS"));
    }

    #[test]
    fn truncation_reference_row_is_zero() {
        let mut cfg = small();
        cfg.s_list = vec![0.5];
        cfg.h = 0.125;
        let rows = run_truncation(&cfg).unwrap();
        let refrow = rows.iter().find(|r| r.study == "truncate" && r.height == Some(3.0)).unwrap();
        assert_eq!(refrow.value, 0.0);
        let slope = rows.iter().find(|r| r.study == "truncate_slope").unwrap().value;
        assert!(slope < 0.0);
    }

    #[test]
    fn solve_dump() {
        let mut cfg = small();
        let dir = tempfile::tempdir().unwrap();
        let dump = dir.path().join("u.txt");
        cfg.dump = Some(dump.clone());
        let rows = run_solve(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        let text = std::fs::read_to_string(dump).unwrap();
        assert_eq!(text.lines().count(), 1 + 17 * 17);
    }

    #[test]
    fn oracle_discrepancy_decreases_under_refinement() {
        let mut cfg = StudyConfig::default();
        cfg.s_list = vec![0.5];
        let (_, results) = run_oracle(&cfg).unwrap();
        assert!(results[0].monotone, "{:?}", results[0].discrepancies);
    }

    #[test]
    fn truncation_error_is_exponential_in_height() {
        let mut cfg = StudyConfig::default();
        cfg.s_list = vec![0.2, 0.5];
        let results = truncation_results(&cfg).unwrap();
        for r in &results {
            assert!(r.slope < 0.0 && r.r_squared >= 0.95, "{r:?}");
        }
        assert!(results[1].slope.abs() > results[0].slope.abs());
    }
}
