//! Command-line runs: presets, configuration merging and result files.
//!
//! A run resolves its configuration in three layers: the preset, then an
//! optional JSON file, then command-line flags. Every run writes
//! `summary.json` plus the CSV files of its subcommand into the output
//! directory.

use crate::energy::{
    gradient_check, limit_energy, prestressed_energy, total_energy, EdgeLoad, EnergyBreakdown,
    Functional, LoadSpec, Traction, Weights,
};
use crate::error::Error;
use crate::families::{
    buckled_mode, certify_divergence, compression_divergence_threshold, compression_energy,
    compression_energy_bound, compression_family, edge_supported_energy, edge_supported_family,
    edge_supported_load, shear_energy, shear_energy_bound, shear_family, shear_load, shear_support,
    wrinkle_energy_bound, wrinkle_energy_slope, wrinkle_family, BuckledKind, PressureOrder,
    RadialOscillation, SigmaRule, TangentialOscillation,
};
use crate::grid::{
    BcClass, BoundarySpec, Edge, Grid, GridKind, ScalarField, Sym2Field, VectorField2,
};
use crate::material::{coercivity_constants, eig_sym2, Material, Sym2};
use crate::relaxation::{
    annulus_prestress, classify_state, convexify_2d, flat_energy, min_ga, relaxed_energy,
    relaxed_min_energy, PrestressAnnulus, StateClass,
};
use crate::solve::{
    buckling_critical, compression_threshold, critical_thickness_compression,
    critical_thickness_shear, flat_with_noise, minimize, minimize_functional, poincare_constant,
    BucklingBc, SolveOptions, SolveReport, Unknowns,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Version tag written into every `summary.json`.
pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FVK_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "fvk-out";
/// Longest energy history kept in a summary.
const HISTORY_CAP: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] Error),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed configuration: {0}")]
    Config(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            CliError::Model(Error::NonFinite(_) | Error::NoConvergence { .. }) => 2,
            _ => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = std::result::Result<T, CliError>;

/// How a completed run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    /// The solver stopped without converging and without a divergence certificate.
    NotConverged,
    /// The energy was certified unbounded below.
    Diverging,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged => 2,
            Outcome::Diverging => 3,
        }
    }
}

// ---------------------------------------------------------------------------
// Arguments.

#[derive(Debug, Parser)]
#[command(
    name = "fvk",
    version,
    about = "Plate energies, minimizers, buckling modes and membrane relaxation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Scenario preset, e.g. thm11 or ce12.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// JSON file overriding preset fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to $FVK_OUT_DIR, then ./fvk-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Rectangle resolution `NXxNY`.
    #[arg(long, global = true, value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
    /// Annulus `R1,R2,NR,NTHETA`.
    #[arg(long, global = true, value_parser = parse_annulus)]
    pub annulus: Option<(f64, f64, usize, usize)>,
    /// Thickness.
    #[arg(long, global = true)]
    pub h: Option<f64>,
    /// Load scaling exponent.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Poisson ratio.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub nu: Option<f64>,
    /// Young modulus.
    #[arg(long = "E", global = true)]
    pub young: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Clamped,
    Supported,
    Free,
}

impl From<VariantArg> for BucklingBc {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Clamped => BucklingBc::Clamped,
            VariantArg::Supported => BucklingBc::Supported,
            VariantArg::Free => BucklingBc::Free,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Energy breakdown of the preset's state.
    Energy {
        /// Family index for family presets.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Assembled gradient against central differences on random states.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Minimizes the plate (or prestressed) energy from a perturbed start.
    Minimize {
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        grad_tol: Option<f64>,
        #[arg(long)]
        memory: Option<usize>,
        /// Amplitude of the initial noise.
        #[arg(long)]
        noise: Option<f64>,
        /// Start from this member of the preset's family instead of noise.
        #[arg(long)]
        init_family: Option<usize>,
    },
    /// One-dimensional buckling eigenvalues and the embedded critical mode.
    Buckle {
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Energies along an explicit family with a divergence certificate.
    Family {
        /// Indices as `A..B`, `A,B,C` or a single value.
        #[arg(long)]
        n: Option<String>,
        /// Load magnitude: traction, shear or compression parameter of the preset.
        #[arg(long, allow_negative_numbers = true)]
        f: Option<f64>,
        /// Thicknesses for oscillating profiles, comma separated.
        #[arg(long)]
        hs: Option<String>,
    },
    /// Closed-form minimum and sampled convex envelope of the relaxed density.
    Relax {
        /// Tensor `A11,A12,A22`.
        #[arg(long, allow_hyphen_values = true)]
        tensor: Option<String>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 201)]
        resolution: usize,
    },
    /// Radial prestress of an annulus under boundary pressures.
    Prestress {
        #[arg(long, allow_negative_numbers = true)]
        p1: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        p2: Option<f64>,
    },
    /// Poincaré constant of the grid and the compression threshold.
    Poincare,
    /// Scaled energies over thickness and load exponent.
    Sweep {
        #[arg(long)]
        hs: Option<String>,
        #[arg(long)]
        alphas: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Energy { .. } => "energy",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Minimize { .. } => "minimize",
            Command::Buckle { .. } => "buckle",
            Command::Family { .. } => "family",
            Command::Relax { .. } => "relax",
            Command::Prestress { .. } => "prestress",
            Command::Poincare => "poincare",
            Command::Sweep { .. } => "sweep",
        }
    }
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NXxNY, got {s}"))?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn parse_annulus(s: &str) -> std::result::Result<(f64, f64, usize, usize), String> {
    let p: Vec<&str> = s.split(',').map(str::trim).collect();
    if p.len() != 4 {
        return Err(format!("expected R1,R2,NR,NTHETA, got {s}"));
    }
    let f = |x: &str| x.parse::<f64>().map_err(|e| format!("{e}"));
    let u = |x: &str| x.parse::<usize>().map_err(|e| format!("{e}"));
    Ok((f(p[0])?, f(p[1])?, u(p[2])?, u(p[3])?))
}

fn parse_indices(s: &str) -> CliResult<Vec<usize>> {
    let bad = |_| usage(format!("malformed index list {s}"));
    let v: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (
            a.trim().parse().map_err(bad)?,
            b.trim().parse().map_err(bad)?,
        );
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(bad))
            .collect::<CliResult<_>>()?
    };
    if v.is_empty() {
        return Err(usage(format!("empty index list {s}")));
    }
    Ok(v)
}

fn parse_floats(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("malformed number list {s}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Configuration.

/// Named scenarios. Each sets geometry, material, load, constraints and the
/// family or eigenproblem it exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Free rectangle under uniform normal tension.
    Thm11,
    /// Supported unit square at 90% of the compression threshold.
    Thm13,
    /// Supported unit square under mild shear.
    Thm16,
    /// Clamped unit square under mild uniaxial compression.
    Thm18,
    /// Uniform compression with one supported edge; diverging family.
    Ce12,
    /// Shear band across a rectangle; diverging family.
    Ce14,
    /// Unit square supported on one edge; diverging, quadratic family.
    Remark13,
    /// Fine wrinkles of a wide compressed rectangle; diverging family.
    Ce33,
    /// Strip under uniaxial compression; buckling modes.
    Ex27,
    /// Rectangle under shear; band buckling modes.
    Ex28,
    /// Annulus compressed on both circles; radial oscillations.
    Ex45,
    /// Annulus in uniform tension; flat minimizer.
    Ex46,
    /// Annulus in hoop compression; tangential oscillations.
    Ex48,
}

impl Preset {
    pub const ALL: [Preset; 13] = [
        Preset::Thm11,
        Preset::Thm13,
        Preset::Thm16,
        Preset::Thm18,
        Preset::Ce12,
        Preset::Ce14,
        Preset::Remark13,
        Preset::Ce33,
        Preset::Ex27,
        Preset::Ex28,
        Preset::Ex45,
        Preset::Ex46,
        Preset::Ex48,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Thm11 => "thm11",
            Preset::Thm13 => "thm13",
            Preset::Thm16 => "thm16",
            Preset::Thm18 => "thm18",
            Preset::Ce12 => "ce12",
            Preset::Ce14 => "ce14",
            Preset::Remark13 => "remark13",
            Preset::Ce33 => "ce33",
            Preset::Ex27 => "ex27",
            Preset::Ex28 => "ex28",
            Preset::Ex45 => "ex45",
            Preset::Ex46 => "ex46",
            Preset::Ex48 => "ex48",
        }
    }

    /// Accepts the bare name or the name followed by `_suffix`.
    pub fn parse(s: &str) -> CliResult<Self> {
        let head = s.split('_').next().unwrap_or(s).to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|p| p.name() == head)
            .ok_or_else(|| usage(format!("unknown preset {s}")))
    }

    fn family(self) -> Option<FamilyKind> {
        Some(match self {
            Preset::Ce12 => FamilyKind::Compression,
            Preset::Ce14 => FamilyKind::Shear,
            Preset::Remark13 => FamilyKind::SupportedEdge,
            Preset::Ce33 => FamilyKind::Wrinkle,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FamilyKind {
    Compression,
    Shear,
    SupportedEdge,
    Wrinkle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Rectangle {
        x: (f64, f64),
        y: (f64, f64),
        nx: usize,
        ny: usize,
    },
    Annulus {
        r1: f64,
        r2: f64,
        nr: usize,
        ntheta: usize,
    },
}

impl Geometry {
    pub fn build(&self) -> crate::Result<Grid> {
        match *self {
            Geometry::Rectangle { x, y, nx, ny } => Grid::rectangle(x, y, nx, ny),
            Geometry::Annulus { r1, r2, nr, ntheta } => Grid::annulus(r1, r2, nr, ntheta),
        }
    }
}

/// In-plane load before the `h^alpha` scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadConfig {
    None,
    /// Normal traction `f n` on the whole boundary.
    Normal {
        f: f64,
    },
    /// Normal traction at this multiple of the Poincaré compression threshold.
    ThresholdFraction {
        fraction: f64,
    },
    /// Tangential `±γ` on the edges of a rectangle.
    Shear {
        gamma: f64,
    },
    /// Normal `-γ` on the bottom and top edges.
    Uniaxial {
        gamma: f64,
    },
    /// Normal `-λ² h²` on the whole boundary.
    SupportedEdge {
        lambda: f64,
    },
    /// Outward-normal pressures on the inner and outer circle.
    Pressures {
        p1: f64,
        p2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Support {
    Free,
    Whole {
        class: BcClass,
    },
    LeftEdge {
        class: BcClass,
    },
    /// Boundary points outside the band `|x1 - x2| < 1`.
    ShearBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub indices: Vec<usize>,
    /// Thicknesses for oscillating profiles.
    pub h_values: Vec<f64>,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            indices: (1..=8).collect(),
            h_values: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucklingConfig {
    pub variant: BucklingBc,
    pub interval: (f64, f64),
    pub nodes: usize,
    pub modes: usize,
    pub gamma: f64,
}

impl Default for BucklingConfig {
    fn default() -> Self {
        Self {
            variant: BucklingBc::Clamped,
            interval: (0.0, 1.0),
            nodes: 400,
            modes: 3,
            gamma: 0.01,
        }
    }
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub geometry: Geometry,
    pub young: f64,
    pub poisson: f64,
    pub thickness: f64,
    pub alpha: f64,
    pub load: LoadConfig,
    pub support: Support,
    /// Amplitude of the seeded initial noise.
    pub noise: f64,
    pub seed: u64,
    pub solver: SolveOptions,
    pub family: FamilyConfig,
    pub buckling: BucklingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            geometry: Geometry::Rectangle {
                x: (0.0, 1.0),
                y: (0.0, 1.0),
                nx: 16,
                ny: 16,
            },
            young: 1.0,
            poisson: 0.3,
            thickness: 0.1,
            alpha: 0.0,
            load: LoadConfig::None,
            support: Support::Free,
            noise: 1e-3,
            seed: 0,
            solver: SolveOptions::default(),
            family: FamilyConfig::default(),
            buckling: BucklingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn material(&self) -> crate::Result<Material> {
        Material::new(self.young, self.poisson, self.thickness)
    }

    fn rect(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Geometry {
        Geometry::Rectangle { x, y, nx, ny }
    }

    fn annulus(nr: usize, ntheta: usize) -> Geometry {
        Geometry::Annulus {
            r1: 1.0,
            r2: 2.0,
            nr,
            ntheta,
        }
    }
}

/// Preset values with the material flags applied first, so loads and
/// widths derived from the material see the final values.
pub fn preset_config(p: Option<Preset>, common: &CommonArgs) -> CliResult<RunConfig> {
    let mut c = RunConfig {
        preset: p,
        ..RunConfig::default()
    };
    let unit = (0.0, 1.0);
    match p {
        Some(Preset::Ce14) => c.thickness = 0.05,
        Some(Preset::Ce33) => c.thickness = 1e-4,
        _ => {}
    }
    c.young = common.young.unwrap_or(c.young);
    c.poisson = common.nu.unwrap_or(c.poisson);
    c.thickness = common.h.unwrap_or(c.thickness);
    let m = c.material()?;
    let (_, cap) = coercivity_constants(m.poisson)?;
    let Some(p) = p else { return Ok(c) };
    match p {
        Preset::Thm11 => {
            c.geometry = RunConfig::rect((0.0, 2.0), unit, 64, 32);
            c.load = LoadConfig::Normal { f: 0.1 };
            // Energy differences near the minimum fall below rounding at residual ~1e-9.
            c.solver.grad_tol = 1e-8;
        }
        Preset::Thm13 => {
            c.geometry = RunConfig::rect(unit, unit, 32, 32);
            c.load = LoadConfig::ThresholdFraction { fraction: 0.9 };
            c.support = Support::Whole { class: BcClass::A1 };
        }
        Preset::Thm16 => {
            c.geometry = RunConfig::rect(unit, unit, 32, 32);
            c.load = LoadConfig::Shear { gamma: 0.01 };
            c.support = Support::Whole { class: BcClass::A1 };
            c.solver.grad_tol = 1e-8;
        }
        Preset::Thm18 => {
            c.geometry = RunConfig::rect(unit, unit, 32, 32);
            c.load = LoadConfig::Uniaxial { gamma: 0.01 };
            c.support = Support::Whole { class: BcClass::A0 };
        }
        Preset::Ce12 => {
            c.geometry = RunConfig::rect((-2.0, 2.0), (-1.0, 1.0), 81, 41);
            c.load = LoadConfig::Normal {
                f: 2.0 * compression_divergence_threshold(&m)?,
            };
            c.support = Support::LeftEdge { class: BcClass::A1 };
        }
        Preset::Ce14 => {
            c.geometry = RunConfig::rect((-2.0, 2.0), (-1.0, 1.0), 161, 81);
            c.load = LoadConfig::Shear {
                gamma: 12.0 * m.young * cap * m.thickness.powi(2),
            };
            c.support = Support::ShearBand;
        }
        Preset::Remark13 => {
            c.geometry = RunConfig::rect(unit, unit, 41, 41);
            c.load = LoadConfig::SupportedEdge { lambda: 1.0 };
            c.support = Support::LeftEdge { class: BcClass::A1 };
        }
        Preset::Ce33 => {
            c.geometry = RunConfig::rect((0.0, 2.0 * m.young * cap), unit, 161, 2049);
            c.load = LoadConfig::Uniaxial { gamma: 1.0 };
            c.support = Support::Whole { class: BcClass::A1 };
        }
        Preset::Ex27 => {
            c.geometry = RunConfig::rect(unit, unit, 9, 161);
            c.load = LoadConfig::Uniaxial { gamma: 0.01 };
            c.support = Support::Free;
        }
        Preset::Ex28 => {
            c.geometry = RunConfig::rect((-2.0, 2.0), (-1.0, 1.0), 81, 41);
            c.load = LoadConfig::Shear { gamma: 0.01 };
            c.buckling = BucklingConfig {
                interval: (-1.0, 1.0),
                nodes: 401,
                ..BucklingConfig::default()
            };
        }
        Preset::Ex45 => {
            c.geometry = RunConfig::annulus(256, 64);
            c.load = LoadConfig::Pressures { p1: -2.0, p2: -1.0 };
        }
        Preset::Ex46 => {
            c.geometry = RunConfig::annulus(33, 64);
            c.load = LoadConfig::Pressures { p1: 1.0, p2: 1.0 };
        }
        Preset::Ex48 => {
            c.geometry = RunConfig::annulus(256, 64);
            c.load = LoadConfig::Pressures { p1: 1.0, p2: 0.25 };
        }
    }
    Ok(c)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Preset, then config file, then flags.
pub fn build_config(common: &CommonArgs) -> CliResult<RunConfig> {
    let file: Option<Value> = match &common.config {
        Some(path) => Some(serde_json::from_str(&fs::read_to_string(path)?)?),
        None => None,
    };
    let preset = match (&common.preset, file.as_ref().and_then(|f| f.get("preset"))) {
        (Some(s), _) => Some(Preset::parse(s)?),
        (None, Some(Value::String(s))) => Some(Preset::parse(s)?),
        (None, Some(Value::Null) | None) => None,
        (None, Some(other)) => return Err(usage(format!("preset must be a string, got {other}"))),
    };
    let mut value = serde_json::to_value(preset_config(preset, common)?)?;
    if let Some(mut f) = file {
        if let Some(obj) = f.as_object_mut() {
            obj.remove("preset");
        }
        merge(&mut value, f);
    }
    let mut c: RunConfig = serde_json::from_value(value)?;
    if let Some((nx, ny)) = common.grid {
        match &mut c.geometry {
            Geometry::Rectangle { nx: a, ny: b, .. } => (*a, *b) = (nx, ny),
            Geometry::Annulus { .. } => {
                return Err(usage("--grid needs a rectangle; use --annulus"))
            }
        }
    }
    if let Some((r1, r2, nr, ntheta)) = common.annulus {
        c.geometry = Geometry::Annulus { r1, r2, nr, ntheta };
    }
    if let Some(s) = common.seed {
        c.seed = s;
        c.solver.seed = s;
    }
    c.alpha = common.alpha.unwrap_or(c.alpha);
    c.young = common.young.unwrap_or(c.young);
    c.poisson = common.nu.unwrap_or(c.poisson);
    c.thickness = common.h.unwrap_or(c.thickness);
    c.material()?;
    if !(c.alpha.is_finite() && c.alpha >= 0.0) {
        return Err(usage(format!("alpha must be >= 0, got {}", c.alpha)));
    }
    c.solver.validate()?;
    Ok(c)
}

fn support_spec(c: &RunConfig, grid: &Grid) -> BoundarySpec {
    match c.support {
        Support::Free => BoundarySpec::free(grid),
        Support::Whole { class } => BoundarySpec::whole_boundary(grid, class),
        Support::LeftEdge { class } => {
            BoundarySpec::from_predicate(grid, class, |_, _, e| e == Edge::Left)
        }
        Support::ShearBand => shear_support(grid),
    }
}

fn load_spec(c: &RunConfig, grid: &Grid, m: &Material) -> CliResult<LoadSpec> {
    let edge = |edge, normal, tangential| EdgeLoad {
        edge,
        normal,
        tangential,
    };
    let spec = match c.load {
        LoadConfig::None => LoadSpec::none(),
        LoadConfig::Normal { f } => LoadSpec::traction(Traction::NormalPressure(f)),
        LoadConfig::ThresholdFraction { fraction } => LoadSpec::traction(Traction::NormalPressure(
            fraction * compression_threshold(m, grid)?,
        )),
        LoadConfig::Shear { gamma } => shear_load(gamma),
        LoadConfig::Uniaxial { gamma } => LoadSpec::traction(Traction::PerEdge(vec![
            edge(Edge::Bottom, -gamma, 0.0),
            edge(Edge::Top, -gamma, 0.0),
        ])),
        LoadConfig::SupportedEdge { lambda } => edge_supported_load(lambda, m),
        LoadConfig::Pressures { p1, p2 } => LoadSpec::traction(Traction::PerEdge(vec![
            edge(Edge::Inner, p1, 0.0),
            edge(Edge::Outer, p2, 0.0),
        ])),
    };
    Ok(spec.with_alpha(c.alpha))
}

// ---------------------------------------------------------------------------
// Output.

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_json(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                out.push_str(&fmt_f64(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_json(x, indent + 1, out);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(o) if o.is_empty() => out.push_str("{}"),
        Value::Object(o) => {
            out.push_str("{\n");
            for (i, (k, x)) in o.iter().enumerate() {
                let _ = write!(out, "{}{}: ", pad(indent + 1), Value::String(k.clone()));
                write_json(x, indent + 1, out);
                out.push_str(if i + 1 < o.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Pretty JSON with every float in [`fmt_f64`] form.
pub fn to_json_string(v: &Value) -> String {
    let mut s = String::new();
    write_json(v, 0, &mut s);
    s.push('\n');
    s
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = Vec<String>>) -> CliResult<()> {
    let mut s = String::with_capacity(1 << 16);
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// `x1,x2,u1,u2,w`, one row per node in storage order.
pub fn write_fields(path: &Path, grid: &Grid, u: &VectorField2, w: &ScalarField) -> CliResult<()> {
    write_csv(
        path,
        "x1,x2,u1,u2,w",
        (0..grid.node_count()).map(|k| {
            let [x, y] = grid.coord(k);
            vec![
                fmt_f64(x),
                fmt_f64(y),
                fmt_f64(u.x[k]),
                fmt_f64(u.y[k]),
                fmt_f64(w.0[k]),
            ]
        }),
    )
}

/// `x1,x2,s1,flag` with `flag` either `tensile` or `compressive`.
pub fn write_classification(path: &Path, grid: &Grid, c: &StateClass) -> CliResult<()> {
    write_csv(
        path,
        "x1,x2,s1,flag",
        (0..grid.node_count()).map(|k| {
            let [x, y] = grid.coord(k);
            let flag = if c.tensile[k] {
                "tensile"
            } else {
                "compressive"
            };
            vec![fmt_f64(x), fmt_f64(y), fmt_f64(c.s1[k]), flag.to_string()]
        }),
    )
}

/// Evenly spaced samples including the first and last entries.
fn truncate_history(h: &[f64]) -> Vec<f64> {
    if h.len() <= HISTORY_CAP {
        return h.to_vec();
    }
    (0..HISTORY_CAP)
        .map(|i| h[i * (h.len() - 1) / (HISTORY_CAP - 1)])
        .collect()
}

fn report_json(r: &SolveReport) -> Value {
    json!({
        "iterations": r.iterations,
        "final_residual": r.final_residual,
        "converged": r.converged,
        "diverging": r.diverging,
        "final_energy": r.final_energy(),
        "energy_history": truncate_history(&r.energy_history),
    })
}

fn grid_json(grid: &Grid) -> Value {
    match *grid.kind() {
        GridKind::Rectangle {
            x0,
            x1,
            y0,
            y1,
            nx,
            ny,
        } => {
            json!({"kind": "rectangle", "x": [x0, x1], "y": [y0, y1], "nx": nx, "ny": ny})
        }
        GridKind::Annulus { r1, r2, nr, ntheta } => {
            json!({"kind": "annulus", "r1": r1, "r2": r2, "nr": nr, "ntheta": ntheta})
        }
    }
}

/// Result of one subcommand before it is written.
struct Report {
    results: Value,
    energy: Option<EnergyBreakdown>,
    solve: Option<Value>,
    outcome: Outcome,
}

impl Report {
    fn done(results: Value) -> Self {
        Self {
            results,
            energy: None,
            solve: None,
            outcome: Outcome::Success,
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    preset: Option<Preset>,
}

impl Ctx {
    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require_preset(&self, what: &str) -> CliResult<Preset> {
        self.preset
            .ok_or_else(|| usage(format!("{what} needs --preset")))
    }
}

// ---------------------------------------------------------------------------
// Entry point.

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code: 0 success, 1 usage error, 2 numerical
/// failure, 3 certified divergence.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(o) => o.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn output_dir(common: &CommonArgs) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn execute(cli: &Cli) -> CliResult<Outcome> {
    let started = Instant::now();
    let cfg = build_config(&cli.common)?;
    let out = output_dir(&cli.common);
    fs::create_dir_all(&out)?;
    let ctx = Ctx {
        preset: cfg.preset,
        cfg,
        out,
    };
    let report = match &cli.command {
        Command::Energy { n } => cmd_energy(&ctx, *n)?,
        Command::Gradcheck { trials, step, tol } => cmd_gradcheck(&ctx, *trials, *step, *tol)?,
        Command::Minimize {
            max_iters,
            grad_tol,
            memory,
            noise,
            init_family,
        } => {
            let mut opts = ctx.cfg.solver;
            opts.max_iters = max_iters.unwrap_or(opts.max_iters);
            opts.grad_tol = grad_tol.unwrap_or(opts.grad_tol);
            opts.memory = memory.unwrap_or(opts.memory);
            opts.validate()?;
            cmd_minimize(&ctx, &opts, noise.unwrap_or(ctx.cfg.noise), *init_family)?
        }
        Command::Buckle {
            variant,
            nodes,
            modes,
            gamma,
        } => {
            let mut b = ctx.cfg.buckling.clone();
            b.variant = variant.map(Into::into).unwrap_or(b.variant);
            b.nodes = nodes.unwrap_or(b.nodes);
            b.modes = modes.unwrap_or(b.modes);
            b.gamma = gamma.unwrap_or(b.gamma);
            cmd_buckle(&ctx, &b)?
        }
        Command::Family { n, f, hs } => {
            let indices = n
                .as_deref()
                .map(parse_indices)
                .transpose()?
                .unwrap_or(ctx.cfg.family.indices.clone());
            let hs = hs
                .as_deref()
                .map(parse_floats)
                .transpose()?
                .unwrap_or(ctx.cfg.family.h_values.clone());
            cmd_family(&ctx, &indices, *f, &hs)?
        }
        Command::Relax {
            tensor,
            radius,
            resolution,
        } => cmd_relax(&ctx, tensor.as_deref(), *radius, *resolution)?,
        Command::Prestress { p1, p2 } => cmd_prestress(&ctx, *p1, *p2)?,
        Command::Poincare => cmd_poincare(&ctx)?,
        Command::Sweep { hs, alphas } => {
            let hs = hs
                .as_deref()
                .map(parse_floats)
                .transpose()?
                .unwrap_or(vec![1e-4, 1e-5, 1e-6]);
            let alphas = alphas
                .as_deref()
                .map(parse_floats)
                .transpose()?
                .unwrap_or(vec![0.0, 2.0]);
            cmd_sweep(&ctx, &cli.common, &hs, &alphas)?
        }
    };
    let mut summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": cli.command.name(),
        "config": serde_json::to_value(&ctx.cfg)?,
        "results": report.results,
        "outcome": report.outcome,
        "exit_code": report.outcome.exit_code(),
        "timing": {"wall_seconds": started.elapsed().as_secs_f64()},
    });
    if let Some(e) = report.energy {
        summary["energy"] = serde_json::to_value(e)?;
    }
    if let Some(s) = report.solve {
        summary["solve"] = s;
    }
    fs::write(ctx.file("summary.json"), to_json_string(&summary))?;
    Ok(report.outcome)
}

// ---------------------------------------------------------------------------
// Subcommands.

fn family_state(
    kind: FamilyKind,
    n: usize,
    grid: &Grid,
) -> crate::Result<(VectorField2, ScalarField)> {
    match kind {
        FamilyKind::Compression => compression_family(n, grid),
        FamilyKind::Shear => shear_family(n, grid),
        FamilyKind::SupportedEdge => edge_supported_family(n, grid),
        FamilyKind::Wrinkle => wrinkle_family(n, grid),
    }
}

/// Plate energy, or for wrinkles the energy in rescaled variables.
fn family_energy(
    kind: FamilyKind,
    grid: &Grid,
    state: &(VectorField2, ScalarField),
    m: &Material,
    load: &LoadSpec,
    bc: &BoundarySpec,
) -> crate::Result<EnergyBreakdown> {
    match kind {
        FamilyKind::Wrinkle => {
            let unscaled = LoadSpec {
                alpha: 0.0,
                ..load.clone()
            };
            let f = Functional::new(grid, m, Weights::rescaled(m, load.alpha), &unscaled)?;
            Ok(f.energy(&state.0.x, &state.0.y, &state.1 .0))
        }
        _ => total_energy(grid, &state.0, &state.1, m, load, bc),
    }
}

fn rect_extent(grid: &Grid) -> Option<(f64, f64, f64, f64)> {
    match *grid.kind() {
        GridKind::Rectangle { x0, x1, y0, y1, .. } => Some((x0, x1, y0, y1)),
        GridKind::Annulus { .. } => None,
    }
}

/// Closed-form energy and upper bound where they apply to this geometry and load.
fn family_closed_forms(
    kind: FamilyKind,
    n: usize,
    c: &RunConfig,
    grid: &Grid,
    m: &Material,
) -> (Option<f64>, Option<f64>) {
    let Some((x0, x1, y0, y1)) = rect_extent(grid) else {
        return (None, None);
    };
    let canonical = (x0, x1, y0, y1) == (-2.0, 2.0, -1.0, 1.0);
    let unscaled = c.alpha == 0.0;
    match (kind, &c.load) {
        (FamilyKind::Compression, LoadConfig::Normal { f }) if unscaled => (
            Some(compression_energy(n, x1 - x0, y1 - y0, m, *f)),
            canonical
                .then(|| compression_energy_bound(n, m, *f).ok())
                .flatten(),
        ),
        (FamilyKind::Shear, LoadConfig::Shear { gamma }) if unscaled && canonical => (
            Some(shear_energy(n, m, *gamma)),
            shear_energy_bound(n, m, *gamma).ok(),
        ),
        (FamilyKind::SupportedEdge, LoadConfig::SupportedEdge { lambda })
            if unscaled && (x0, x1, y0, y1) == (0.0, 1.0, 0.0, 1.0) =>
        {
            (Some(edge_supported_energy(n, m, *lambda)), None)
        }
        (FamilyKind::Wrinkle, LoadConfig::Uniaxial { gamma })
            if *gamma == 1.0 && (x0, y0, y1) == (0.0, 0.0, 1.0) =>
        {
            let a = x1;
            (
                Some(n as f64 * wrinkle_energy_slope(m, a)),
                wrinkle_energy_bound(n, m, a).ok(),
            )
        }
        _ => (None, None),
    }
}

fn with_load_magnitude(c: &RunConfig, f: Option<f64>) -> CliResult<RunConfig> {
    let mut c = c.clone();
    if let Some(v) = f {
        c.load = match c.load {
            LoadConfig::Normal { .. } => LoadConfig::Normal { f: v },
            LoadConfig::ThresholdFraction { .. } => LoadConfig::ThresholdFraction { fraction: v },
            LoadConfig::Shear { .. } => LoadConfig::Shear { gamma: v },
            LoadConfig::Uniaxial { .. } => LoadConfig::Uniaxial { gamma: v },
            LoadConfig::SupportedEdge { .. } => LoadConfig::SupportedEdge { lambda: v },
            LoadConfig::None | LoadConfig::Pressures { .. } => {
                return Err(usage("--f does not apply to this preset's load"));
            }
        };
    }
    Ok(c)
}

fn cmd_family(ctx: &Ctx, indices: &[usize], f: Option<f64>, hs: &[f64]) -> CliResult<Report> {
    let p = ctx.require_preset("family")?;
    match p {
        Preset::Ex45 => return radial_family(ctx, hs),
        Preset::Ex48 => return tangential_family(ctx, hs),
        _ => {}
    }
    let kind = p
        .family()
        .ok_or_else(|| usage(format!("preset {} has no family", p.name())))?;
    let c = with_load_magnitude(&ctx.cfg, f)?;
    let m = c.material()?;
    let grid = c.geometry.build()?;
    let bc = support_spec(&c, &grid);
    let load = load_spec(&c, &grid, &m)?;
    let mut rows = Vec::new();
    let (mut xs, mut es) = (Vec::new(), Vec::new());
    let mut last = None;
    for &n in indices {
        let state = family_state(kind, n, &grid)?;
        let e = family_energy(kind, &grid, &state, &m, &load, &bc)?;
        let (exact, bound) = family_closed_forms(kind, n, &c, &grid, &m);
        rows.push(json!({"n": n, "energy": e.total, "breakdown": e, "closed_form": exact, "bound": bound}));
        xs.push(n as f64);
        es.push(e.total);
        last = Some(state);
    }
    if let Some((u, w)) = &last {
        write_fields(&ctx.file("fields.csv"), &grid, u, w)?;
    }
    let cert = if indices.len() >= 3 {
        Some(certify_divergence(&xs, &es)?)
    } else {
        None
    };
    let diverging = cert.as_ref().is_some_and(|c| c.unbounded);
    Ok(Report {
        results: json!({
            "family": p.name(),
            "grid": grid_json(&grid),
            "load": serde_json::to_value(&c.load)?,
            "rows": rows,
            "certificate": cert,
        }),
        energy: None,
        solve: None,
        outcome: if diverging {
            Outcome::Diverging
        } else {
            Outcome::Success
        },
    })
}

fn annulus_data(
    ctx: &Ctx,
    p1: Option<f64>,
    p2: Option<f64>,
) -> CliResult<(Grid, Material, PrestressAnnulus)> {
    let grid = ctx.cfg.geometry.build()?;
    let (r1, r2) = match *grid.kind() {
        GridKind::Annulus { r1, r2, .. } => (r1, r2),
        GridKind::Rectangle { .. } => {
            return Err(usage("this subcommand needs an annulus geometry"))
        }
    };
    let (q1, q2) = match ctx.cfg.load {
        LoadConfig::Pressures { p1, p2 } => (p1, p2),
        _ => (0.0, 0.0),
    };
    let m = ctx.cfg.material()?;
    let pre = annulus_prestress(p1.unwrap_or(q1), p2.unwrap_or(q2), r1, r2, &m)?;
    Ok((grid, m, pre))
}

fn radial_family(ctx: &Ctx, hs: &[f64]) -> CliResult<Report> {
    let (grid, m, pre) = annulus_data(ctx, None, None)?;
    let alpha = ctx.cfg.alpha;
    let order = if pre.p1 <= pre.p2 {
        PressureOrder::InnerLower
    } else {
        PressureOrder::OuterLower
    };
    let relaxed = pre.relaxed_min()?;
    let mut rows = Vec::new();
    for (i, &h) in hs.iter().enumerate() {
        let mh = m.with_thickness(h)?;
        let osc = RadialOscillation::with_scaling(
            pre.r1,
            pre.r2,
            pre.a,
            pre.b,
            order,
            m.poisson,
            h,
            alpha,
            SigmaRule::Balanced,
        )?;
        let e = osc.scaled_energy(&mh, alpha, pre.load_work())?;
        if i == 0 {
            write_fields(
                &ctx.file("fields.csv"),
                &grid,
                &pre.sample(&grid)?,
                &osc.sample(&grid)?,
            )?;
        }
        rows.push(json!({
            "h": h, "beta": osc.beta(), "sigma": osc.sigma(),
            "bending": e.bending, "membrane": e.membrane, "load_work": e.load_work,
            "scaled_energy": e.total, "gap": e.total - relaxed,
        }));
    }
    Ok(Report::done(json!({
        "family": "radial_oscillation",
        "a": pre.a, "b": pre.b,
        "relaxed_min_energy": relaxed,
        "rows": rows,
    })))
}

fn tangential_family(ctx: &Ctx, hs: &[f64]) -> CliResult<Report> {
    let (grid, m, pre) = annulus_data(ctx, None, None)?;
    if pre.a.abs() > 1e-12 * pre.b.abs() || pre.b >= 0.0 {
        return Err(usage(
            "tangential oscillations need pure hoop compression: p2 R2² = p1 R1² with p1 > 0",
        ));
    }
    let mut rows = Vec::new();
    for (i, &h) in hs.iter().enumerate() {
        let osc = TangentialOscillation::with_scaling(
            pre.r1,
            pre.r2,
            pre.b,
            m.poisson,
            h,
            ctx.cfg.alpha,
        )?;
        let (g, lim) = (osc.g_integral(), osc.g_limit());
        if i == 0 {
            write_fields(
                &ctx.file("fields.csv"),
                &grid,
                &pre.sample(&grid)?,
                &osc.sample(&grid)?,
            )?;
        }
        rows.push(json!({"h": h, "beta": osc.beta(), "g_integral": g, "g_limit": lim, "relative_error": (g - lim) / lim}));
    }
    Ok(Report::done(json!({
        "family": "tangential_oscillation",
        "a": pre.a, "b": pre.b,
        "relaxed_min_energy": pre.relaxed_min()?,
        "rows": rows,
    })))
}

fn cmd_energy(ctx: &Ctx, n: Option<usize>) -> CliResult<Report> {
    let c = &ctx.cfg;
    let m = c.material()?;
    let grid = c.geometry.build()?;
    if grid.is_annulus() {
        let (grid, m, pre) = annulus_data(ctx, None, None)?;
        let v = pre.sample(&grid)?;
        let z = ScalarField::zeros(grid.node_count());
        let e = prestressed_energy(&grid, &v, &z, &m, &pre.load(), c.alpha)?;
        write_fields(&ctx.file("fields.csv"), &grid, &v, &z)?;
        return Ok(Report {
            results: json!({"grid": grid_json(&grid), "prestressed": e.value, "scaled": e.scaled}),
            energy: Some(e.breakdown),
            solve: None,
            outcome: Outcome::Success,
        });
    }
    let bc = support_spec(c, &grid);
    let load = load_spec(c, &grid, &m)?;
    let (state, breakdown, extra) = match ctx.preset.and_then(Preset::family) {
        Some(kind) => {
            let state = family_state(kind, n.unwrap_or(1), &grid)?;
            let e = family_energy(kind, &grid, &state, &m, &load, &bc)?;
            (state, e, json!({"family_index": n.unwrap_or(1)}))
        }
        None => {
            let state = flat_with_noise(&grid, &bc, c.noise, c.seed)?;
            let e = total_energy(&grid, &state.0, &state.1, &m, &load, &bc)?;
            (state, e, json!({"noise": c.noise}))
        }
    };
    write_fields(&ctx.file("fields.csv"), &grid, &state.0, &state.1)?;
    Ok(Report {
        results: json!({"grid": grid_json(&grid), "state": extra}),
        energy: Some(breakdown),
        solve: None,
        outcome: Outcome::Success,
    })
}

fn cmd_gradcheck(ctx: &Ctx, trials: usize, step: f64, tol: f64) -> CliResult<Report> {
    let c = &ctx.cfg;
    let grid = c.geometry.build()?;
    let err = gradient_check(&grid, &c.material()?, c.alpha, trials, c.seed, step)?;
    println!("max relative gradient error: {err:.3e}");
    Ok(Report {
        results: json!({"grid": grid_json(&grid), "trials": trials, "step": step, "max_relative_error": err, "tolerance": tol}),
        energy: None,
        solve: None,
        outcome: if err < tol {
            Outcome::Success
        } else {
            Outcome::NotConverged
        },
    })
}

fn outcome_of(r: &SolveReport) -> Outcome {
    if r.diverging {
        Outcome::Diverging
    } else if r.converged {
        Outcome::Success
    } else {
        Outcome::NotConverged
    }
}

fn cmd_minimize(
    ctx: &Ctx,
    opts: &SolveOptions,
    noise: f64,
    init_family: Option<usize>,
) -> CliResult<Report> {
    let c = &ctx.cfg;
    let m = c.material()?;
    let grid = c.geometry.build()?;
    if grid.is_annulus() {
        return minimize_prestressed(ctx, opts, noise);
    }
    let bc = support_spec(c, &grid);
    let load = load_spec(c, &grid, &m)?;
    let family = ctx.preset.and_then(Preset::family);
    let init_index = init_family.or(match ctx.preset {
        Some(Preset::Ce12) => Some(4),
        _ => None,
    });
    let (u0, w0) = match (family, init_index) {
        (Some(kind), Some(n)) => family_state(kind, n, &grid)?,
        (None, Some(_)) => return Err(usage("--init-family needs a family preset")),
        _ => flat_with_noise(&grid, &bc, noise, c.seed)?,
    };
    let (u, w, report) = minimize(&grid, &m, &load, &bc, (&u0, &w0), opts)?;
    let e = total_energy(&grid, &u, &w, &m, &load, &bc)?;
    write_fields(&ctx.file("fields.csv"), &grid, &u, &w)?;
    let mean = grid.integrate(&w)? / grid.area();
    let centered = ScalarField(w.0.iter().map(|x| x - mean).collect());
    let mut results = json!({
        "grid": grid_json(&grid),
        "traction": load.resolve(&grid)?.first().copied(),
        "max_centered_deflection": centered.max_abs(),
    });
    if let LoadConfig::ThresholdFraction { fraction } = c.load {
        results["compression_threshold"] = json!(compression_threshold(&m, &grid)?);
        results["threshold_fraction"] = json!(fraction);
    }
    if let (LoadConfig::Normal { f }, Support::Free) = (&c.load, &c.support) {
        // A free plate under uniform normal traction has strain f(1-ν)/E I.
        let target = f * (1.0 - m.poisson) / m.young;
        let s = grid.sym_grad_vector(&u)?;
        let dev = s.0.iter().fold(0.0f64, |d, a| {
            d.max((a.a11 - target).abs())
                .max((a.a22 - target).abs())
                .max(a.a12.abs())
        });
        results["uniform_strain"] = json!(target);
        results["max_strain_deviation"] = json!(dev);
    }
    Ok(Report {
        results,
        energy: Some(e),
        outcome: outcome_of(&report),
        solve: Some(report_json(&report)),
    })
}

/// Transverse minimization of the prestressed energy about the radial equilibrium.
fn minimize_prestressed(ctx: &Ctx, opts: &SolveOptions, noise: f64) -> CliResult<Report> {
    let (grid, m, pre) = annulus_data(ctx, None, None)?;
    let load = pre.load();
    let v = pre.sample(&grid)?;
    let bc = BoundarySpec::free(&grid);
    let (_, z0) = flat_with_noise(&grid, &bc, noise, ctx.cfg.seed)?;
    let f = Functional::new(&grid, &m, Weights::prestressed(&m, ctx.cfg.alpha), &load)?;
    let (_, z, report) = minimize_functional(&f, &bc, (&v, &z0), opts, Unknowns::TransverseOnly)?;
    let e = f.energy(&v.x, &v.y, &z.0);
    let flat = f.energy(&v.x, &v.y, &vec![0.0; grid.node_count()]).total;
    let mean = grid.integrate(&z)? / grid.area();
    let spread = z.0.iter().fold(0.0f64, |s, x| s.max((x - mean).abs()));
    let class = classify_state(&grid.sym_grad_vector(&v)?, &m)?;
    write_fields(&ctx.file("fields.csv"), &grid, &v, &z)?;
    write_classification(&ctx.file("classify.csv"), &grid, &class)?;
    Ok(Report {
        results: json!({
            "grid": grid_json(&grid),
            "a": pre.a, "b": pre.b,
            "flat_energy": flat,
            "energy_above_flat": e.total - flat,
            "initial_max_deflection": z0.max_abs(),
            "final_max_centered_deflection": spread,
            "flat_forced": class.flat_forced(),
        }),
        energy: Some(e),
        outcome: outcome_of(&report),
        solve: Some(report_json(&report)),
    })
}

fn cmd_buckle(ctx: &Ctx, b: &crate::cli::BucklingConfig) -> CliResult<Report> {
    let p = ctx.require_preset("buckle")?;
    let kind = match p {
        Preset::Ex27 => BuckledKind::Compression,
        Preset::Ex28 => BuckledKind::Shear,
        _ => {
            return Err(usage(format!(
                "preset {} has no buckling problem",
                p.name()
            )))
        }
    };
    let m = ctx.cfg.material()?;
    let modes = buckling_critical(b.variant, b.interval, b.nodes, b.modes)?;
    let len = b.interval.1 - b.interval.0;
    let first = match b.variant {
        BucklingBc::Clamped => (2.0 * std::f64::consts::PI / len).powi(2),
        BucklingBc::Supported => (std::f64::consts::PI / len).powi(2),
        BucklingBc::Free => f64::NAN,
    };
    let rows = modes
        .iter()
        .enumerate()
        .map(|(i, md)| {
            let h = match kind {
                BuckledKind::Compression => critical_thickness_compression(&m, b.gamma, 1.0, md.k)?,
                BuckledKind::Shear => critical_thickness_shear(&m, b.gamma, md.k)?,
            };
            Ok(json!({"index": i + 1, "k": md.k, "critical_thickness": h}))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let grid = ctx.cfg.geometry.build()?;
    let mode = buckled_mode(kind, 1, &grid, &m, b.gamma)?;
    let mh = m.with_thickness(mode.thickness)?;
    let lim = limit_energy(&grid, &mode.u_star, &mode.w, &mh)?;
    let bend = crate::energy::bending_energy(&grid, &mode.w, &mh)?;
    write_fields(&ctx.file("fields.csv"), &grid, &mode.u_star, &mode.w)?;
    Ok(Report::done(json!({
        "variant": b.variant,
        "interval": [b.interval.0, b.interval.1],
        "nodes": b.nodes,
        "gamma": b.gamma,
        "modes": rows,
        "reference_first_k": if first.is_finite() { json!(first) } else { Value::Null },
        "embedded_mode": {
            "k": mode.k,
            "critical_thickness": mode.thickness,
            "limit_energy": lim,
            "bending_energy": bend,
        },
    })))
}

fn parse_tensor(s: &str) -> CliResult<Sym2> {
    let v = parse_floats(s)?;
    if v.len() != 3 {
        return Err(usage(format!("expected A11,A12,A22, got {s}")));
    }
    Ok(Sym2::new(v[0], v[1], v[2]))
}

fn write_envelope(path: &Path, env: &crate::relaxation::Envelope) -> CliResult<()> {
    let n = env.resolution;
    write_csv(
        path,
        "xi1,xi2,g,envelope",
        (0..n * n).map(|k| {
            vec![
                fmt_f64(env.axis[k % n]),
                fmt_f64(env.axis[k / n]),
                fmt_f64(env.g[k]),
                fmt_f64(env.envelope[k]),
            ]
        }),
    )
}

fn cmd_relax(
    ctx: &Ctx,
    tensor: Option<&str>,
    radius: Option<f64>,
    resolution: usize,
) -> CliResult<Report> {
    let nu = ctx.cfg.poisson;
    if matches!(ctx.preset, Some(Preset::Ex45 | Preset::Ex46 | Preset::Ex48)) && tensor.is_none() {
        let (grid, m, pre) = annulus_data(ctx, None, None)?;
        let v = pre.sample(&grid)?;
        let load = pre.load();
        let class = classify_state(&grid.sym_grad_vector(&v)?, &m)?;
        write_classification(&ctx.file("classify.csv"), &grid, &class)?;
        // Envelope of the inner-circle strain in its principal frame.
        let a = 2.0 * pre.strain(pre.r1, 0.0);
        let star = min_ga(&a, nu)?;
        let r = radius.unwrap_or(1.25 * star.xi_star[0].hypot(star.xi_star[1]).max(1.0));
        let env = convexify_2d(&a, nu, r, resolution)?;
        write_envelope(&ctx.file("envelope.csv"), &env)?;
        let zero = ScalarField::zeros(grid.node_count());
        return Ok(Report::done(json!({
            "a": pre.a, "b": pre.b,
            "flat_forced": class.flat_forced(),
            "compressive_nodes": class.compressive_count(),
            "transition_radius": pre.transition_radius(),
            "relaxed_min_energy": relaxed_min_energy(&grid, &v, &m, &load)?,
            "relaxed_min_energy_radial": pre.relaxed_min()?,
            "relaxed_energy_flat": relaxed_energy(&grid, &v, &zero, &m, &load)?,
            "flat_energy": flat_energy(&grid, &v, &m, &load)?,
            "inner_envelope_min": env.min(),
            "inner_min_ga": star.value,
        })));
    }
    let a = parse_tensor(tensor.unwrap_or("-1,0,-1"))?;
    let star = min_ga(&a, nu)?;
    let e = eig_sym2(&a);
    let r = radius.unwrap_or(2.0 * (1.0 + star.xi_star[0].hypot(star.xi_star[1])));
    let env = convexify_2d(&a, nu, r, resolution)?;
    write_envelope(&ctx.file("envelope.csv"), &env)?;
    Ok(Report::done(json!({
        "tensor": [a.a11, a.a12, a.a22],
        "nu": nu,
        "eigenvalues": [e.lam1, e.lam2],
        "compressive": nu * e.lam2 + e.lam1 < 0.0,
        "min_value": star.value,
        "xi_star": star.xi_star,
        "envelope_min": env.min(),
        "radius": r,
        "resolution": resolution,
    })))
}

fn cmd_prestress(ctx: &Ctx, p1: Option<f64>, p2: Option<f64>) -> CliResult<Report> {
    let (grid, m, pre) = annulus_data(ctx, p1, p2)?;
    let v = pre.sample(&grid)?;
    let strain = Sym2Field(
        (0..grid.node_count())
            .map(|k| {
                let [x, y] = grid.coord(k);
                pre.strain(x, y)
            })
            .collect(),
    );
    let class = classify_state(&strain, &m)?;
    let residual = pre.neumann_residual(&grid)?;
    write_fields(
        &ctx.file("fields.csv"),
        &grid,
        &v,
        &ScalarField::zeros(grid.node_count()),
    )?;
    write_classification(&ctx.file("classify.csv"), &grid, &class)?;
    Ok(Report::done(json!({
        "prestress": pre,
        "neumann_residual": residual,
        "load_work": pre.load_work(),
        "flat_forced": class.flat_forced(),
        "wrinkling_admissible": class.wrinkling_admissible(),
        "compressive_nodes": class.compressive_count(),
        "transition_radius": pre.transition_radius(),
        "relaxed_min_energy": pre.relaxed_min()?,
    })))
}

fn cmd_poincare(ctx: &Ctx) -> CliResult<Report> {
    let grid = ctx.cfg.geometry.build()?;
    let m = ctx.cfg.material()?;
    let k = poincare_constant(&grid)?;
    let reference = match rect_extent(&grid) {
        Some((x0, x1, y0, y1)) => {
            let l = (x1 - x0).max(y1 - y0);
            json!(l * l / (std::f64::consts::PI * std::f64::consts::PI))
        }
        None => Value::Null,
    };
    Ok(Report::done(json!({
        "grid": grid_json(&grid),
        "poincare_constant": k,
        "rectangle_reference": reference,
        "compression_threshold": compression_threshold(&m, &grid)?,
    })))
}

/// Relative spread `max |e_i - e_j| / max |e_i|`.
fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let s = v.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    if s == 0.0 {
        0.0
    } else {
        (hi - lo) / s
    }
}

/// Cauchy tolerance for scaled energies of bounded runs.
const CAUCHY_TOL: f64 = 0.01;

/// `α >= 2`: minimizers of the rescaled energy of the free tension plate.
/// `α < 2`: the wrinkle family in rescaled variables, certified per thickness.
fn cmd_sweep(ctx: &Ctx, common: &CommonArgs, hs: &[f64], alphas: &[f64]) -> CliResult<Report> {
    let tension = {
        let mut c = preset_config(Some(Preset::Thm11), common)?;
        // The rescaled functional is h-independent at alpha = 2; a coarse grid
        // keeps its bending-dominated conditioning within the iteration budget.
        let (nx, ny) = common.grid.unwrap_or((32, 16));
        c.geometry = RunConfig::rect((0.0, 2.0), (0.0, 1.0), nx, ny);
        c.seed = ctx.cfg.seed;
        c
    };
    let wrinkle = preset_config(Some(Preset::Ce33), common)?;
    let mut rows = Vec::new();
    let mut per_alpha = Vec::new();
    let mut csv = Vec::new();
    for &alpha in alphas {
        let mut energies = Vec::new();
        let mut all_bounded = true;
        for &h in hs {
            let (energy, bounded, detail) = if alpha >= 2.0 {
                let m = tension.material()?.with_thickness(h)?;
                let grid = tension.geometry.build()?;
                let bc = support_spec(&tension, &grid);
                let load = load_spec(&tension, &grid, &m)?.with_alpha(0.0);
                let f = Functional::new(&grid, &m, Weights::rescaled(&m, alpha), &load)?;
                let (u0, w0) = flat_with_noise(&grid, &bc, tension.noise, tension.seed)?;
                let (_, _, r) =
                    minimize_functional(&f, &bc, (&u0, &w0), &tension.solver, Unknowns::All)?;
                if !r.converged && !r.diverging {
                    return Err(CliError::Numerical(format!(
                        "sweep minimization at h = {h} did not converge"
                    )));
                }
                (
                    r.final_energy(),
                    !r.diverging,
                    json!({"iterations": r.iterations, "converged": r.converged}),
                )
            } else {
                let m = wrinkle.material()?.with_thickness(h)?;
                let grid = wrinkle.geometry.build()?;
                let load = load_spec(&wrinkle, &grid, &m)?.with_alpha(alpha);
                let bc = support_spec(&wrinkle, &grid);
                let idx = &wrinkle.family.indices;
                let es = idx
                    .iter()
                    .map(|&n| {
                        let s = family_state(FamilyKind::Wrinkle, n, &grid)?;
                        Ok(family_energy(FamilyKind::Wrinkle, &grid, &s, &m, &load, &bc)?.total)
                    })
                    .collect::<CliResult<Vec<f64>>>()?;
                let xs: Vec<f64> = idx.iter().map(|&n| n as f64).collect();
                let cert = certify_divergence(&xs, &es)?;
                (
                    *es.last().unwrap_or(&f64::NAN),
                    !cert.unbounded,
                    serde_json::to_value(&cert)?,
                )
            };
            all_bounded &= bounded;
            if bounded {
                energies.push(energy);
            }
            let regime = if bounded { "bounded" } else { "diverging" };
            csv.push(vec![
                fmt_f64(h),
                fmt_f64(alpha),
                fmt_f64(energy),
                regime.to_string(),
            ]);
            rows.push(json!({"h": h, "alpha": alpha, "scaled_energy": energy, "regime": regime, "detail": detail}));
        }
        let s = spread(&energies);
        per_alpha.push(json!({
            "alpha": alpha,
            "all_bounded": all_bounded,
            "relative_spread": if energies.len() >= 2 { json!(s) } else { Value::Null },
            "cauchy": all_bounded && energies.len() >= 2 && s < CAUCHY_TOL,
        }));
    }
    write_csv(
        &ctx.file("sweep.csv"),
        "h,alpha,scaled_energy,regime",
        csv.into_iter(),
    )?;
    Ok(Report::done(json!({"rows": rows, "per_alpha": per_alpha})))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out_dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn summary(dir: &Path) -> Value {
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
    }

    fn run_in(dir: &Path, args: &[&str]) -> i32 {
        let mut v = vec!["fvk"];
        v.extend_from_slice(args);
        v.extend_from_slice(&["--out", dir.to_str().unwrap()]);
        run(v)
    }

    #[test]
    fn presets_parse_with_and_without_suffix() {
        assert_eq!(Preset::parse("thm11").unwrap(), Preset::Thm11);
        assert_eq!(Preset::parse("thm11_traction").unwrap(), Preset::Thm11);
        assert_eq!(Preset::parse("REMARK13").unwrap(), Preset::Remark13);
        assert!(Preset::parse("thm99").is_err());
        for p in Preset::ALL {
            assert_eq!(Preset::parse(p.name()).unwrap(), p);
            preset_config(Some(p), &CommonArgs::default())
                .unwrap()
                .material()
                .unwrap();
        }
    }

    #[test]
    fn index_and_number_lists() {
        assert_eq!(parse_indices("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_indices("2,5").unwrap(), vec![2, 5]);
        assert!(parse_indices("a..b").is_err());
        assert_eq!(parse_floats("1e-2, 3").unwrap(), vec![1e-2, 3.0]);
        assert_eq!(parse_grid("16x8").unwrap(), (16, 8));
        assert_eq!(parse_annulus("1,2,16,64").unwrap(), (1.0, 2.0, 16, 64));
    }

    #[test]
    fn floats_round_trip_through_the_summary_format() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        let v = json!({"a": 0.1, "b": [1, 2.5], "c": {"d": null, "e": "x\"y"}});
        let back: Value = serde_json::from_str(&to_json_string(&v)).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn history_is_truncated_evenly() {
        let h: Vec<f64> = (0..2500).map(|i| i as f64).collect();
        let t = truncate_history(&h);
        assert_eq!(t.len(), HISTORY_CAP);
        assert_eq!(t[0], 0.0);
        assert_eq!(*t.last().unwrap(), 2499.0);
    }

    #[test]
    fn config_file_overrides_preset_and_flags_override_file() {
        let dir = out_dir();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"preset": "thm13", "poisson": 0.25, "geometry": {"nx": 8, "ny": 8}}"#,
        )
        .unwrap();
        let common = CommonArgs {
            config: Some(path.clone()),
            grid: Some((10, 12)),
            young: Some(2.0),
            ..CommonArgs::default()
        };
        let c = build_config(&common).unwrap();
        assert_eq!(c.preset, Some(Preset::Thm13));
        assert_eq!(c.poisson, 0.25);
        assert_eq!(c.young, 2.0);
        assert_eq!(c.load, LoadConfig::ThresholdFraction { fraction: 0.9 });
        assert!(matches!(
            c.geometry,
            Geometry::Rectangle { nx: 10, ny: 12, .. }
        ));
        fs::write(&path, r#"{"unknown_field": 1}"#).unwrap();
        assert!(matches!(build_config(&common), Err(CliError::Config(_))));
    }

    #[test]
    fn usage_errors_exit_with_one() {
        let dir = out_dir();
        assert_eq!(run_in(dir.path(), &["family", "--preset", "nope"]), 1);
        assert_eq!(run_in(dir.path(), &["buckle", "--preset", "thm11"]), 1);
        assert_eq!(run_in(dir.path(), &["energy", "--nu", "0.7"]), 1);
        assert_eq!(run_in(dir.path(), &["bogus"]), 1);
    }

    #[test]
    fn gradcheck_passes_and_writes_a_summary() {
        let dir = out_dir();
        assert_eq!(
            run_in(dir.path(), &["gradcheck", "--grid", "6x5", "--trials", "2"]),
            0
        );
        let s = summary(dir.path());
        assert_eq!(s["schema_version"], json!(SCHEMA_VERSION));
        assert_eq!(s["command"], json!("gradcheck"));
        assert!(s["results"]["max_relative_error"].as_f64().unwrap() < 1e-6);
    }

    #[test]
    fn summaries_are_reproducible_apart_from_timing() {
        let (a, b) = (out_dir(), out_dir());
        let args = [
            "energy", "--preset", "thm13", "--grid", "9x9", "--seed", "5",
        ];
        assert_eq!(run_in(a.path(), &args), 0);
        assert_eq!(run_in(b.path(), &args), 0);
        let strip = |d: &Path| {
            let mut v = summary(d);
            v.as_object_mut().unwrap().remove("timing");
            to_json_string(&v)
        };
        assert_eq!(strip(a.path()), strip(b.path()));
        assert_eq!(
            fs::read(a.path().join("fields.csv")).unwrap(),
            fs::read(b.path().join("fields.csv")).unwrap()
        );
        let s = summary(a.path());
        for key in [
            "membrane",
            "bending",
            "load_work_inplane",
            "load_work_transverse",
            "total",
        ] {
            assert!(s["energy"][key].is_f64(), "{key}");
        }
        let csv = fs::read_to_string(a.path().join("fields.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("x1,x2,u1,u2,w"));
        assert_eq!(csv.lines().count(), 82);
    }

    #[test]
    fn family_run_certifies_divergence() {
        let dir = out_dir();
        assert_eq!(
            run_in(
                dir.path(),
                &["family", "--preset", "remark13", "--grid", "11x11", "--n", "1..5"]
            ),
            3
        );
        let s = summary(dir.path());
        assert_eq!(s["exit_code"], json!(3));
        assert_eq!(s["results"]["rows"].as_array().unwrap().len(), 5);
        assert_eq!(s["results"]["certificate"]["unbounded"], json!(true));
        // A positive traction makes the same family increase.
        assert_eq!(
            run_in(
                dir.path(),
                &["family", "--preset", "ce12", "--grid", "21x11", "--n", "1..4", "--f", "0.5"]
            ),
            0
        );
    }

    #[test]
    fn relax_writes_the_envelope() {
        let dir = out_dir();
        assert_eq!(
            run_in(
                dir.path(),
                &[
                    "relax",
                    "--tensor",
                    "-1,0,-1",
                    "--nu",
                    "0",
                    "--resolution",
                    "41"
                ]
            ),
            0
        );
        let s = summary(dir.path());
        assert_eq!(s["results"]["min_value"].as_f64(), Some(1.0));
        let csv = fs::read_to_string(dir.path().join("envelope.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("xi1,xi2,g,envelope"));
        assert_eq!(csv.lines().count(), 41 * 41 + 1);
    }

    #[test]
    fn prestress_classifies_and_writes_csv() {
        let dir = out_dir();
        assert_eq!(
            run_in(
                dir.path(),
                &[
                    "prestress",
                    "--annulus",
                    "1,2,9,16",
                    "--p1",
                    "-0.2",
                    "--p2",
                    "1"
                ]
            ),
            0
        );
        let s = summary(dir.path());
        assert_eq!(s["results"]["wrinkling_admissible"], json!(true));
        assert!(s["results"]["transition_radius"].is_f64());
        let csv = fs::read_to_string(dir.path().join("classify.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("x1,x2,s1,flag"));
    }
}
