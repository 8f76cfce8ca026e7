//! Explicit displacement families.
//!
//! The generators sample closed-form fields onto grids and never solve, so
//! they stay independent of the solver modules they are used to check. Each
//! witness family comes with its domain, constrained boundary part, load and
//! closed-form energy; the oscillating annulus profiles come with a 1D radial
//! or tensor quadrature of their energies that resolves every oscillation.

use crate::energy::{EdgeLoad, LoadSpec, Traction};
use crate::error::{invalid, Result};
use crate::grid::{BcClass, BoundarySpec, Edge, Grid, GridKind, ScalarField, VectorField2};
use crate::material::{coercivity_constants, energy_density, Material, Sym2};
use crate::numeric::{gauss_integrate, gauss_legendre};
use crate::solve::{
    buckling_critical, critical_thickness_compression, critical_thickness_shear, pencil_modes,
    BucklingBc,
};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Linear fits below this coefficient of determination are not called linear.
pub const LINEAR_FIT_MIN_R2: f64 = 0.99;
/// Fraction of the first decrement that every later decrement must keep.
const DECREMENT_RETAINED: f64 = 0.5;

/// Evidence that an energy sequence along a family index is unbounded below.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceCertificate {
    pub indices: Vec<f64>,
    pub energies: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub strictly_decreasing: bool,
    /// Every decrement keeps at least half of the first one, so the decrease
    /// is at least linear in the index.
    pub decrements_persist: bool,
    /// Strictly decreasing with persistent decrements.
    pub unbounded: bool,
    /// Negative slope and `r_squared > LINEAR_FIT_MIN_R2`.
    pub linear: bool,
}

/// Least-squares line through `(index, energy)` plus monotonicity checks.
pub fn certify_divergence(indices: &[f64], energies: &[f64]) -> Result<DivergenceCertificate> {
    if indices.len() != energies.len() || indices.len() < 3 {
        return Err(invalid(
            "divergence certificate needs at least 3 matching (index, energy) pairs",
        ));
    }
    if indices.iter().chain(energies).any(|v| !v.is_finite()) {
        return Err(invalid("divergence certificate needs finite data"));
    }
    let n = indices.len() as f64;
    let mx = indices.iter().sum::<f64>() / n;
    let my = energies.iter().sum::<f64>() / n;
    let sxx: f64 = indices.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = indices
        .iter()
        .zip(energies)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let syy: f64 = energies.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("divergence certificate needs distinct indices"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = indices
        .iter()
        .zip(energies)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 0.0 } else { 1.0 - ss_res / syy };
    let dec: Vec<f64> = energies.windows(2).map(|p| p[0] - p[1]).collect();
    let strictly_decreasing = dec.iter().all(|&d| d > 0.0);
    let decrements_persist =
        strictly_decreasing && dec.iter().all(|&d| d >= DECREMENT_RETAINED * dec[0]);
    Ok(DivergenceCertificate {
        indices: indices.to_vec(),
        energies: energies.to_vec(),
        slope,
        intercept,
        r_squared,
        strictly_decreasing,
        decrements_persist,
        unbounded: strictly_decreasing && decrements_persist && slope < 0.0,
        linear: slope < 0.0 && r_squared > LINEAR_FIT_MIN_R2,
    })
}

fn rectangle_extent(grid: &Grid) -> Result<(f64, f64, f64, f64)> {
    match *grid.kind() {
        GridKind::Rectangle { x0, x1, y0, y1, .. } => Ok((x0, x1, y0, y1)),
        GridKind::Annulus { .. } => Err(invalid("this family lives on a rectangle")),
    }
}

fn annulus_radii(grid: &Grid) -> Result<(f64, f64)> {
    match *grid.kind() {
        GridKind::Annulus { r1, r2, .. } => Ok((r1, r2)),
        GridKind::Rectangle { .. } => Err(invalid("this family lives on an annulus")),
    }
}

fn edge_is(edges: &'static [Edge]) -> impl Fn(f64, f64, Edge) -> bool {
    move |_, _, e| edges.contains(&e)
}

// ---------------------------------------------------------------------------
// Uniform compression with one supported edge.

/// `(-2, 2) x (-1, 1)`.
pub fn compression_domain(nx: usize, ny: usize) -> Result<Grid> {
    Grid::rectangle((-2.0, 2.0), (-1.0, 1.0), nx, ny)
}

/// Transverse displacement vanishes on the left edge only.
pub fn compression_support(grid: &Grid) -> BoundarySpec {
    BoundarySpec::from_predicate(grid, BcClass::A1, edge_is(&[Edge::Left]))
}

/// `u_n = -n s³/6 e1`, `w_n = √n s²/2` with `s` the distance from the left
/// edge. Then `E(u_n) = -½ Dw_n ⊗ Dw_n`, so the stretching vanishes.
pub fn compression_family(n: usize, grid: &Grid) -> Result<(VectorField2, ScalarField)> {
    let (x0, ..) = rectangle_extent(grid)?;
    let nf = n as f64;
    let u = grid.sample_vector(|x, _| [-nf * (x - x0).powi(3) / 6.0, 0.0]);
    let w = grid.sample(|x, _| nf.sqrt() * (x - x0).powi(2) / 2.0);
    Ok((u, w))
}

/// Exact plate energy of [`compression_family`] under normal traction `f`
/// (already scaled, `alpha = 0`) on a rectangle of side lengths `lx`, `ly`:
/// `n (h³ E lx ly / (24 (1-ν²)) + h f ly lx³ / 6)`.
pub fn compression_energy(n: usize, lx: f64, ly: f64, m: &Material, f: f64) -> f64 {
    let (e, nu, h) = (m.young, m.poisson, m.thickness);
    n as f64 * (h.powi(3) * e * lx * ly / (24.0 * (1.0 - nu * nu)) + h * f * ly * lx.powi(3) / 6.0)
}

/// Upper bound `(n h C_ν / 3)(h² E + 64 f / C_ν)` on the canonical domain.
pub fn compression_energy_bound(n: usize, m: &Material, f: f64) -> Result<f64> {
    let (_, cap) = coercivity_constants(m.poisson)?;
    let h = m.thickness;
    Ok(n as f64 * h * cap / 3.0 * (h * h * m.young + 64.0 * f / cap))
}

/// Traction below which the compression family drives the energy to `-∞`:
/// `-C_ν E h² / 64`.
pub fn compression_divergence_threshold(m: &Material) -> Result<f64> {
    let (_, cap) = coercivity_constants(m.poisson)?;
    Ok(-cap * m.young * m.thickness.powi(2) / 64.0)
}

// ---------------------------------------------------------------------------
// Shear band across the rectangle.

/// Even `C^{1,1}` bump on `[-1, 1]` with `ψ' = -1` on `[1/4, 3/4]` and
/// `|ψ''| <= 4`. The curvature bound forces `ψ'' = ∓4` on the transition
/// intervals, so the profile is piecewise quadratic:
/// `3/4 - 2t²` on `[0, 1/4]`, `7/8 - t` on `[1/4, 3/4]`, `2(1-t)²` on `[3/4, 1]`.
pub fn shear_profile(t: f64) -> f64 {
    let s = t.abs();
    if s >= 1.0 {
        0.0
    } else if s <= 0.25 {
        0.75 - 2.0 * s * s
    } else if s <= 0.75 {
        0.875 - s
    } else {
        2.0 * (1.0 - s).powi(2)
    }
}

pub fn shear_profile_slope(t: f64) -> f64 {
    let s = t.abs();
    let d = if s >= 1.0 {
        0.0
    } else if s <= 0.25 {
        -4.0 * s
    } else if s <= 0.75 {
        -1.0
    } else {
        -4.0 * (1.0 - s)
    };
    d * t.signum()
}

pub fn shear_profile_curvature(t: f64) -> f64 {
    let s = t.abs();
    if s >= 1.0 {
        0.0
    } else if !(0.25..=0.75).contains(&s) {
        -4.0 * if s < 0.25 { 1.0 } else { -1.0 }
    } else {
        0.0
    }
}

/// `½ ∫_{-1}^t ψ'²`; reaches `2/3` at `t = 1`.
pub fn shear_potential(t: f64) -> f64 {
    let s = t.abs().min(1.0);
    let half = if s <= 0.25 {
        16.0 * s.powi(3) / 3.0
    } else if s <= 0.75 {
        1.0 / 12.0 + (s - 0.25)
    } else {
        2.0 / 3.0 - 16.0 * (1.0 - s).powi(3) / 3.0
    };
    0.5 * (2.0 / 3.0 + t.signum() * half)
}

/// `(-2, 2) x (-1, 1)`.
pub fn shear_domain(nx: usize, ny: usize) -> Result<Grid> {
    Grid::rectangle((-2.0, 2.0), (-1.0, 1.0), nx, ny)
}

/// Supported where the band `|x1 - x2| < 1` does not reach the boundary.
pub fn shear_support(grid: &Grid) -> BoundarySpec {
    BoundarySpec::from_predicate(grid, BcClass::A1, |x, y, _| (x - y).abs() >= 1.0 - 1e-12)
}

/// Tangential traction `+γ` on the vertical edges and `-γ` on the horizontal
/// ones, counterclockwise tangent.
pub fn shear_load(gamma: f64) -> LoadSpec {
    let e = |edge, t| EdgeLoad {
        edge,
        normal: 0.0,
        tangential: t,
    };
    LoadSpec::traction(Traction::PerEdge(vec![
        e(Edge::Left, gamma),
        e(Edge::Right, gamma),
        e(Edge::Bottom, -gamma),
        e(Edge::Top, -gamma),
    ]))
}

/// `u_n = n (-F, F)(x1 - x2)`, `w_n = √n ψ(x1 - x2)` with `F` the
/// [`shear_potential`]; the stretching vanishes identically.
pub fn shear_family(n: usize, grid: &Grid) -> Result<(VectorField2, ScalarField)> {
    rectangle_extent(grid)?;
    let nf = n as f64;
    let u = grid.sample_vector(|x, y| {
        let f = nf * shear_potential(x - y);
        [-f, f]
    });
    let w = grid.sample(|x, y| nf.sqrt() * shear_profile(x - y));
    Ok((u, w))
}

/// Exact energy of [`shear_family`] on the canonical rectangle:
/// `n ((16/3) E h³ / (1-ν²) - (8/3) γ h)`.
pub fn shear_energy(n: usize, m: &Material, gamma: f64) -> f64 {
    let (e, nu, h) = (m.young, m.poisson, m.thickness);
    n as f64 * (16.0 / 3.0 * e * h.powi(3) / (1.0 - nu * nu) - 8.0 / 3.0 * gamma * h)
}

/// Upper bound `3 C_ν E h³ n - h n γ / 2`.
pub fn shear_energy_bound(n: usize, m: &Material, gamma: f64) -> Result<f64> {
    let (_, cap) = coercivity_constants(m.poisson)?;
    let h = m.thickness;
    Ok(n as f64 * (3.0 * cap * m.young * h.powi(3) - h * gamma / 2.0))
}

// ---------------------------------------------------------------------------
// Unit square supported on one edge under uniform compression.

/// `(0, 1)²`.
pub fn edge_supported_domain(nx: usize, ny: usize) -> Result<Grid> {
    Grid::rectangle((0.0, 1.0), (0.0, 1.0), nx, ny)
}

pub fn edge_supported_support(grid: &Grid) -> BoundarySpec {
    compression_support(grid)
}

/// Normal traction `-λ² h²`.
pub fn edge_supported_load(lambda: f64, m: &Material) -> LoadSpec {
    LoadSpec::traction(Traction::NormalPressure(
        -lambda * lambda * m.thickness.powi(2),
    ))
}

/// `u = -(s + k)³/6 e1`, `w_k = ((s + k)² - k²)/2` with `s` the distance
/// from the supported edge; `w_k` vanishes there for every `k`.
pub fn edge_supported_family(k: usize, grid: &Grid) -> Result<(VectorField2, ScalarField)> {
    let (x0, ..) = rectangle_extent(grid)?;
    let kf = k as f64;
    let u = grid.sample_vector(|x, _| [-(x - x0 + kf).powi(3) / 6.0, 0.0]);
    let w = grid.sample(|x, _| ((x - x0 + kf).powi(2) - kf * kf) / 2.0);
    Ok((u, w))
}

/// Exact energy on the unit square:
/// `h³ E / (24 (1-ν²)) - λ² h³ (3k² + 3k + 1) / 6`, quadratic in `k`.
pub fn edge_supported_energy(k: usize, m: &Material, lambda: f64) -> f64 {
    let (e, nu, h) = (m.young, m.poisson, m.thickness);
    let kf = k as f64;
    h.powi(3) * e / (24.0 * (1.0 - nu * nu))
        - lambda * lambda * h.powi(3) * (3.0 * kf * kf + 3.0 * kf + 1.0) / 6.0
}

// ---------------------------------------------------------------------------
// Fine wrinkles under uniaxial compression of a clamped rectangle.

/// 1-periodic sawtooth with `φ(y) = ½ (1 - |1 - 2y|)` on `(0, 1)`.
pub fn sawtooth(y: f64) -> f64 {
    let s = y.rem_euclid(1.0);
    0.5 * (1.0 - (1.0 - 2.0 * s).abs())
}

/// Right derivative of [`sawtooth`], `±1`.
pub fn sawtooth_slope(y: f64) -> f64 {
    if y.rem_euclid(1.0) < 0.5 {
        1.0
    } else {
        -1.0
    }
}

/// Ramp rising over `[0, 1/n]`, equal to 1 on `[1/n, a - 1/n]`, falling over `[a - 1/n, a]`.
pub fn edge_ramp(n: usize, a: f64, x: f64) -> f64 {
    let nf = n as f64;
    (nf * x).min(1.0).min(nf * (a - x)).max(0.0)
}

fn edge_ramp_slope(n: usize, a: f64, x: f64) -> f64 {
    let nf = n as f64;
    if x < 1.0 / nf {
        nf
    } else if x > a - 1.0 / nf {
        -nf
    } else {
        0.0
    }
}

/// Rectangle width `2 E C_ν`, twice the smallest width that diverges.
pub fn wrinkle_width(m: &Material) -> Result<f64> {
    let (_, cap) = coercivity_constants(m.poisson)?;
    Ok(2.0 * m.young * cap)
}

/// `(0, a) x (0, 1)`.
pub fn wrinkle_domain(a: f64, nx: usize, ny: usize) -> Result<Grid> {
    Grid::rectangle((0.0, a), (0.0, 1.0), nx, ny)
}

/// Transverse displacement vanishes on the whole boundary. The profile is
/// only Lipschitz, so only its trace is constrained.
pub fn wrinkle_support(grid: &Grid) -> BoundarySpec {
    BoundarySpec::whole_boundary(grid, BcClass::A1)
}

/// Unit compressive normal traction on the bottom and top edges.
pub fn wrinkle_load() -> LoadSpec {
    let e = |edge| EdgeLoad {
        edge,
        normal: -1.0,
        tangential: 0.0,
    };
    LoadSpec::traction(Traction::PerEdge(vec![e(Edge::Bottom), e(Edge::Top)]))
}

/// `v_n = (0, -n y / 2)`, `ζ_n = n^{-1/2} φ(n y) ψ_n(x)` with the sawtooth `φ`
/// and edge ramp `ψ_n`. Coordinates are relative to the lower left corner.
pub fn wrinkle_family(n: usize, grid: &Grid) -> Result<(VectorField2, ScalarField)> {
    if n == 0 {
        return Err(invalid("wrinkle index must be at least 1"));
    }
    let (x0, x1, y0, _) = rectangle_extent(grid)?;
    let (a, nf) = (x1 - x0, n as f64);
    let v = grid.sample_vector(|_, y| [0.0, -nf * (y - y0) / 2.0]);
    let z = grid.sample(|x, y| sawtooth(nf * (y - y0)) * edge_ramp(n, a, x - x0) / nf.sqrt());
    Ok((v, z))
}

/// Stretching of [`wrinkle_family`] at `(x, y)` from exact derivatives.
fn wrinkle_stretching(n: usize, a: f64, x: f64, y: f64) -> Sym2 {
    let nf = n as f64;
    let (p, dp) = (sawtooth(nf * y), sawtooth_slope(nf * y));
    let (r, dr) = (edge_ramp(n, a, x), edge_ramp_slope(n, a, x));
    Sym2::new(
        dr * dr * p * p / (2.0 * nf),
        0.5 * r * dr * p * dp,
        0.5 * nf * (r * r * dp * dp - 1.0),
    )
}

/// Slope `c` of the exact membrane-minus-load energy `Λ(v_n, ζ_n) = c n`,
/// from Gauss quadrature of the stretching over the two ramps.
pub fn wrinkle_energy_slope(m: &Material, a: f64) -> f64 {
    let rule = gauss_legendre(12);
    // Per unit n: the ramps have width 1/n and the stretching scales with n,
    // so one ramp contributes ∫∫ J over (s, t) in (0,1)².
    let n = 1usize;
    let ramp = |lo: f64, hi: f64, x_of: &dyn Fn(f64) -> f64| {
        gauss_integrate(&rule, lo, hi, |s| {
            let x = x_of(s);
            gauss_integrate(&rule, 0.0, 0.5, |t| {
                energy_density(&wrinkle_stretching(n, a, x, t), m)
            }) + gauss_integrate(&rule, 0.5, 1.0, |t| {
                energy_density(&wrinkle_stretching(n, a, x, t), m)
            })
        })
    };
    let left = ramp(0.0, 1.0, &|s| s);
    let right = ramp(0.0, 1.0, &|s| a - s);
    left + right - a / 2.0
}

/// Upper bound `n E C_ν / 2 - n a / 2`.
pub fn wrinkle_energy_bound(n: usize, m: &Material, a: f64) -> Result<f64> {
    let (_, cap) = coercivity_constants(m.poisson)?;
    Ok(n as f64 * (m.young * cap - a) / 2.0)
}

// ---------------------------------------------------------------------------
// Buckled modes.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuckledKind {
    /// Rectangle clamped on its horizontal edges under uniaxial compression;
    /// the mode depends on `x2` only.
    Compression,
    /// Rectangle `(-2, 2) x (-1, 1)` under shear; the mode is a band
    /// `ψ(x1 - x2)` clamped at `|x1 - x2| = 1`.
    Shear,
}

/// A buckled critical point and the data that make it critical.
#[derive(Debug, Clone, PartialEq)]
pub struct BuckledMode {
    pub kind: BuckledKind,
    pub index: usize,
    /// Pencil eigenvalue of the 1D profile.
    pub k: f64,
    /// Thickness at which the mode is critical for the limit energy.
    pub thickness: f64,
    pub w: ScalarField,
    /// In-plane minimizer for `w = 0`.
    pub u_star: VectorField2,
    pub load: LoadSpec,
    pub bc: BoundarySpec,
}

/// Nodes used for the shear band profile before interpolation onto the grid.
const BAND_NODES: usize = 401;

/// `index`-th buckled mode (1-based) embedded on `grid` with load magnitude
/// `gamma`; the material thickness is ignored and replaced by the critical one.
///
/// The compression profile comes from the pencil assembled with the grid's
/// own operators along `x2`, so the discrete limit energy vanishes at the
/// returned thickness up to rounding. The width of the rectangle cancels from
/// the critical thickness. The shear profile comes from the clamped pencil on
/// `(-1, 1)` and is interpolated linearly.
pub fn buckled_mode(
    kind: BuckledKind,
    index: usize,
    grid: &Grid,
    m: &Material,
    gamma: f64,
) -> Result<BuckledMode> {
    if index == 0 {
        return Err(invalid("mode index is 1-based"));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(invalid(format!(
            "load magnitude must be positive, got {gamma}"
        )));
    }
    let (x0, x1, y0, y1) = rectangle_extent(grid)?;
    let (e, nu) = (m.young, m.poisson);
    match kind {
        BuckledKind::Compression => {
            let (_, ny) = grid.shape();
            let modes = pencil_modes((y0, y1), ny, index)?;
            let mode = &modes[index - 1];
            let thickness = critical_thickness_compression(m, gamma, 1.0, mode.k)?;
            let (nx, _) = grid.shape();
            let w = ScalarField((0..grid.node_count()).map(|k| mode.shape[k / nx]).collect());
            let u_star = grid.sample_vector(|x, y| [gamma / e * nu * x, -gamma / e * y]);
            let load = LoadSpec::traction(Traction::PerEdge(
                [Edge::Bottom, Edge::Top]
                    .into_iter()
                    .map(|edge| EdgeLoad {
                        edge,
                        normal: -gamma,
                        tangential: 0.0,
                    })
                    .collect(),
            ));
            let bc = BoundarySpec::from_predicate(
                grid,
                BcClass::A0,
                edge_is(&[Edge::Bottom, Edge::Top]),
            );
            Ok(BuckledMode {
                kind,
                index,
                k: mode.k,
                thickness,
                w,
                u_star,
                load,
                bc,
            })
        }
        BuckledKind::Shear => {
            if (x0, x1, y0, y1) != (-2.0, 2.0, -1.0, 1.0) {
                return Err(invalid("the shear mode lives on (-2, 2) x (-1, 1)"));
            }
            let modes = buckling_critical(BucklingBc::Clamped, (-1.0, 1.0), BAND_NODES, index)?;
            let mode = &modes[index - 1];
            let thickness = critical_thickness_shear(m, gamma, mode.k)?;
            let profile = |t: f64| interpolate(&mode.x, &mode.shape, t);
            let w = grid.sample(|x, y| profile(x - y));
            let s = gamma * (1.0 + nu) / e;
            let u_star = grid.sample_vector(|x, y| [s * y, s * x]);
            let bc = BoundarySpec::from_predicate(grid, BcClass::A0, |x, _, edge| match edge {
                Edge::Left | Edge::Right => true,
                Edge::Top => x <= 0.0,
                Edge::Bottom => x >= 0.0,
                _ => false,
            });
            // The band touches two corners, where the clamp also fixes nodes inside the strip.
            let w = grid.apply_bc(&w, &bc)?;
            Ok(BuckledMode {
                kind,
                index,
                k: mode.k,
                thickness,
                w,
                u_star,
                load: shear_load(gamma),
                bc,
            })
        }
    }
}

/// Piecewise linear interpolation on sorted nodes; zero outside.
fn interpolate(x: &[f64], v: &[f64], t: f64) -> f64 {
    let (a, b) = (x[0], x[x.len() - 1]);
    if !(t > a && t < b) {
        return 0.0;
    }
    let d = (b - a) / (x.len() - 1) as f64;
    let i = (((t - a) / d) as usize).min(x.len() - 2);
    let s = (t - x[i]) / d;
    v[i] * (1.0 - s) + v[i + 1] * s
}

// ---------------------------------------------------------------------------
// Mollified tents for the oscillating annulus profiles.

/// Standard bump `exp(-1/(1-u²))` on `(-1, 1)`, normalized, with its first
/// and second antiderivatives tabulated on a uniform grid and refined by
/// Gauss quadrature inside a cell.
struct Bump {
    norm: f64,
    cells: usize,
    cdf: Vec<f64>,
    second: Vec<f64>,
    rule: (Vec<f64>, Vec<f64>),
}

const BUMP_CELLS: usize = 512;

fn raw_bump(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (-1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

fn bump() -> &'static Bump {
    static TABLE: OnceLock<Bump> = OnceLock::new();
    TABLE.get_or_init(|| {
        let rule = gauss_legendre(16);
        let d = 2.0 / BUMP_CELLS as f64;
        let node = |i: usize| -1.0 + i as f64 * d;
        let mass: Vec<f64> = (0..BUMP_CELLS)
            .map(|i| gauss_integrate(&rule, node(i), node(i + 1), raw_bump))
            .collect();
        let norm: f64 = crate::numeric::pairwise_sum(&mass);
        let (mut cdf, mut second) = (vec![0.0; BUMP_CELLS + 1], vec![0.0; BUMP_CELLS + 1]);
        for i in 0..BUMP_CELLS {
            let hi = node(i + 1);
            let moment = gauss_integrate(&rule, node(i), hi, |s| (hi - s) * raw_bump(s)) / norm;
            cdf[i + 1] = cdf[i] + mass[i] / norm;
            second[i + 1] = second[i] + d * cdf[i] + moment;
        }
        Bump {
            norm,
            cells: BUMP_CELLS,
            cdf,
            second,
            rule,
        }
    })
}

impl Bump {
    fn density(&self, u: f64) -> f64 {
        raw_bump(u) / self.norm
    }

    fn cell(&self, u: f64) -> (usize, f64) {
        let d = 2.0 / self.cells as f64;
        let i = (((u + 1.0) / d) as usize).min(self.cells - 1);
        (i, -1.0 + i as f64 * d)
    }

    /// `∫_{-1}^u ρ`.
    fn cdf(&self, u: f64) -> f64 {
        if u <= -1.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let (i, lo) = self.cell(u);
        self.cdf[i] + gauss_integrate(&self.rule, lo, u, |s| self.density(s))
    }

    /// `∫_{-1}^u ∫_{-1}^s ρ`.
    fn second(&self, u: f64) -> f64 {
        if u <= -1.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return u;
        }
        let (i, lo) = self.cell(u);
        self.second[i]
            + (u - lo) * self.cdf[i]
            + gauss_integrate(&self.rule, lo, u, |s| (u - s) * self.density(s))
    }
}

/// Periodic tent `max(0, min(s - σ, P - σ - s))` in the local coordinate
/// `s = (t - origin) mod P`, convolved with the bump scaled to `[-σ, σ]`.
/// Away from the three kinks the convolution reproduces the tent exactly, so
/// only kink corrections are added.
#[derive(Debug, Clone, Copy, PartialEq)]
struct MollifiedTent {
    origin: f64,
    period: f64,
    sigma: f64,
}

impl MollifiedTent {
    fn new(origin: f64, period: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < period / 4.0) {
            return Err(invalid(format!(
                "mollifier half-width must lie in (0, period/4) = (0, {}), got {sigma}",
                period / 4.0
            )));
        }
        Ok(Self {
            origin,
            period,
            sigma,
        })
    }

    /// `(position, slope jump)` in local coordinates.
    fn kinks(&self) -> [(f64, f64); 3] {
        [
            (self.sigma, 1.0),
            (0.5 * self.period, -2.0),
            (self.period - self.sigma, 1.0),
        ]
    }

    /// Sorted breakpoints of one period where the smooth pieces meet. The kink
    /// windows overlap once `σ > P/6`, so the order is not fixed.
    fn breakpoints(&self) -> [f64; 6] {
        let (p, s) = (self.period, self.sigma);
        let mut b = [0.0, 2.0 * s, 0.5 * p - s, 0.5 * p + s, p - 2.0 * s, p];
        b.sort_by(f64::total_cmp);
        b
    }

    /// Value, first and second derivative.
    fn eval(&self, t: f64) -> [f64; 3] {
        let (p, sg) = (self.period, self.sigma);
        let s = (t - self.origin).rem_euclid(p);
        // Right-sided slope at the kinks, matching the Heaviside convention below.
        let (mut v, mut d1) = if s < sg || s >= p - sg {
            (0.0, 0.0)
        } else if s < 0.5 * p {
            (s - sg, 1.0)
        } else {
            (p - sg - s, -1.0)
        };
        let mut d2 = 0.0;
        let b = bump();
        for (tk, c) in self.kinks() {
            let u = (s - tk) / sg;
            if u.abs() < 1.0 {
                v += c * sg * (b.second(u) - u.max(0.0));
                d1 += c * (b.cdf(u) - if u >= 0.0 { 1.0 } else { 0.0 });
                d2 += c * b.density(u) / sg;
            }
        }
        [v, d1, d2]
    }
}

// ---------------------------------------------------------------------------
// Oscillation scalings.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OscillationKind {
    Radial,
    Tangential,
}

/// Exponent of the mollifier width for radial oscillations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    /// `(2 - α)/6`: with `β⁻¹ ~ h^{(2-α)/3}` this balances the bending cost
    /// `h^{2-α} β² / σ` against the mollified measure `σ`.
    #[default]
    Balanced,
    /// `(5/3)(2 - α)`.
    Product,
    /// `5 / (3 (2 - α))`, defined for `α < 2`.
    Quotient,
}

/// Exponents `e` of `h^e` for the period `β⁻¹`, mollifier width `σ` and,
/// for tangential oscillations, the cutoff ramp `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    pub beta_inv: f64,
    pub sigma: f64,
    pub delta: Option<f64>,
}

/// Radial: `β⁻¹ ~ h^{(2-α)/3}`, `σ` per `rule`. Tangential: `β⁻¹ ~ h^{1-α/2}`,
/// `δ ~ β^{-1/2}`, `σ ~ h^{1-α/2} β^{1/2}`; `rule` is ignored.
pub fn optimal_scaling(
    kind: OscillationKind,
    alpha: f64,
    rule: SigmaRule,
) -> Result<ScalingExponents> {
    if !(alpha.is_finite() && (0.0..=2.0).contains(&alpha)) {
        return Err(invalid(format!(
            "oscillation scalings need alpha in [0, 2], got {alpha}"
        )));
    }
    let g = 2.0 - alpha;
    Ok(match kind {
        OscillationKind::Radial => {
            let sigma = match rule {
                SigmaRule::Balanced => g / 6.0,
                SigmaRule::Product => 5.0 / 3.0 * g,
                SigmaRule::Quotient => {
                    if g <= 0.0 {
                        return Err(invalid("the quotient mollifier exponent needs alpha < 2"));
                    }
                    5.0 / (3.0 * g)
                }
            };
            ScalingExponents {
                beta_inv: g / 3.0,
                sigma,
                delta: None,
            }
        }
        OscillationKind::Tangential => {
            let b = 1.0 - alpha / 2.0;
            ScalingExponents {
                beta_inv: b,
                sigma: b / 2.0,
                delta: Some(b / 2.0),
            }
        }
    })
}

fn floor_index(beta_h: f64) -> Result<u64> {
    if !(beta_h.is_finite() && beta_h >= 1.0) {
        return Err(invalid(format!(
            "oscillation frequency must be >= 1, got {beta_h}"
        )));
    }
    Ok(beta_h.floor() as u64)
}

/// `J(diag(x, y))`.
fn density_diag(x: f64, y: f64, m: &Material) -> f64 {
    let nu = m.poisson;
    m.young / (2.0 * (1.0 - nu * nu)) * (x * x + y * y + 2.0 * nu * x * y)
}

// ---------------------------------------------------------------------------
// Radial oscillations of a compressed annulus.

/// Which boundary pressure is the more compressive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PressureOrder {
    /// `p1 <= p2 < 0`, hence `b >= 0`; squared amplitude `2(1-ν) b/r² - 2a(1+ν)`.
    InnerLower,
    /// `p2 <= p1 < 0`, hence `b <= 0`; squared amplitude `2(ν-1) b/r² - 2a(1+ν)`.
    OuterLower,
}

/// Radial profile `ζ(r) = ⌊β⌋⁻¹ A(r) ψ*(R1 + (r - R1)⌊β⌋)` with the mollified
/// tent `ψ*` of period `R2 - R1` and amplitude `A` from the prestress `(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialOscillation {
    r1: f64,
    r2: f64,
    a: f64,
    b: f64,
    nu: f64,
    beta: u64,
    tent: MollifiedTent,
    /// Squared amplitude `c1 / r² + c0`.
    c1: f64,
    c0: f64,
}

/// Energy of a radial profile, already divided by `h^{2α+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialEnergy {
    pub bending: f64,
    pub membrane: f64,
    pub load_work: f64,
    pub total: f64,
}

impl RadialOscillation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        r1: f64,
        r2: f64,
        a: f64,
        b: f64,
        order: PressureOrder,
        nu: f64,
        beta_h: f64,
        sigma_h: f64,
    ) -> Result<Self> {
        if !(r1 > 0.0 && r2 > r1 && r2.is_finite()) {
            return Err(invalid(format!(
                "annulus radii must satisfy 0 < R1 < R2, got ({r1}, {r2})"
            )));
        }
        if !(a.is_finite() && b.is_finite()) {
            return Err(invalid("prestress coefficients must be finite"));
        }
        let (c1, c0) = match order {
            PressureOrder::InnerLower if b >= 0.0 => (2.0 * (1.0 - nu) * b, -2.0 * a * (1.0 + nu)),
            PressureOrder::OuterLower if b <= 0.0 => (2.0 * (nu - 1.0) * b, -2.0 * a * (1.0 + nu)),
            _ => {
                return Err(invalid(format!(
                    "prestress b = {b} has the wrong sign for {order:?}"
                )))
            }
        };
        for r in [r1, r2] {
            let q = c1 / (r * r) + c0;
            if !(q > 0.0) {
                return Err(invalid(format!(
                    "squared amplitude {q} at r = {r} is not positive"
                )));
            }
        }
        Ok(Self {
            r1,
            r2,
            a,
            b,
            nu,
            beta: floor_index(beta_h)?,
            tent: MollifiedTent::new(r1, r2 - r1, sigma_h)?,
            c1,
            c0,
        })
    }

    /// `β_h = h^{-e_β}`, `σ_h = h^{e_σ}` from [`optimal_scaling`].
    #[allow(clippy::too_many_arguments)]
    pub fn with_scaling(
        r1: f64,
        r2: f64,
        a: f64,
        b: f64,
        order: PressureOrder,
        nu: f64,
        h: f64,
        alpha: f64,
        rule: SigmaRule,
    ) -> Result<Self> {
        let ex = optimal_scaling(OscillationKind::Radial, alpha, rule)?;
        Self::new(
            r1,
            r2,
            a,
            b,
            order,
            nu,
            h.powf(-ex.beta_inv),
            h.powf(ex.sigma),
        )
    }

    pub fn beta(&self) -> u64 {
        self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.tent.sigma
    }

    pub fn amplitude(&self, r: f64) -> f64 {
        (self.c1 / (r * r) + self.c0).sqrt()
    }

    /// `(ζ, ζ', ζ'')` at radius `r`.
    pub fn profile(&self, r: f64) -> [f64; 3] {
        let bf = self.beta as f64;
        let amp = self.amplitude(r);
        let d_amp = -self.c1 / (r.powi(3) * amp);
        let dd_amp = (3.0 * self.c1 / r.powi(4) - d_amp * d_amp) / amp;
        let [p, dp, ddp] = self.tent.eval(self.r1 + (r - self.r1) * bf);
        [
            amp * p / bf,
            d_amp * p / bf + amp * dp,
            dd_amp * p / bf + 2.0 * d_amp * dp + amp * bf * ddp,
        ]
    }

    /// Samples `ζ` on an annulus grid with matching radii.
    pub fn sample(&self, grid: &Grid) -> Result<ScalarField> {
        let (r1, r2) = annulus_radii(grid)?;
        if (r1 - self.r1).abs() > 1e-12 || (r2 - self.r2).abs() > 1e-12 {
            return Err(invalid("grid radii differ from the profile's"));
        }
        Ok(grid.sample(|x, y| self.profile(x.hypot(y).clamp(self.r1, self.r2))[0]))
    }

    /// `(h^{2-α}/12) ∫ J(D²ζ) + ∫ J(E(v) + ½ Dζ⊗Dζ) - load_work` by Gauss
    /// quadrature between consecutive kink windows of every period. In polar
    /// frame `D²ζ = diag(ζ'', ζ'/r)` and the stretching is
    /// `diag(a - b/r² + ½ζ'², a + b/r²)`.
    pub fn scaled_energy(&self, m: &Material, alpha: f64, load_work: f64) -> Result<RadialEnergy> {
        m.validate()?;
        if (m.poisson - self.nu).abs() > 1e-15 {
            return Err(invalid("material Poisson ratio differs from the profile's"));
        }
        let wb = m.thickness.powf(2.0 - alpha) / 12.0;
        let rule = gauss_legendre(16);
        let bf = self.beta as f64;
        let bp = self.tent.breakpoints();
        let (mut bending, mut membrane) = (Vec::new(), Vec::new());
        for k in 0..self.beta {
            for w in bp.windows(2) {
                let lo = self.r1 + (k as f64 * self.tent.period + w[0]) / bf;
                let hi = self.r1 + (k as f64 * self.tent.period + w[1]) / bf;
                if hi <= lo {
                    continue;
                }
                bending.push(gauss_integrate(&rule, lo, hi, |r| {
                    let [_, d1, d2] = self.profile(r);
                    r * density_diag(d2, d1 / r, m)
                }));
                membrane.push(gauss_integrate(&rule, lo, hi, |r| {
                    let [_, d1, _] = self.profile(r);
                    let q = self.b / (r * r);
                    r * density_diag(self.a - q + 0.5 * d1 * d1, self.a + q, m)
                }));
            }
        }
        let bending = 2.0 * PI * wb * crate::numeric::pairwise_sum(&bending);
        let membrane = 2.0 * PI * crate::numeric::pairwise_sum(&membrane);
        Ok(RadialEnergy {
            bending,
            membrane,
            load_work,
            total: bending + membrane - load_work,
        })
    }
}

// ---------------------------------------------------------------------------
// Tangential oscillations of an annulus in hoop compression.

/// `ζ(r, θ) = A ⌊β⌋⁻¹ φ*(⌊β⌋θ) χ(r)` with `A = √(-2b(1-ν))`, the 2π-periodic
/// mollified tent `φ*` and the cutoff `χ` rising linearly over `[R1, R1 + δ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentialOscillation {
    r1: f64,
    r2: f64,
    b: f64,
    nu: f64,
    beta: u64,
    delta: f64,
    tent: MollifiedTent,
}

impl TangentialOscillation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        r1: f64,
        r2: f64,
        b: f64,
        nu: f64,
        beta_h: f64,
        sigma_h: f64,
        delta_h: f64,
    ) -> Result<Self> {
        if !(r1 > 0.0 && r2 > r1 && r2.is_finite()) {
            return Err(invalid(format!(
                "annulus radii must satisfy 0 < R1 < R2, got ({r1}, {r2})"
            )));
        }
        if !(b < 0.0) {
            return Err(invalid(format!("hoop compression needs b < 0, got {b}")));
        }
        if !(delta_h > 0.0 && delta_h < r2 - r1) {
            return Err(invalid(format!(
                "cutoff width must lie in (0, R2 - R1), got {delta_h}"
            )));
        }
        Ok(Self {
            r1,
            r2,
            b,
            nu,
            beta: floor_index(beta_h)?,
            delta: delta_h,
            tent: MollifiedTent::new(0.0, 2.0 * PI, sigma_h)?,
        })
    }

    pub fn with_scaling(r1: f64, r2: f64, b: f64, nu: f64, h: f64, alpha: f64) -> Result<Self> {
        let ex = optimal_scaling(OscillationKind::Tangential, alpha, SigmaRule::default())?;
        let delta = ex.delta.unwrap_or(ex.beta_inv / 2.0);
        Self::new(
            r1,
            r2,
            b,
            nu,
            h.powf(-ex.beta_inv),
            h.powf(ex.sigma),
            h.powf(delta),
        )
    }

    pub fn beta(&self) -> u64 {
        self.beta
    }

    pub fn amplitude(&self) -> f64 {
        (-2.0 * self.b * (1.0 - self.nu)).sqrt()
    }

    fn cutoff(&self, r: f64) -> (f64, f64) {
        if r < self.r1 + self.delta {
            ((r - self.r1) / self.delta, 1.0 / self.delta)
        } else {
            (1.0, 0.0)
        }
    }

    pub fn value(&self, r: f64, theta: f64) -> f64 {
        let bf = self.beta as f64;
        self.amplitude() * self.tent.eval(bf * theta)[0] / bf * self.cutoff(r).0
    }

    /// `(∂_r ζ, r⁻¹ ∂_θ ζ)` at the angle variable `t = ⌊β⌋θ`.
    fn gradient_at(&self, r: f64, t: f64) -> [f64; 2] {
        let bf = self.beta as f64;
        let [p, dp, _] = self.tent.eval(t);
        let (c, dc) = self.cutoff(r);
        let amp = self.amplitude();
        [amp * p / bf * dc, amp * dp * c / r]
    }

    pub fn gradient_polar(&self, r: f64, theta: f64) -> [f64; 2] {
        self.gradient_at(r, self.beta as f64 * theta)
    }

    /// Samples `ζ`; it vanishes on the inner circle.
    pub fn sample(&self, grid: &Grid) -> Result<ScalarField> {
        let (r1, r2) = annulus_radii(grid)?;
        if (r1 - self.r1).abs() > 1e-12 || (r2 - self.r2).abs() > 1e-12 {
            return Err(invalid("grid radii differ from the profile's"));
        }
        Ok(grid.sample(|x, y| self.value(x.hypot(y).clamp(self.r1, self.r2), y.atan2(x))))
    }

    /// `|2E(v) + ξ⊗ξ|² + ν/(1-ν) tr²(2E(v) + ξ⊗ξ)` with `a = 0`, so
    /// `2E(v) = diag(-2b/r², 2b/r²)` in the polar frame.
    fn g_term(&self, r: f64, xi: [f64; 2]) -> f64 {
        let q = 2.0 * self.b / (r * r);
        let a = Sym2::new(-q + xi[0] * xi[0], xi[0] * xi[1], q + xi[1] * xi[1]);
        a.norm_sq() + self.nu / (1.0 - self.nu) * a.trace().powi(2)
    }

    /// `g_term` at polar angle `theta`.
    pub fn g_term_at(&self, r: f64, theta: f64) -> f64 {
        self.g_term(r, self.gradient_polar(r, theta))
    }

    /// `∫_Ω g_term` by tensor Gauss quadrature over one angular period,
    /// which equals the full angular integral because `⌊β⌋` is an integer.
    pub fn g_integral(&self) -> f64 {
        let rule = gauss_legendre(16);
        let rb = [self.r1, self.r1 + self.delta, self.r2];
        let tb = self.tent.breakpoints();
        let mut parts = Vec::new();
        for rw in rb.windows(2) {
            for tw in tb.windows(2) {
                if tw[1] <= tw[0] {
                    continue;
                }
                parts.push(gauss_integrate(&rule, rw[0], rw[1], |r| {
                    r * gauss_integrate(&rule, tw[0], tw[1], |t| {
                        self.g_term(r, self.gradient_at(r, t))
                    })
                }));
            }
        }
        crate::numeric::pairwise_sum(&parts)
    }

    /// `∫_Ω 4(1+ν) b² |x|⁻⁴`, the pointwise minimum of the g-term integrated.
    pub fn g_limit(&self) -> f64 {
        4.0 * PI * (1.0 + self.nu) * self.b * self.b * (self.r1.powi(-2) - self.r2.powi(-2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{total_energy, Functional, Weights};

    fn mat(h: f64) -> Material {
        Material::new(1.0, 0.3, h).unwrap()
    }

    fn stretch_max(grid: &Grid, u: &VectorField2, w: &ScalarField) -> f64 {
        grid.stretching(u, w).unwrap().max_abs()
    }

    #[test]
    fn compression_family_matches_formulas_at_nodes() {
        let g = compression_domain(9, 5).unwrap();
        let (u, w) = compression_family(1, &g).unwrap();
        // Hand-picked nodes: (x, y) -> (u1, phi) with s = 2 + x.
        for (x, y) in [
            (0.0, 0.0),
            (-2.0, -1.0),
            (2.0, 1.0),
            (-1.0, 0.5),
            (1.5, -0.5),
        ] {
            let k = (0..g.node_count())
                .find(|&k| {
                    let [a, b] = g.coord(k);
                    (a - x).abs() < 1e-12 && (b - y).abs() < 1e-12
                })
                .unwrap();
            let s: f64 = 2.0 + x;
            assert!((u.x[k] + s.powi(3) / 6.0).abs() < 1e-12);
            assert_eq!(u.y[k], 0.0);
            assert!((w.0[k] - s * s / 2.0).abs() < 1e-12);
        }
        let k0 = g.index(4, 2);
        assert!((u.x[k0] + 4.0 / 3.0).abs() < 1e-12 && (w.0[k0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn compression_family_has_second_order_stretching() {
        let mut prev = f64::INFINITY;
        for nx in [17, 33, 65] {
            let g = compression_domain(nx, 5).unwrap();
            let d = 4.0 / (nx - 1) as f64;
            for n in [1, 4, 16] {
                let (u, w) = compression_family(n, &g).unwrap();
                let s = stretch_max(&g, &u, &w);
                assert!(s <= n as f64 * d * d, "n={n} nx={nx} {s}");
            }
            let (u, w) = compression_family(1, &g).unwrap();
            let s = stretch_max(&g, &u, &w);
            assert!(s < prev / 3.5);
            prev = s;
        }
    }

    #[test]
    fn compression_family_energy_is_linear_and_below_bound() {
        let m = mat(0.1);
        let f = 2.0 * compression_divergence_threshold(&m).unwrap();
        let g = compression_domain(81, 41).unwrap();
        let bc = compression_support(&g);
        let load = LoadSpec::traction(Traction::NormalPressure(f));
        let mut es = Vec::new();
        for n in 1..=8 {
            let (u, w) = compression_family(n, &g).unwrap();
            assert!(w.0.iter().zip(&bc.gamma).all(|(v, &c)| !c || *v == 0.0));
            let e = total_energy(&g, &u, &w, &m, &load, &bc).unwrap().total;
            let exact = compression_energy(n, 4.0, 2.0, &m, f);
            assert!((e - exact).abs() < 5e-3 * exact.abs(), "{e} {exact}");
            assert!(exact <= compression_energy_bound(n, &m, f).unwrap());
            es.push(e);
        }
        let idx: Vec<f64> = (1..=8).map(|n| n as f64).collect();
        let c = certify_divergence(&idx, &es).unwrap();
        assert!(c.linear && c.unbounded && c.slope < 0.0, "{c:?}");
    }

    #[test]
    fn shear_profile_properties() {
        let d = 1e-6;
        for i in 0..=400 {
            let t = -1.2 + 2.4 * i as f64 / 400.0;
            assert_eq!(shear_profile(t), shear_profile(-t));
            let fd = (shear_profile(t + d) - shear_profile(t - d)) / (2.0 * d);
            assert!((fd - shear_profile_slope(t)).abs() < 1e-5, "t={t}");
            let fd2 = (shear_profile_slope(t + d) - shear_profile_slope(t - d)) / (2.0 * d);
            assert!(fd2.abs() <= 4.0 + 1e-6);
            let fp = (shear_potential(t + d) - shear_potential(t - d)) / (2.0 * d);
            assert!(
                (fp - 0.5 * shear_profile_slope(t).powi(2)).abs() < 1e-5,
                "t={t}"
            );
        }
        for t in [0.25, 0.4, 0.6, 0.75] {
            assert!((shear_profile_slope(t) + 1.0).abs() < 1e-15);
        }
        assert_eq!(shear_profile(0.0), 0.75);
        assert_eq!(shear_profile(1.0), 0.0);
        assert!((shear_potential(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(shear_potential(-1.0), 0.0);
        assert_eq!(shear_profile_curvature(0.1), -4.0);
        assert_eq!(shear_profile_curvature(0.9), 4.0);
        assert_eq!(shear_profile_curvature(0.5), 0.0);
    }

    #[test]
    fn shear_family_stretching_vanishes_to_second_order() {
        let mut prev = f64::INFINITY;
        for n in [33, 65, 129] {
            let g = Grid::rectangle((-2.0, 2.0), (-1.0, 1.0), n, n.div_ceil(2)).unwrap();
            let (u, w) = shear_family(1, &g).unwrap();
            let s = stretch_max(&g, &u, &w);
            assert!(s < prev / 3.0, "{s} vs {prev}");
            prev = s;
        }
        let g = shear_domain(9, 5).unwrap();
        let (u, w) = shear_family(0, &g).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(w.max_abs(), 0.0);
        let m = mat(0.1);
        let bc = shear_support(&g);
        let e = total_energy(&g, &u, &w, &m, &shear_load(1.0), &bc).unwrap();
        assert_eq!(e.total, 0.0);
    }

    #[test]
    fn shear_family_energy_decreases_linearly() {
        let m = mat(0.05);
        let (_, cap) = coercivity_constants(m.poisson).unwrap();
        let gamma = 12.0 * m.young * cap * m.thickness.powi(2);
        let g = shear_domain(161, 81).unwrap();
        let bc = shear_support(&g);
        let load = shear_load(gamma);
        let mut es = Vec::new();
        for n in 1..=8 {
            let (u, w) = shear_family(n, &g).unwrap();
            assert!(w.0.iter().zip(&bc.gamma).all(|(v, &c)| !c || *v == 0.0));
            let e = total_energy(&g, &u, &w, &m, &load, &bc).unwrap().total;
            let exact = shear_energy(n, &m, gamma);
            assert!((e - exact).abs() < 0.02 * exact.abs(), "{e} {exact}");
            assert!(e < shear_energy_bound(n, &m, gamma).unwrap());
            es.push(e);
        }
        let idx: Vec<f64> = (1..=8).map(|n| n as f64).collect();
        let c = certify_divergence(&idx, &es).unwrap();
        assert!(c.linear && c.unbounded, "{c:?}");
    }

    #[test]
    fn edge_supported_family_is_quadratic_in_index() {
        let m = mat(0.1);
        let g = edge_supported_domain(41, 21).unwrap();
        let bc = edge_supported_support(&g);
        let load = edge_supported_load(1.0, &m);
        let mut es = Vec::new();
        for k in 1..=8 {
            let (u, w) = edge_supported_family(k, &g).unwrap();
            for j in 0..21 {
                assert_eq!(w.0[g.index(0, j)], 0.0);
            }
            assert!(stretch_max(&g, &u, &w) < 1e-3);
            let e = total_energy(&g, &u, &w, &m, &load, &bc).unwrap().total;
            let exact = edge_supported_energy(k, &m, 1.0);
            assert!((e - exact).abs() < 1e-6 * exact.abs(), "{e} {exact}");
            es.push(e);
        }
        let idx: Vec<f64> = (1..=8).map(|n| n as f64).collect();
        let c = certify_divergence(&idx, &es).unwrap();
        assert!(c.unbounded && c.strictly_decreasing);
        // The energy is quadratic in the index, so a line fits only roughly.
        assert!((c.r_squared - 0.9615).abs() < 1e-3, "{}", c.r_squared);
    }

    #[test]
    fn sawtooth_and_ramp_values() {
        assert_eq!(sawtooth(0.25), 0.25);
        assert_eq!(sawtooth(0.5), 0.5);
        assert_eq!(sawtooth(0.0), 0.0);
        assert_eq!(sawtooth(1.75), 0.25);
        assert_eq!(edge_ramp(4, 3.0, 0.125), 0.5);
        assert_eq!(edge_ramp(4, 3.0, 1.5), 1.0);
        assert_eq!(edge_ramp(4, 3.0, 3.0), 0.0);
    }

    #[test]
    fn wrinkle_family_vanishes_on_boundary_and_diverges() {
        let m = mat(1e-4);
        let a = wrinkle_width(&m).unwrap();
        let g = wrinkle_domain(a, 161, 2049).unwrap();
        let bc = wrinkle_support(&g);
        let f = Functional::new(&g, &m, Weights::rescaled(&m, 0.0), &wrinkle_load()).unwrap();
        let slope = wrinkle_energy_slope(&m, a);
        let mut es = Vec::new();
        for n in 1..=8 {
            let (v, z) = wrinkle_family(n, &g).unwrap();
            assert!(z
                .0
                .iter()
                .zip(&bc.gamma)
                .all(|(v, &c)| !c || v.abs() < 1e-15));
            let e = f.energy(&v.x, &v.y, &z.0).total;
            assert!(e <= wrinkle_energy_bound(n, &m, a).unwrap());
            assert!(
                (e - slope * n as f64).abs() < 0.05 * (slope * n as f64).abs(),
                "n={n} {e} {}",
                slope * n as f64
            );
            es.push(e);
        }
        let idx: Vec<f64> = (1..=8).map(|n| n as f64).collect();
        let c = certify_divergence(&idx, &es).unwrap();
        assert!(c.linear && c.unbounded, "{c:?}");
    }

    #[test]
    fn wrinkle_slope_matches_brute_force_midpoint_sum() {
        let m = mat(1e-4);
        let a = 2.5;
        let n = 3usize;
        let (nxr, nyp) = (400, 400);
        // Midpoint rule over the two ramps of width 1/n and all n periods.
        let mut s = 0.0;
        for (lo, hi) in [(0.0, 1.0 / n as f64), (a - 1.0 / n as f64, a)] {
            let dx = (hi - lo) / nxr as f64;
            let dy = 1.0 / (n * nyp) as f64;
            for i in 0..nxr {
                let x = lo + (i as f64 + 0.5) * dx;
                for j in 0..n * nyp {
                    let y = (j as f64 + 0.5) * dy;
                    s += energy_density(&wrinkle_stretching(n, a, x, y), &m) * dx * dy;
                }
            }
        }
        let lambda = s - n as f64 * a / 2.0;
        let expect = wrinkle_energy_slope(&m, a) * n as f64;
        assert!(
            (lambda - expect).abs() < 1e-4 * expect.abs(),
            "{lambda} {expect}"
        );
    }

    #[test]
    fn compression_mode_is_critical_on_its_grid() {
        let m = mat(0.1);
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 9, 161).unwrap();
        let b = buckled_mode(BuckledKind::Compression, 1, &g, &m, 0.01).unwrap();
        let mh = m.with_thickness(b.thickness).unwrap();
        // Pencil conditioning grows like nodes⁴, which puts rounding near 1e-8.
        let e = crate::energy::limit_energy(&g, &b.u_star, &b.w, &mh).unwrap();
        let bend = crate::energy::bending_energy(&g, &b.w, &mh).unwrap();
        assert!(e.abs() < 1e-7 * bend, "{e} {bend}");
        // Doubling the amplitude quadruples both quadratic parts.
        let e2 = crate::energy::limit_energy(&g, &b.u_star, &b.w.scaled(2.0), &mh).unwrap();
        let bend2 = crate::energy::bending_energy(&g, &b.w.scaled(2.0), &mh).unwrap();
        assert!((bend2 / bend - 4.0).abs() < 1e-12);
        assert!(e2.abs() < 1e-7 * bend2, "{e2}");
        // Off-critical thickness leaves a nonzero limit energy.
        let mo = m.with_thickness(1.1 * b.thickness).unwrap();
        assert!(crate::energy::limit_energy(&g, &b.u_star, &b.w, &mo).unwrap() > 1e-3 * bend);
        let mask = g.constrained_mask(&b.bc).unwrap();
        assert!(b.w.0.iter().zip(&mask).all(|(v, &c)| !c || *v == 0.0));
        let expect = (12.0 * 0.01 * (1.0 - 0.09) / (4.0 * PI * PI)).sqrt();
        // The two-node clamp shortens the discrete strip, a first-order effect.
        assert!(
            (b.thickness / expect - 1.0).abs() < 0.02,
            "{} {expect} k={}",
            b.thickness,
            b.k
        );
    }

    #[test]
    fn shear_mode_is_clamped_at_band_edges() {
        let m = mat(0.1);
        let g = shear_domain(41, 21).unwrap();
        let b = buckled_mode(BuckledKind::Shear, 1, &g, &m, 0.01).unwrap();
        assert!((b.k - PI * PI).abs() < 1e-3 * PI * PI);
        let modes = buckling_critical(BucklingBc::Clamped, (-1.0, 1.0), BAND_NODES, 1).unwrap();
        let s = &modes[0].shape;
        let d = 2.0 / (BAND_NODES - 1) as f64;
        assert_eq!(s[0], 0.0);
        assert_eq!(s[BAND_NODES - 1], 0.0);
        assert!(((s[1] - s[0]) / d).abs() < 5.0 * d);
        assert!(((s[BAND_NODES - 1] - s[BAND_NODES - 2]) / d).abs() < 5.0 * d);
        // Analytic first mode (1 + cos πt)/2 after normalization.
        for (x, v) in modes[0].x.iter().zip(s) {
            assert!((v - 0.5 * (1.0 + (PI * x).cos())).abs() < 1e-3);
        }
        assert!(b.w.0.iter().zip(&b.bc.gamma).all(|(v, &c)| !c || *v == 0.0));
        let expect = (6.0 * 0.01 * 0.91 / (PI * PI)).sqrt();
        assert!((b.thickness / expect - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bump_antiderivatives_are_consistent() {
        let b = bump();
        assert!((b.cdf(1.0 - 1e-12) - 1.0).abs() < 1e-12);
        assert!((b.second(1.0 - 1e-12) - 1.0).abs() < 1e-10);
        assert!((b.cdf(0.0) - 0.5).abs() < 1e-13);
        let d = 1e-5;
        for i in 1..40 {
            let u = -1.0 + i as f64 / 20.0;
            let fd = (b.second(u + d) - b.second(u - d)) / (2.0 * d);
            assert!((fd - b.cdf(u)).abs() < 1e-9);
            let fd = (b.cdf(u + d) - b.cdf(u - d)) / (2.0 * d);
            assert!((fd - b.density(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn mollified_tent_derivatives_and_plateaus() {
        let t = MollifiedTent::new(1.0, 1.0, 0.1).unwrap();
        let d = 1e-6;
        for i in 0..500 {
            let x = 1.0 + 2.0 * i as f64 / 500.0 + 1e-4;
            let [v, d1, d2] = t.eval(x);
            let [vp, d1p, _] = t.eval(x + d);
            let [vm, d1m, _] = t.eval(x - d);
            assert!(((vp - vm) / (2.0 * d) - d1).abs() < 1e-6, "x={x}");
            assert!(
                ((d1p - d1m) / (2.0 * d) - d2).abs() < 1e-3 * (1.0 + d2.abs()),
                "x={x}"
            );
            assert!(v >= 0.0);
        }
        // Linear parts are reproduced exactly outside the kink windows.
        assert!((t.eval(1.3)[0] - 0.2).abs() < 1e-15);
        assert_eq!(t.eval(1.3)[1], 1.0);
        assert_eq!(t.eval(1.75)[1], -1.0);
        assert_eq!(t.eval(1.0)[0], 0.0);
        assert_eq!(t.eval(2.0)[0], 0.0);
        // Symmetric mollifier keeps the peak region symmetric.
        assert!((t.eval(1.45)[0] - t.eval(1.55)[0]).abs() < 1e-14);
        assert!(MollifiedTent::new(0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn scaling_exponents() {
        let r = optimal_scaling(OscillationKind::Radial, 0.0, SigmaRule::Balanced).unwrap();
        assert!((r.beta_inv - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.sigma - 1.0 / 3.0).abs() < 1e-15);
        let p = optimal_scaling(OscillationKind::Radial, 0.0, SigmaRule::Product).unwrap();
        assert!((p.sigma - 10.0 / 3.0).abs() < 1e-15);
        let q = optimal_scaling(OscillationKind::Radial, 0.0, SigmaRule::Quotient).unwrap();
        assert!((q.sigma - 5.0 / 6.0).abs() < 1e-15);
        let t = optimal_scaling(OscillationKind::Tangential, 0.0, SigmaRule::Balanced).unwrap();
        assert_eq!(t.beta_inv, 1.0);
        assert_eq!(t.delta, Some(0.5));
        assert_eq!(t.sigma, 0.5);
        for kind in [OscillationKind::Radial, OscillationKind::Tangential] {
            let e = optimal_scaling(kind, 2.0, SigmaRule::Balanced).unwrap();
            assert_eq!(e.beta_inv, 0.0);
            assert_eq!(e.sigma, 0.0);
        }
        assert!(optimal_scaling(OscillationKind::Radial, 2.0, SigmaRule::Quotient).is_err());
        assert!(optimal_scaling(OscillationKind::Radial, -0.1, SigmaRule::Balanced).is_err());
    }

    /// Prestress of an annulus with boundary pressures `p1`, `p2`.
    fn ab(p1: f64, p2: f64, r1: f64, r2: f64, e: f64, nu: f64) -> (f64, f64) {
        let d = e * (r2 * r2 - r1 * r1);
        (
            (1.0 - nu) * (p2 * r2 * r2 - p1 * r1 * r1) / d,
            (1.0 + nu) * (p2 - p1) * r1 * r1 * r2 * r2 / d,
        )
    }

    #[test]
    fn radial_profile_rejects_inconsistent_cases() {
        let (a, b) = ab(-2.0, -1.0, 1.0, 2.0, 1.0, 0.3);
        assert!(b > 0.0);
        assert!(
            RadialOscillation::new(1.0, 2.0, a, b, PressureOrder::InnerLower, 0.3, 20.0, 0.1)
                .is_ok()
        );
        assert!(
            RadialOscillation::new(1.0, 2.0, a, b, PressureOrder::OuterLower, 0.3, 20.0, 0.1)
                .is_err()
        );
        // Tension makes the squared amplitude negative.
        let (a, b) = ab(1.0, 2.0, 1.0, 2.0, 1.0, 0.3);
        assert!(
            RadialOscillation::new(1.0, 2.0, a, b, PressureOrder::InnerLower, 0.3, 20.0, 0.1)
                .is_err()
        );
        let (a, b) = ab(-1.0, -2.0, 1.0, 2.0, 1.0, 0.3);
        assert!(b < 0.0);
        assert!(
            RadialOscillation::new(1.0, 2.0, a, b, PressureOrder::OuterLower, 0.3, 20.0, 0.1)
                .is_ok()
        );
    }

    #[test]
    fn radial_profile_slope_tracks_amplitude_off_the_kinks() {
        let (a, b) = ab(-2.0, -1.0, 1.0, 2.0, 1.0, 0.3);
        let z = RadialOscillation::new(1.0, 2.0, a, b, PressureOrder::InnerLower, 0.3, 50.0, 0.05)
            .unwrap();
        let bf = z.beta() as f64;
        let (mut good, total) = (0usize, 20000usize);
        for i in 0..total {
            let r = 1.0 + (i as f64 + 0.5) / total as f64;
            let [_, d1, _] = z.profile(r);
            if (d1.abs() - z.amplitude(r)).abs() < 0.05 * z.amplitude(r) {
                good += 1;
            }
        }
        // The bad set has measure about 6σ per unit period.
        let bad = 1.0 - good as f64 / total as f64;
        assert!(bad < 6.0 * 0.05 + 0.02, "{bad}");
        assert!(bad > 0.1);
        assert_eq!(z.profile(1.0)[0], 0.0);
        assert!(z.profile(2.0)[0].abs() < 1e-15);
        let _ = bf;
    }

    #[test]
    fn radial_profile_derivatives_match_differences() {
        let (a, b) = ab(-2.0, -1.0, 1.0, 2.0, 1.0, 0.3);
        let z = RadialOscillation::new(1.0, 2.0, a, b, PressureOrder::InnerLower, 0.3, 7.5, 0.08)
            .unwrap();
        let d = 1e-6;
        for i in 1..200 {
            let r = 1.0 + i as f64 / 200.0 + 1e-4;
            let p = z.profile(r);
            let (pp, pm) = (z.profile(r + d), z.profile(r - d));
            assert!(((pp[0] - pm[0]) / (2.0 * d) - p[1]).abs() < 1e-6);
            assert!(((pp[1] - pm[1]) / (2.0 * d) - p[2]).abs() < 1e-4 * (1.0 + p[2].abs()));
        }
    }

    #[test]
    fn radial_quadrature_handles_overlapping_kink_windows() {
        // σ > P/6 makes neighbouring kink windows overlap.
        let (r1, r2, nu) = (1.0, 2.0, 0.3);
        let m = mat(1e-2);
        let (a, b) = ab(-2.0, -1.0, r1, r2, m.young, nu);
        let z = RadialOscillation::new(r1, r2, a, b, PressureOrder::InnerLower, nu, 4.0, 0.215)
            .unwrap();
        let quad = z.scaled_energy(&m, 0.0, 0.0).unwrap().membrane;
        let n = 200_000;
        let dr = (r2 - r1) / n as f64;
        let sum: f64 = (0..n)
            .map(|i| {
                let r = r1 + (i as f64 + 0.5) * dr;
                let d1 = z.profile(r)[1];
                let q = b / (r * r);
                r * density_diag(a - q + 0.5 * d1 * d1, a + q, &m)
            })
            .sum();
        let midpoint = 2.0 * PI * sum * dr;
        assert!((quad / midpoint - 1.0).abs() < 1e-6, "{quad} {midpoint}");
    }

    #[test]
    fn radial_quadrature_matches_the_grid_energy() {
        let (r1, r2, nu) = (1.0, 2.0, 0.3);
        let m = mat(1e-2);
        let (a, b) = ab(-2.0, -1.0, r1, r2, m.young, nu);
        let z =
            RadialOscillation::new(r1, r2, a, b, PressureOrder::InnerLower, nu, 4.0, 0.1).unwrap();
        let radial = z.scaled_energy(&m, 0.0, 0.0).unwrap();
        let g = Grid::annulus(r1, r2, 801, 64).unwrap();
        let zeta = z.sample(&g).unwrap();
        let v = g.sample_vector(|x, y| {
            let s = a + b / (x * x + y * y);
            [s * x, s * y]
        });
        let e =
            crate::energy::prestressed_energy(&g, &v, &zeta, &m, &LoadSpec::none(), 0.0).unwrap();
        let mem = e.breakdown.membrane / m.thickness;
        let bend = e.breakdown.bending / m.thickness;
        assert!(
            (mem / radial.membrane - 1.0).abs() < 1e-3,
            "{mem} {}",
            radial.membrane
        );
        assert!(
            (bend / radial.bending - 1.0).abs() < 0.02,
            "{bend} {}",
            radial.bending
        );
    }

    #[test]
    fn tangential_profile_reaches_the_pointwise_minimum() {
        let (r1, r2, nu, p1) = (1.0, 2.0, 0.3, 1.0);
        let b = -(1.0 + nu) * p1 * r1 * r1;
        let z = TangentialOscillation::with_scaling(r1, r2, b, nu, 1e-3, 0.0).unwrap();
        assert_eq!(z.value(r1, 0.7), 0.0);
        // Off the kinks and past the cutoff the g-term equals 4(1+ν)b²/r⁴.
        let bf = z.beta() as f64;
        let theta = (PI / 2.0) / bf;
        for r in [1.5, 1.8, 2.0] {
            let g = z.g_term_at(r, theta);
            let expect = 4.0 * (1.0 + nu) * b * b / r.powi(4);
            assert!((g - expect).abs() < 1e-12 * expect, "{g} {expect}");
        }
        let errs: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&h| {
                let z = TangentialOscillation::with_scaling(r1, r2, b, nu, h, 0.0).unwrap();
                (z.g_integral() - z.g_limit()) / z.g_limit()
            })
            .collect();
        assert!(errs.iter().all(|e| e.abs() < 1.0));
        assert!(
            errs[1].abs() < 0.2 * errs[0].abs() && errs[2].abs() < 0.2 * errs[1].abs(),
            "{errs:?}"
        );
        let g = Grid::annulus(r1, r2, 9, 64).unwrap();
        let s = TangentialOscillation::new(r1, r2, b, nu, 4.0, 0.2, 0.3)
            .unwrap()
            .sample(&g)
            .unwrap();
        for j in 0..64 {
            assert_eq!(s.0[g.index(0, j)], 0.0);
        }
    }
}
