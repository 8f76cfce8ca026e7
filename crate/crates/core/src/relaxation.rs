//! Pointwise relaxation of the prestressed membrane density.
//!
//! With `A = 2E(v)` the membrane density at a transverse slope `ξ` is
//! `J(E(v) + ½ ξ⊗ξ) = E/(8(1+ν)) g_A(ξ)`, where
//! `g_A(ξ) = |A + ξ⊗ξ|² + ν/(1-ν) (tr A + |ξ|²)²`. The minimum of `g_A` over
//! `ξ` is known in closed form; the full convex envelope is only sampled.

use crate::energy::{EdgeLoad, LoadSpec, Traction};
use crate::error::{invalid, Result};
use crate::grid::{Closure, Edge, Grid, GridKind, ScalarField, Sym2Field, VectorField2};
use crate::material::{eig_sym2, energy_density_grad, Material, Sym2};
use crate::numeric::{gauss_integrate, gauss_legendre, pairwise_sum, pairwise_sum_by};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

fn check_nu(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > -1.0 && nu < 0.5 {
        Ok(())
    } else {
        Err(invalid(format!(
            "Poisson ratio must lie in (-1, 1/2), got {nu}"
        )))
    }
}

/// `|A + ξ⊗ξ|² + ν/(1-ν) (tr A + |ξ|²)²`.
pub fn g_a(a: &Sym2, nu: f64, xi: [f64; 2]) -> f64 {
    let m = *a + Sym2::outer(xi);
    m.norm_sq() + nu / (1.0 - nu) * m.trace().powi(2)
}

/// Minimum of [`g_a`] over `ξ` and one minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaMinimum {
    pub value: f64,
    pub xi_star: [f64; 2],
}

/// With eigenvalues `λ1 <= λ2` of `A`: `g_A(0)` when `νλ2 + λ1 >= 0`, else
/// `(1+ν) λ2²` attained at `√(-νλ2 - λ1) v1`.
pub fn min_ga(a: &Sym2, nu: f64) -> Result<GaMinimum> {
    check_nu(nu)?;
    Ok(min_ga_unchecked(a, nu))
}

fn min_ga_unchecked(a: &Sym2, nu: f64) -> GaMinimum {
    let e = eig_sym2(a);
    let s = nu * e.lam2 + e.lam1;
    if s >= 0.0 {
        GaMinimum {
            value: g_a(a, nu, [0.0, 0.0]),
            xi_star: [0.0, 0.0],
        }
    } else {
        let t = (-s).sqrt();
        GaMinimum {
            value: (1.0 + nu) * e.lam2 * e.lam2,
            xi_star: [t * e.v1[0], t * e.v1[1]],
        }
    }
}

/// `min_ξ J(E + ½ ξ⊗ξ)` for a strain `E`.
pub fn relaxed_min_density(strain: &Sym2, m: &Material) -> Result<f64> {
    check_nu(m.poisson)?;
    Ok(min_density(strain, m))
}

fn min_density(strain: &Sym2, m: &Material) -> f64 {
    m.young / (8.0 * (1.0 + m.poisson)) * min_ga_unchecked(&(2.0 * *strain), m.poisson).value
}

/// Samples of `g_A` and its lower convex envelope on the square
/// `[-radius, radius]²`, row-major with the first coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub radius: f64,
    pub resolution: usize,
    /// Sample coordinates along either axis.
    pub axis: Vec<f64>,
    pub g: Vec<f64>,
    pub envelope: Vec<f64>,
}

impl Envelope {
    pub fn min(&self) -> f64 {
        self.envelope.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation of the envelope; `None` outside the square.
    pub fn interpolate(&self, xi: [f64; 2]) -> Option<f64> {
        let n = self.resolution;
        let d = 2.0 * self.radius / (n - 1) as f64;
        let locate = |x: f64| -> Option<(usize, f64)> {
            let s = (x + self.radius) / d;
            if !(0.0..=(n - 1) as f64).contains(&s) {
                return None;
            }
            let i = (s.floor() as usize).min(n - 2);
            Some((i, s - i as f64))
        };
        let ((i, s), (j, t)) = (locate(xi[0])?, locate(xi[1])?);
        let e = |i: usize, j: usize| self.envelope[j * n + i];
        Some(
            (1.0 - s) * (1.0 - t) * e(i, j)
                + s * (1.0 - t) * e(i + 1, j)
                + (1.0 - s) * t * e(i, j + 1)
                + s * t * e(i + 1, j + 1),
        )
    }
}

/// Discrete Legendre transform `F(p) = max_x (p·x - f(x))` on tensor grids,
/// done one axis at a time.
fn legendre_2d(xs: &[f64], f: &[f64], ps: &[f64]) -> Vec<f64> {
    let (n, np) = (xs.len(), ps.len());
    let mut rows = vec![f64::NEG_INFINITY; n * np];
    for j in 0..n {
        for (a, &p) in ps.iter().enumerate() {
            rows[j * np + a] = (0..n)
                .map(|i| p * xs[i] - f[j * n + i])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let mut out = vec![f64::NEG_INFINITY; np * np];
    for (b, &q) in ps.iter().enumerate() {
        for a in 0..np {
            out[b * np + a] = (0..n)
                .map(|j| q * xs[j] + rows[j * np + a])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    out
}

/// Samples `g_A` on a `resolution²` grid over `[-radius, radius]²` and
/// returns its lower convex envelope as the discrete Legendre biconjugate.
/// The slope grid has the same size and spans the sampled difference
/// quotients. The envelope never exceeds `g_A` at a sample and its minimum
/// is the sampled minimum of `g_A`.
pub fn convexify_2d(a: &Sym2, nu: f64, radius: f64, resolution: usize) -> Result<Envelope> {
    let star = min_ga(a, nu)?.xi_star;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(invalid(format!(
            "envelope radius must be positive, got {radius}"
        )));
    }
    if resolution < 3 {
        return Err(invalid(format!(
            "envelope resolution must be at least 3, got {resolution}"
        )));
    }
    let need = star[0].hypot(star[1]);
    if radius < need {
        return Err(invalid(format!(
            "envelope radius {radius} does not contain the minimizer at distance {need}"
        )));
    }
    let n = resolution;
    let d = 2.0 * radius / (n - 1) as f64;
    let axis: Vec<f64> = (0..n).map(|i| -radius + i as f64 * d).collect();
    let g: Vec<f64> = (0..n * n)
        .map(|k| g_a(a, nu, [axis[k % n], axis[k / n]]))
        .collect();
    let mut slope = 0.0f64;
    for j in 0..n {
        for i in 0..n - 1 {
            slope = slope.max((g[j * n + i + 1] - g[j * n + i]).abs() / d);
            slope = slope.max((g[i * n + j + n] - g[i * n + j]).abs() / d);
        }
    }
    let ps: Vec<f64> = (0..n)
        .map(|i| slope * (-1.0 + 2.0 * i as f64 / (n - 1) as f64))
        .collect();
    let conj = legendre_2d(&axis, &g, &ps);
    let envelope = legendre_2d(&ps, &conj, &axis);
    Ok(Envelope {
        radius,
        resolution,
        axis,
        g,
        envelope,
    })
}

fn load_work(grid: &Grid, v: &VectorField2, load: &LoadSpec) -> Result<f64> {
    let t = load.resolve(grid)?;
    let vals: Vec<f64> = grid
        .boundary()
        .iter()
        .zip(&t)
        .map(|(b, f)| f[0] * v.x[b.node] + f[1] * v.y[b.node])
        .collect();
    grid.boundary_integrate(&vals)
}

/// `∫ min_ξ J(E(v) + ½ ξ⊗ξ) - ∮ f·v` with the unscaled traction. This is a
/// lower bound for the relaxed energy of any transverse field.
pub fn relaxed_min_energy(
    grid: &Grid,
    v: &VectorField2,
    m: &Material,
    load: &LoadSpec,
) -> Result<f64> {
    grid.check_len(v.len())?;
    let strain = grid.sym_grad_vector(v)?;
    let vals = strain
        .0
        .iter()
        .map(|e| relaxed_min_density(e, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(grid.integrate(&ScalarField(vals))? - load_work(grid, v, load)?)
}

/// Samples per axis of the envelopes used by [`relaxed_energy`].
const ENVELOPE_RESOLUTION: usize = 101;
/// Relative eigenvalue quantum under which nodes share an envelope.
const EIGEN_QUANTUM: f64 = 1e-9;

/// `∫ I**(E(v), Dζ) - ∮ f·v` with the convexified density sampled per
/// distinct strain. Envelopes are built in the principal frame of the strain,
/// so nodes whose principal strains agree share one envelope.
pub fn relaxed_energy(
    grid: &Grid,
    v: &VectorField2,
    zeta: &ScalarField,
    m: &Material,
    load: &LoadSpec,
) -> Result<f64> {
    grid.check_len(v.len())?;
    let strain = grid.sym_grad_vector(v)?;
    let dz = grid.grad_scalar(zeta)?;
    let nu = m.poisson;
    let scale = m.young / (8.0 * (1.0 + nu));
    let eigs: Vec<_> = strain.0.iter().map(|e| eig_sym2(&(2.0 * *e))).collect();
    let lam_scale = eigs
        .iter()
        .fold(0.0f64, |s, e| s.max(e.lam1.abs()).max(e.lam2.abs()));
    let quantum = EIGEN_QUANTUM * lam_scale.max(f64::MIN_POSITIVE);
    let mut radius = 0.0f64;
    for (k, e) in eigs.iter().enumerate() {
        let star = (-(nu * e.lam2 + e.lam1)).max(0.0).sqrt();
        radius = radius.max(star).max(dz.x[k].hypot(dz.y[k]));
    }
    let radius = 1.25 * radius.max(1e-3);
    let mut cache: HashMap<(i64, i64), Envelope> = HashMap::new();
    let mut vals = Vec::with_capacity(grid.node_count());
    for (k, e) in eigs.iter().enumerate() {
        let xi = [dz.x[k], dz.y[k]];
        let tensile = nu * e.lam2 + e.lam1 >= 0.0;
        if tensile && xi == [0.0, 0.0] {
            // The envelope agrees with g_A at its global minimizer.
            vals.push(scale * g_a(&(2.0 * strain.0[k]), nu, xi));
            continue;
        }
        let key = (
            (e.lam1 / quantum).round() as i64,
            (e.lam2 / quantum).round() as i64,
        );
        if let std::collections::hash_map::Entry::Vacant(slot) = cache.entry(key) {
            slot.insert(convexify_2d(
                &Sym2::diag(e.lam1, e.lam2),
                nu,
                radius,
                ENVELOPE_RESOLUTION,
            )?);
        }
        let local = [
            xi[0] * e.v1[0] + xi[1] * e.v1[1],
            xi[0] * e.v2[0] + xi[1] * e.v2[1],
        ];
        let g = cache[&key]
            .interpolate(local)
            .ok_or_else(|| invalid("slope outside the envelope window"))?;
        vals.push(scale * g);
    }
    Ok(grid.integrate(&ScalarField(vals))? - load_work(grid, v, load)?)
}

// ---------------------------------------------------------------------------
// Annulus under boundary pressures.

/// Radial equilibrium `v(x) = (a + b/|x|²) x` of an annulus loaded by
/// `f = p1 n` on the inner and `f = p2 n` on the outer circle, with outward
/// normals `n`; negative pressures compress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrestressAnnulus {
    pub r1: f64,
    pub r2: f64,
    pub p1: f64,
    pub p2: f64,
    pub a: f64,
    pub b: f64,
    pub young: f64,
    pub poisson: f64,
}

/// `a = (1-ν)(p2 R2² - p1 R1²) / (E (R2² - R1²))`,
/// `b = (1+ν)(p2 - p1) R1² R2² / (E (R2² - R1²))`.
pub fn annulus_prestress(
    p1: f64,
    p2: f64,
    r1: f64,
    r2: f64,
    m: &Material,
) -> Result<PrestressAnnulus> {
    m.validate()?;
    if !(r1 > 0.0 && r2 > r1 && r2.is_finite()) {
        return Err(invalid(format!(
            "annulus radii must satisfy 0 < R1 < R2, got ({r1}, {r2})"
        )));
    }
    if !(p1.is_finite() && p2.is_finite()) {
        return Err(invalid("boundary pressures must be finite"));
    }
    let (e, nu) = (m.young, m.poisson);
    let den = e * (r2 * r2 - r1 * r1);
    Ok(PrestressAnnulus {
        r1,
        r2,
        p1,
        p2,
        a: (1.0 - nu) * (p2 * r2 * r2 - p1 * r1 * r1) / den,
        b: (1.0 + nu) * (p2 - p1) * r1 * r1 * r2 * r2 / den,
        young: e,
        poisson: nu,
    })
}

/// Principal strains with their directions at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalStrains {
    /// `a - b/r²` along `e_r`.
    pub radial: f64,
    /// `a + b/r²` along `e_θ`.
    pub hoop: f64,
    pub e_r: [f64; 2],
    pub e_theta: [f64; 2],
}

impl PrestressAnnulus {
    pub fn displacement(&self, x: f64, y: f64) -> [f64; 2] {
        let s = self.a + self.b / (x * x + y * y);
        [s * x, s * y]
    }

    pub fn strain(&self, x: f64, y: f64) -> Sym2 {
        let r2 = x * x + y * y;
        let q = self.b / (r2 * r2);
        Sym2::new(
            self.a + self.b / r2 - 2.0 * q * x * x,
            -2.0 * q * x * y,
            self.a + self.b / r2 - 2.0 * q * y * y,
        )
    }

    pub fn principal(&self, x: f64, y: f64) -> PrincipalStrains {
        let r = x.hypot(y);
        let q = self.b / (r * r);
        PrincipalStrains {
            radial: self.a - q,
            hoop: self.a + q,
            e_r: [x / r, y / r],
            e_theta: [-y / r, x / r],
        }
    }

    pub fn sample(&self, grid: &Grid) -> Result<VectorField2> {
        match *grid.kind() {
            GridKind::Annulus { r1, r2, .. }
                if (r1 - self.r1).abs() < 1e-12 && (r2 - self.r2).abs() < 1e-12 =>
            {
                Ok(grid.sample_vector(|x, y| self.displacement(x, y)))
            }
            _ => Err(invalid(
                "prestress needs an annulus grid with matching radii",
            )),
        }
    }

    pub fn load(&self) -> LoadSpec {
        let e = |edge, normal| EdgeLoad {
            edge,
            normal,
            tangential: 0.0,
        };
        LoadSpec::traction(Traction::PerEdge(vec![
            e(Edge::Inner, self.p1),
            e(Edge::Outer, self.p2),
        ]))
    }

    /// `∮ f·v = 2π (p2 R2² (a + b/R2²) - p1 R1² (a + b/R1²))`.
    pub fn load_work(&self) -> f64 {
        let s = |r: f64| self.a + self.b / (r * r);
        2.0 * PI
            * (self.p2 * self.r2 * self.r2 * s(self.r2) - self.p1 * self.r1 * self.r1 * s(self.r1))
    }

    /// `a (1+ν) - |b| (1-ν)/r²`, proportional to the smallest stress.
    fn tension_margin(&self, r: f64) -> f64 {
        let nu = self.poisson;
        self.a * (1.0 + nu) - self.b.abs() * (1.0 - nu) / (r * r)
    }

    /// Radius `√((1-ν)|b| / ((1+ν) a))` inside the annulus where the
    /// smallest stress changes sign; compressive inside, tensile outside.
    pub fn transition_radius(&self) -> Option<f64> {
        if self.a <= 0.0 {
            return None;
        }
        let nu = self.poisson;
        let r = ((1.0 - nu) * self.b.abs() / ((1.0 + nu) * self.a)).sqrt();
        (r > self.r1 && r < self.r2).then_some(r)
    }

    /// Whether the smallest stress is negative on all of `[R1, R2]`.
    pub fn compressive_everywhere(&self) -> bool {
        self.tension_margin(self.r1) < 0.0 && self.tension_margin(self.r2) < 0.0
    }

    /// `2π ∫ r min_ξ J(E(v) + ½ξ⊗ξ) dr - ∮ f·v` by composite Gauss quadrature
    /// of the exact strain.
    pub fn relaxed_min(&self) -> Result<f64> {
        let m = Material::new(self.young, self.poisson, 1.0)?;
        let rule = gauss_legendre(20);
        const PANELS: usize = 64;
        let dr = (self.r2 - self.r1) / PANELS as f64;
        let parts: Vec<f64> = (0..PANELS)
            .map(|i| {
                let lo = self.r1 + i as f64 * dr;
                gauss_integrate(&rule, lo, lo + dr, |r| {
                    let q = self.b / (r * r);
                    r * min_density(&Sym2::diag(self.a - q, self.a + q), &m)
                })
            })
            .collect();
        Ok(2.0 * PI * pairwise_sum(&parts) - self.load_work())
    }

    /// `‖J'(E(v)) n - f‖ / ‖f‖` in `L²` over both circles, with the strain of
    /// the sampled field from second-order one-sided radial differences.
    pub fn neumann_residual(&self, grid: &Grid) -> Result<f64> {
        let v = self.sample(grid)?;
        let m = Material::new(self.young, self.poisson, 1.0)?;
        let gx = grid.grad_scalar_with(&ScalarField(v.x.clone()), Closure::SecondOrder)?;
        let gy = grid.grad_scalar_with(&ScalarField(v.y.clone()), Closure::SecondOrder)?;
        let f = self.load().resolve(grid)?;
        let bnd = grid.boundary();
        let (mut num, mut den) = (Vec::with_capacity(bnd.len()), Vec::with_capacity(bnd.len()));
        for (b, t) in bnd.iter().zip(&f) {
            let k = b.node;
            let e = Sym2::new(gx.x[k], 0.5 * (gx.y[k] + gy.x[k]), gy.y[k]);
            let s = energy_density_grad(&e, &m).apply(b.normal);
            num.push((s[0] - t[0]).powi(2) + (s[1] - t[1]).powi(2));
            den.push(t[0] * t[0] + t[1] * t[1]);
        }
        let den = grid.boundary_integrate(&den)?;
        if den == 0.0 {
            return Err(invalid("Neumann residual needs a nonzero load"));
        }
        Ok((grid.boundary_integrate(&num)? / den).sqrt())
    }
}

// ---------------------------------------------------------------------------
// Flat versus wrinkled classification.

/// Per-node smallest stress eigenvalue `s1 = E/(1-ν²) (νλ2 + λ1)` of a strain
/// field and the tensile flag `s1 >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateClass {
    pub s1: Vec<f64>,
    pub tensile: Vec<bool>,
}

impl StateClass {
    pub fn compressive_count(&self) -> usize {
        self.tensile.iter().filter(|&&t| !t).count()
    }

    /// Tensile everywhere: the flat state is the minimizer.
    pub fn flat_forced(&self) -> bool {
        self.compressive_count() == 0
    }

    /// Some node is compressive. Every node carries positive quadrature
    /// weight, so the compressive region has positive measure.
    pub fn wrinkling_admissible(&self) -> bool {
        !self.flat_forced()
    }
}

pub fn classify_state(strain: &Sym2Field, m: &Material) -> Result<StateClass> {
    m.validate()?;
    let c = m.young / (1.0 - m.poisson * m.poisson);
    let s1: Vec<f64> = strain
        .0
        .iter()
        .map(|e| {
            let p = eig_sym2(e);
            c * (m.poisson * p.lam2 + p.lam1)
        })
        .collect();
    let tensile = s1.iter().map(|&s| s >= 0.0).collect();
    Ok(StateClass { s1, tensile })
}

/// `∫ J(E(v)) - ∮ f·v`, the energy of the flat state.
pub fn flat_energy(grid: &Grid, v: &VectorField2, m: &Material, load: &LoadSpec) -> Result<f64> {
    let strain = grid.sym_grad_vector(v)?;
    let n = grid.node_count();
    let vals = pairwise_sum_by(n, |k| {
        grid.weights()[k] * crate::material::energy_density(&strain.0[k], m)
    });
    Ok(vals - load_work(grid, v, load)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::energy_density;
    use proptest::prelude::*;

    fn mat(nu: f64) -> Material {
        Material::new(1.3, nu, 0.1).unwrap()
    }

    fn brute_min(a: &Sym2, nu: f64, n: usize) -> f64 {
        let e = eig_sym2(a);
        let r = 2.0 * (1.0 + (-(nu * e.lam2 + e.lam1)).max(0.0).sqrt());
        let d = 2.0 * r / (n - 1) as f64;
        let mut best = f64::INFINITY;
        for j in 0..n {
            for i in 0..n {
                best = best.min(g_a(a, nu, [-r + i as f64 * d, -r + j as f64 * d]));
            }
        }
        best
    }

    fn sym() -> impl Strategy<Value = Sym2> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| Sym2::new(a, b, c))
    }

    #[test]
    fn g_a_reference_values() {
        assert_eq!(g_a(&Sym2::new(0.0, 0.0, 0.0), 0.3, [0.0, 0.0]), 0.0);
        assert_eq!(g_a(&Sym2::diag(-1.0, -1.0), 0.0, [0.0, 0.0]), 2.0);
    }

    #[test]
    fn min_ga_reference_values() {
        let r = min_ga(&Sym2::diag(1.0, 2.0), 0.0).unwrap();
        assert_eq!(r.value, 5.0);
        assert_eq!(r.xi_star, [0.0, 0.0]);
        assert!((brute_min(&Sym2::diag(1.0, 2.0), 0.0, 401) - 5.0).abs() < 1e-9);
        let r = min_ga(&Sym2::diag(-1.0, -1.0), 0.0).unwrap();
        assert_eq!(r.value, 1.0);
        assert!((brute_min(&Sym2::diag(-1.0, -1.0), 0.0, 401) - 1.0).abs() < 1e-3);
        assert!(min_ga(&Sym2::diag(1.0, 1.0), 0.5).is_err());
    }

    #[test]
    fn min_ga_is_continuous_across_the_branch_boundary() {
        // A = diag(t - ν λ2, λ2) crosses νλ2 + λ1 = 0 at t = 0.
        let (nu, l2) = (0.3, 1.5);
        let at = |t: f64| min_ga(&Sym2::diag(t - nu * l2, l2), nu).unwrap().value;
        let edge = (1.0 + nu) * l2 * l2;
        assert!((g_a(&Sym2::diag(-nu * l2, l2), nu, [0.0, 0.0]) - edge).abs() < 1e-12);
        for k in 1..=6 {
            let t = 10f64.powi(-k);
            assert!((at(t) - edge).abs() < 10.0 * t, "t={t}");
            assert!((at(-t) - edge).abs() < 1e-12);
        }
        assert!((at(0.0) - edge).abs() < 1e-12);
    }

    #[test]
    fn min_ga_matches_brute_force_on_random_tensors() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
        for _ in 0..20 {
            use rand::Rng;
            let a = Sym2::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let nu = rng.gen_range(-0.9..0.49);
            let exact = min_ga(&a, nu).unwrap().value;
            let brute = brute_min(&a, nu, 201);
            assert!(brute >= exact - 1e-12);
            assert!(
                (brute - exact).abs() < 1e-2 * (1.0 + exact),
                "{a:?} {nu} {brute} {exact}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn density_is_a_scaled_g_a(a in sym(), nu in -0.9..0.49f64, x in -2.0..2.0f64, y in -2.0..2.0f64) {
            let m = mat(nu);
            let d = energy_density(&(a + 0.5 * Sym2::outer([x, y])), &m);
            let g = m.young / (8.0 * (1.0 + nu)) * g_a(&(2.0 * a), nu, [x, y]);
            prop_assert!((d - g).abs() <= 1e-12 * (1.0 + d.abs()));
        }

        #[test]
        fn min_ga_is_a_lower_bound_attained_at_xi_star(a in sym(), nu in -0.9..0.49f64, x in -3.0..3.0f64, y in -3.0..3.0f64) {
            let r = min_ga(&a, nu).unwrap();
            prop_assert!(r.value <= g_a(&a, nu, [x, y]) + 1e-12);
            prop_assert!((g_a(&a, nu, r.xi_star) - r.value).abs() <= 1e-10 * (1.0 + r.value));
        }

        #[test]
        fn min_ga_is_rotation_equivariant(a in sym(), nu in -0.9..0.49f64, th in 0.0..6.3f64) {
            let r = min_ga(&a, nu).unwrap();
            // B = Qᵀ A Q with Q the rotation by th.
            let b = a.rotated(th);
            let rb = min_ga(&b, nu).unwrap();
            prop_assert!((r.value - rb.value).abs() <= 1e-10 * (1.0 + r.value));
            let (c, s) = (th.cos(), th.sin());
            let q = [c * r.xi_star[0] + s * r.xi_star[1], -s * r.xi_star[0] + c * r.xi_star[1]];
            let e = eig_sym2(&b);
            if e.lam2 - e.lam1 > 1e-6 {
                let same = (q[0] - rb.xi_star[0]).hypot(q[1] - rb.xi_star[1]);
                let flip = (q[0] + rb.xi_star[0]).hypot(q[1] + rb.xi_star[1]);
                prop_assert!(same.min(flip) <= 1e-6 * (1.0 + q[0].hypot(q[1])));
            }
        }
    }

    #[test]
    fn envelope_of_compressive_state_reaches_the_closed_form_minimum() {
        let a = Sym2::diag(-1.0, -1.0);
        let env = convexify_2d(&a, 0.0, 2.0, 201).unwrap();
        assert!((env.min() - 1.0).abs() < 1e-2);
        assert!(env
            .envelope
            .iter()
            .zip(&env.g)
            .all(|(e, g)| *e <= g + 1e-12));
        // Convex in the middle: the wells are filled in.
        let mid = env.interpolate([0.0, 0.0]).unwrap();
        assert!(mid < 1.0 + 1e-2, "{mid}");
        assert!(convexify_2d(&a, 0.0, 0.5, 51).is_err());
    }

    #[test]
    fn envelope_of_tensile_state_is_the_function_itself() {
        let a = Sym2::new(1.0, 0.2, 0.8);
        let env = convexify_2d(&a, 0.3, 1.0, 101).unwrap();
        let k0 = 50 * 101 + 50;
        assert!((env.envelope[k0] - env.g[k0]).abs() < 1e-12);
        let range = env.g.iter().copied().fold(0.0f64, f64::max);
        for (e, g) in env.envelope.iter().zip(&env.g) {
            assert!(*e <= g + 1e-12);
            assert!(g - e < 1e-2 * range, "{e} {g}");
        }
    }

    #[test]
    fn annulus_prestress_special_cases() {
        let m = Material::new(2.0, 0.3, 0.1).unwrap();
        let p = annulus_prestress(-1.5, -1.5, 1.0, 2.0, &m).unwrap();
        assert_eq!(p.b, 0.0);
        assert!((p.a - 0.7 * -1.5 / 2.0).abs() < 1e-15);
        let (p1, r1, r2) = (1.2, 1.0, 3.0);
        let p = annulus_prestress(p1, p1 * r1 * r1 / (r2 * r2), r1, r2, &m).unwrap();
        assert!(p.a.abs() < 1e-15);
        assert!((p.b + 1.3 * p1 * r1 * r1 / 2.0).abs() < 1e-14);
        assert!(annulus_prestress(-1.0, -1.0, 2.0, 1.0, &m).is_err());
    }

    #[test]
    fn prestress_strain_has_radial_and_hoop_eigenvectors() {
        let m = Material::new(1.0, 0.3, 0.1).unwrap();
        let p = annulus_prestress(-2.0, -1.0, 1.0, 2.0, &m).unwrap();
        for (x, y) in [(1.0, 0.0), (0.3, 1.2), (-1.1, -1.4), (0.0, -2.0)] {
            let e = p.strain(x, y);
            let pr = p.principal(x, y);
            let er = e.apply(pr.e_r);
            let et = e.apply(pr.e_theta);
            assert!(
                (er[0] - pr.radial * pr.e_r[0]).abs() < 1e-12
                    && (er[1] - pr.radial * pr.e_r[1]).abs() < 1e-12
            );
            assert!((et[0] - pr.hoop * pr.e_theta[0]).abs() < 1e-12);
            let eg = eig_sym2(&e);
            assert!((eg.lam1 - pr.radial.min(pr.hoop)).abs() < 1e-12);
        }
    }

    #[test]
    fn neumann_residual_is_small_on_the_reference_grid() {
        let m = Material::new(1.0, 0.3, 0.1).unwrap();
        let p = annulus_prestress(-2.0, -1.0, 1.0, 2.0, &m).unwrap();
        let g = Grid::annulus(1.0, 2.0, 64, 256).unwrap();
        let r = p.neumann_residual(&g).unwrap();
        assert!(r < 0.02, "{r}");
        let g2 = Grid::annulus(1.0, 2.0, 128, 256).unwrap();
        assert!(p.neumann_residual(&g2).unwrap() < r / 3.0);
    }

    #[test]
    fn classifier_cases() {
        let m = Material::new(1.0, 0.3, 0.1).unwrap();
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 9, 9).unwrap();
        let v = g.sample_vector(|x, y| [0.2 * x, 0.2 * y]);
        let c = classify_state(&g.sym_grad_vector(&v).unwrap(), &m).unwrap();
        assert!(c.flat_forced() && !c.wrinkling_admissible());

        let ga = Grid::annulus(1.0, 2.0, 17, 32).unwrap();
        let p = annulus_prestress(-2.0, -1.0, 1.0, 2.0, &m).unwrap();
        assert!(p.compressive_everywhere());
        let strain = Sym2Field(
            (0..ga.node_count())
                .map(|k| {
                    let [x, y] = ga.coord(k);
                    p.strain(x, y)
                })
                .collect(),
        );
        let c = classify_state(&strain, &m).unwrap();
        assert_eq!(c.compressive_count(), ga.node_count());

        let p = annulus_prestress(-0.2, 1.0, 1.0, 2.0, &m).unwrap();
        let rbar = p.transition_radius().unwrap();
        let strain = Sym2Field(
            (0..ga.node_count())
                .map(|k| {
                    let [x, y] = ga.coord(k);
                    p.strain(x, y)
                })
                .collect(),
        );
        let c = classify_state(&strain, &m).unwrap();
        for k in 0..ga.node_count() {
            let r = ga.radius(k).unwrap();
            if (r - rbar).abs() > 1e-9 {
                assert_eq!(c.tensile[k], r > rbar, "r={r} rbar={rbar}");
            }
        }
    }

    #[test]
    fn relaxed_energy_of_flat_tensile_state_is_the_membrane_energy() {
        let m = Material::new(1.0, 0.3, 0.1).unwrap();
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 9, 9).unwrap();
        let load = LoadSpec::traction(Traction::NormalPressure(0.5));
        let v = g.sample_vector(|x, y| [0.35 * x, 0.35 * y]);
        let z = ScalarField::zeros(g.node_count());
        let r = relaxed_energy(&g, &v, &z, &m, &load).unwrap();
        let f = flat_energy(&g, &v, &m, &load).unwrap();
        assert!((r - f).abs() < 1e-13 * f.abs().max(1.0), "{r} {f}");
        // The pointwise minimum is the flat density for tensile strains.
        assert!((relaxed_min_energy(&g, &v, &m, &load).unwrap() - f).abs() < 1e-13);
    }

    #[test]
    fn relaxed_energy_lies_between_the_minimum_and_the_energy() {
        let m = Material::new(1.0, 0.3, 0.1).unwrap();
        let p = annulus_prestress(-2.0, -1.0, 1.0, 2.0, &m).unwrap();
        let g = Grid::annulus(1.0, 2.0, 9, 16).unwrap();
        let v = p.sample(&g).unwrap();
        let load = p.load();
        let z = g.sample(|x, y| 0.1 * (x * y).sin());
        let r = relaxed_energy(&g, &v, &z, &m, &load).unwrap();
        let lo = relaxed_min_energy(&g, &v, &m, &load).unwrap();
        let strain = g.stretching(&v, &z).unwrap();
        let full = g
            .integrate(&ScalarField(
                strain.0.iter().map(|e| energy_density(e, &m)).collect(),
            ))
            .unwrap()
            - load_work(&g, &v, &load).unwrap();
        assert!(lo <= r + 1e-6 && r <= full + 1e-9, "{lo} {r} {full}");
    }

    #[test]
    fn hoop_compression_minimum_matches_closed_form() {
        let (e, nu, p1, r1, r2) = (1.0, 0.3, 1.0, 1.0, 2.0);
        let m = Material::new(e, nu, 0.1).unwrap();
        let p = annulus_prestress(p1, p1 * r1 * r1 / (r2 * r2), r1, r2, &m).unwrap();
        let b = p.b;
        // Pointwise (E/2) b² r⁻⁴ integrated, minus 2π b (p2 - p1).
        let exact =
            e / 2.0 * b * b * PI * (r1.powi(-2) - r2.powi(-2)) - 2.0 * PI * b * (p.p2 - p.p1);
        assert!((p.relaxed_min().unwrap() - exact).abs() < 1e-12 * exact.abs());
        assert!((p.load_work() - 2.0 * PI * b * (p.p2 - p.p1)).abs() < 1e-14);
        let g = Grid::annulus(r1, r2, 129, 64).unwrap();
        let v = p.sample(&g).unwrap();
        let grid_value = relaxed_min_energy(&g, &v, &m, &p.load()).unwrap();
        assert!(
            (grid_value - exact).abs() < 1e-3 * exact.abs(),
            "{grid_value} {exact}"
        );
    }

    #[test]
    fn compressed_annulus_minimum_matches_closed_form() {
        let (e, nu) = (1.0, 0.3);
        let m = Material::new(e, nu, 0.1).unwrap();
        let p = annulus_prestress(-2.0, -1.0, 1.0, 2.0, &m).unwrap();
        let (a, b) = (p.a, p.b);
        // ∫ (E/2)(a + b/r²)² over the annulus.
        let int = |r: f64| a * a * r * r / 2.0 + 2.0 * a * b * r.ln() - b * b / (2.0 * r * r);
        let exact = e / 2.0 * 2.0 * PI * (int(2.0) - int(1.0)) - p.load_work();
        assert!((p.relaxed_min().unwrap() - exact).abs() < 1e-12 * exact.abs());
    }
}
