//! Discrete plate functional, its variants and its exact gradient.
//!
//! Every functional here has the shape
//! `c_m ∫ J(D(u, w)) + c_b ∫ J(D²w) - c_f ∮ f·u - c_g ∫ g w`
//! and differs only in the four coefficients (see [`Weights`]). The gradient
//! is the derivative of the discrete sum, so it agrees with finite
//! differences of the energy up to rounding.

use crate::error::{invalid, Error, Result};
use crate::grid::{BoundarySpec, Edge, Grid, ScalarField, VectorField2};
use crate::material::{energy_density, energy_density_grad, Material, Sym2};
use crate::numeric::pairwise_sum_by;
use serde::{Deserialize, Serialize};

/// Constant traction on one edge, in the edge's (normal, tangent) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLoad {
    pub edge: Edge,
    pub normal: f64,
    pub tangential: f64,
}

/// In-plane boundary traction before the `h^alpha` scaling.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Traction {
    #[default]
    None,
    /// One Cartesian vector per boundary point.
    Explicit(Vec<[f64; 2]>),
    /// `f n` on the whole boundary.
    NormalPressure(f64),
    /// Piecewise constant per edge; edges not listed are traction free.
    PerEdge(Vec<EdgeLoad>),
}

/// Loads acting on the plate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadSpec {
    pub traction: Traction,
    /// Transverse load density `g_h`, per node.
    pub transverse: Option<ScalarField>,
    /// The applied traction is `f_h = h^alpha f`.
    pub alpha: f64,
}

impl LoadSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn traction(traction: Traction) -> Self {
        Self {
            traction,
            ..Self::default()
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid(format!(
                "load exponent alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Unscaled traction vector at every boundary point.
    pub fn resolve(&self, grid: &Grid) -> Result<Vec<[f64; 2]>> {
        let bnd = grid.boundary();
        let t: Vec<[f64; 2]> = match &self.traction {
            Traction::None => vec![[0.0; 2]; bnd.len()],
            Traction::Explicit(v) => {
                if v.len() != bnd.len() {
                    return Err(Error::GridMismatch {
                        expected: bnd.len(),
                        got: v.len(),
                    });
                }
                v.clone()
            }
            Traction::NormalPressure(f) => bnd
                .iter()
                .map(|b| [f * b.normal[0], f * b.normal[1]])
                .collect(),
            Traction::PerEdge(loads) => bnd
                .iter()
                .map(|b| {
                    loads
                        .iter()
                        .filter(|l| l.edge == b.edge)
                        .fold([0.0; 2], |acc, l| {
                            [
                                acc[0] + l.normal * b.normal[0] + l.tangential * b.tangent[0],
                                acc[1] + l.normal * b.normal[1] + l.tangential * b.tangent[1],
                            ]
                        })
                })
                .collect(),
        };
        if t.iter().any(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::NonFinite("boundary traction".into()));
        }
        Ok(t)
    }

    pub(crate) fn transverse_values(&self, grid: &Grid) -> Result<Option<Vec<f64>>> {
        match &self.transverse {
            None => Ok(None),
            Some(g) => {
                grid.check_len(g.len())?;
                Ok(Some(g.0.clone()))
            }
        }
    }
}

/// Net force and moment (about the origin) of a boundary traction.
pub fn traction_resultant(grid: &Grid, t: &[[f64; 2]]) -> [f64; 3] {
    let b = grid.boundary();
    let fx = pairwise_sum_by(b.len(), |i| b[i].weight * t[i][0]);
    let fy = pairwise_sum_by(b.len(), |i| b[i].weight * t[i][1]);
    let mz = pairwise_sum_by(b.len(), |i| {
        let [x, y] = grid.coord(b[i].node);
        b[i].weight * (x * t[i][1] - y * t[i][0])
    });
    [fx, fy, mz]
}

/// Energy split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub membrane: f64,
    pub bending: f64,
    pub load_work_inplane: f64,
    pub load_work_transverse: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn compose(
        membrane: f64,
        bending: f64,
        load_work_inplane: f64,
        load_work_transverse: f64,
    ) -> Self {
        Self {
            membrane,
            bending,
            load_work_inplane,
            load_work_transverse,
            total: membrane + bending - load_work_inplane - load_work_transverse,
        }
    }
}

/// Coefficients of the four energy terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub membrane: f64,
    pub bending: f64,
    /// Multiplies the unscaled traction work.
    pub inplane: f64,
    pub transverse: f64,
}

impl Weights {
    /// Plate functional `F_h` with `f_h = h^alpha f`.
    pub fn plate(m: &Material, alpha: f64) -> Self {
        let h = m.thickness;
        Self {
            membrane: h,
            bending: h.powi(3) / 12.0,
            inplane: h * h.powf(alpha),
            transverse: h,
        }
    }

    /// `h^(-2 alpha - 1) F_h(h^alpha v, h^(alpha/2) zeta)` in the rescaled
    /// variables; transverse loads are excluded.
    pub fn rescaled(m: &Material, alpha: f64) -> Self {
        let h = m.thickness;
        Self {
            membrane: 1.0,
            bending: h.powf(2.0 - alpha) / 12.0,
            inplane: 1.0,
            transverse: 0.0,
        }
    }

    /// Prestressed functional with the unscaled traction.
    pub fn prestressed(m: &Material, alpha: f64) -> Self {
        let h = m.thickness;
        let outer = h.powf(2.0 * alpha + 1.0);
        Self {
            membrane: outer,
            bending: h.powf(alpha) * h.powi(3) / 12.0,
            inplane: outer,
            transverse: 0.0,
        }
    }
}

/// Reusable evaluator of one functional on one grid.
#[derive(Debug, Clone)]
pub struct Functional<'g> {
    pub(crate) grid: &'g Grid,
    pub(crate) material: Material,
    pub(crate) weights: Weights,
    traction: Vec<[f64; 2]>,
    transverse: Option<Vec<f64>>,
}

impl<'g> Functional<'g> {
    pub fn new(
        grid: &'g Grid,
        material: &Material,
        weights: Weights,
        load: &LoadSpec,
    ) -> Result<Self> {
        material.validate()?;
        load.validate()?;
        Ok(Self {
            grid,
            material: *material,
            weights,
            traction: load.resolve(grid)?,
            transverse: load.transverse_values(grid)?,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn traction(&self) -> &[[f64; 2]] {
        &self.traction
    }

    /// Energy of raw nodal arrays.
    pub fn energy(&self, ux: &[f64], uy: &[f64], w: &[f64]) -> EnergyBreakdown {
        self.eval(ux, uy, w, None)
    }

    /// Energy and its gradient; gradient buffers are overwritten.
    pub fn energy_and_grad(
        &self,
        ux: &[f64],
        uy: &[f64],
        w: &[f64],
        gux: &mut [f64],
        guy: &mut [f64],
        gw: &mut [f64],
    ) -> EnergyBreakdown {
        self.eval(ux, uy, w, Some((gux, guy, gw)))
    }

    fn eval(
        &self,
        ux: &[f64],
        uy: &[f64],
        w: &[f64],
        grad: Option<(&mut [f64], &mut [f64], &mut [f64])>,
    ) -> EnergyBreakdown {
        let g = self.grid;
        let m = &self.material;
        let wt = g.weights();
        let c = self.weights;
        let n = g.node_count();

        let (p, q) = g.grad_raw(w);
        let (e11, e12, e22) = g.strain_raw(ux, uy);
        let d = |k: usize| {
            Sym2::new(
                e11[k] + 0.5 * p[k] * p[k],
                e12[k] + 0.5 * p[k] * q[k],
                e22[k] + 0.5 * q[k] * q[k],
            )
        };
        let membrane = c.membrane * pairwise_sum_by(n, |k| wt[k] * energy_density(&d(k), m));

        let bending_on = c.bending != 0.0;
        let (h11, h12, h22) = if bending_on {
            g.hess_raw(w)
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let hk = |k: usize| Sym2::new(h11[k], h12[k], h22[k]);
        let bending = if bending_on {
            c.bending * pairwise_sum_by(n, |k| wt[k] * energy_density(&hk(k), m))
        } else {
            0.0
        };

        let bnd = g.boundary();
        let t = &self.traction;
        let inplane = c.inplane
            * pairwise_sum_by(bnd.len(), |b| {
                let k = bnd[b].node;
                bnd[b].weight * (t[b][0] * ux[k] + t[b][1] * uy[k])
            });
        let transverse = match &self.transverse {
            Some(gv) if c.transverse != 0.0 => {
                c.transverse * pairwise_sum_by(n, |k| wt[k] * gv[k] * w[k])
            }
            _ => 0.0,
        };

        if let Some((gux, guy, gw)) = grad {
            for v in [&mut *gux, &mut *guy, &mut *gw] {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
            let (mut s11, mut s12, mut s22) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
            for k in 0..n {
                let s = (c.membrane * wt[k]) * energy_density_grad(&d(k), m);
                s11[k] = s.a11;
                s12[k] = s.a12;
                s22[k] = s.a22;
                a[k] = s.a11 * p[k] + s.a12 * q[k];
                b[k] = s.a12 * p[k] + s.a22 * q[k];
            }
            g.grad_adjoint_add(&s11, &s12, gux);
            g.grad_adjoint_add(&s12, &s22, guy);
            g.grad_adjoint_add(&a, &b, gw);
            if bending_on {
                for k in 0..n {
                    let s = (c.bending * wt[k]) * energy_density_grad(&hk(k), m);
                    s11[k] = s.a11;
                    s12[k] = 2.0 * s.a12;
                    s22[k] = s.a22;
                }
                g.hess_adjoint_add(&s11, &s12, &s22, gw);
            }
            for (bi, pt) in bnd.iter().enumerate() {
                gux[pt.node] -= c.inplane * pt.weight * t[bi][0];
                guy[pt.node] -= c.inplane * pt.weight * t[bi][1];
            }
            if let Some(gv) = &self.transverse {
                for k in 0..n {
                    gw[k] -= c.transverse * wt[k] * gv[k];
                }
            }
        }
        EnergyBreakdown::compose(membrane, bending, inplane, transverse)
    }
}

fn check_fields(grid: &Grid, u: &VectorField2, w: &ScalarField) -> Result<()> {
    grid.check_len(u.x.len())?;
    grid.check_len(u.y.len())?;
    grid.check_len(w.len())
}

/// `h ∫ J(D(u, w))`.
pub fn membrane_energy(
    grid: &Grid,
    u: &VectorField2,
    w: &ScalarField,
    m: &Material,
) -> Result<f64> {
    check_fields(grid, u, w)?;
    let weights = Weights {
        membrane: m.thickness,
        bending: 0.0,
        inplane: 0.0,
        transverse: 0.0,
    };
    Ok(Functional::new(grid, m, weights, &LoadSpec::none())?
        .energy(&u.x, &u.y, &w.0)
        .membrane)
}

/// `(h³/12) ∫ J(D²w)`.
pub fn bending_energy(grid: &Grid, w: &ScalarField, m: &Material) -> Result<f64> {
    grid.check_len(w.len())?;
    let hess = grid.hessian_scalar(w)?;
    let vals: Vec<f64> = hess.0.iter().map(|a| energy_density(a, m)).collect();
    Ok(m.thickness.powi(3) / 12.0 * grid.integrate_slice(&vals))
}

/// The plate functional `F_h` with its breakdown.
pub fn total_energy(
    grid: &Grid,
    u: &VectorField2,
    w: &ScalarField,
    m: &Material,
    load: &LoadSpec,
    bc: &BoundarySpec,
) -> Result<EnergyBreakdown> {
    check_fields(grid, u, w)?;
    grid.check_len(bc.gamma.len())?;
    let f = Functional::new(grid, m, Weights::plate(m, load.alpha), load)?;
    Ok(f.energy(&u.x, &u.y, &w.0))
}

/// Exact gradient of [`total_energy`]; constrained transverse entries are zero.
pub fn energy_gradient(
    grid: &Grid,
    u: &VectorField2,
    w: &ScalarField,
    m: &Material,
    load: &LoadSpec,
    bc: &BoundarySpec,
) -> Result<(VectorField2, ScalarField)> {
    check_fields(grid, u, w)?;
    let f = Functional::new(grid, m, Weights::plate(m, load.alpha), load)?;
    let n = grid.node_count();
    let (mut gx, mut gy, mut gw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    f.energy_and_grad(&u.x, &u.y, &w.0, &mut gx, &mut gy, &mut gw);
    let gw = grid.project_bc_grad(&ScalarField(gw), bc)?;
    Ok((VectorField2 { x: gx, y: gy }, gw))
}

/// `eps^-2 (F_h(u, eps w) - min_ref)`.
#[allow(clippy::too_many_arguments)]
pub fn scaled_energy(
    grid: &Grid,
    u: &VectorField2,
    w: &ScalarField,
    m: &Material,
    load: &LoadSpec,
    bc: &BoundarySpec,
    eps: f64,
    min_ref: f64,
) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let e = total_energy(grid, u, &w.scaled(eps), m, load, bc)?;
    Ok((e.total - min_ref) / (eps * eps))
}

/// `F_h^b(w) + (h/2) ∫ J'(E(u*)) : Dw ⊗ Dw`.
pub fn limit_energy(
    grid: &Grid,
    u_star: &VectorField2,
    w: &ScalarField,
    m: &Material,
) -> Result<f64> {
    check_fields(grid, u_star, w)?;
    let stress = grid.sym_grad_vector(u_star)?;
    let dw = grid.grad_scalar(w)?;
    let vals: Vec<f64> = (0..grid.node_count())
        .map(|k| energy_density_grad(&stress.0[k], m).ddot(&Sym2::outer([dw.x[k], dw.y[k]])))
        .collect();
    Ok(bending_energy(grid, w, m)? + 0.5 * m.thickness * grid.integrate_slice(&vals))
}

/// Largest relative disagreement between the assembled gradient of `F_h`
/// and five-point central differences with step `step`, over `trials` random
/// states with random explicit tractions and transverse loads. The energy is a
/// quartic polynomial in each entry, so the stencil is exact up to rounding. Each entry is compared
/// relative to `max(|g_k|, 1e-3 max_j |g_j|)` so near-zero entries do not
/// dominate.
pub fn gradient_check(
    grid: &Grid,
    m: &Material,
    alpha: f64,
    trials: usize,
    seed: u64,
    step: f64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    if trials == 0 || !(step.is_finite() && step > 0.0) {
        return Err(invalid(
            "gradient check needs at least one trial and a positive step",
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = grid.node_count();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut draw = |len: usize| {
            (0..len)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect::<Vec<f64>>()
        };
        let mut x = [draw(n), draw(n), draw(n)];
        let g = draw(n);
        let t: Vec<[f64; 2]> = draw(2 * grid.boundary().len())
            .chunks(2)
            .map(|c| [c[0], c[1]])
            .collect();
        let load = LoadSpec {
            traction: Traction::Explicit(t),
            transverse: Some(ScalarField(g)),
            alpha,
        };
        let f = Functional::new(grid, m, Weights::plate(m, alpha), &load)?;
        let mut grad = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        {
            let [gx, gy, gw] = &mut grad;
            f.energy_and_grad(&x[0], &x[1], &x[2], gx, gy, gw);
        }
        let scale = 1e-3
            * grad
                .iter()
                .map(|g| crate::numeric::max_abs(g))
                .fold(0.0, f64::max);
        for comp in 0..3 {
            for k in 0..n {
                let keep = x[comp][k];
                let mut at = |d: f64| {
                    x[comp][k] = keep + d;
                    f.energy(&x[0], &x[1], &x[2]).total
                };
                let (e1, e2) = (at(step) - at(-step), at(2.0 * step) - at(-2.0 * step));
                x[comp][k] = keep;
                let (fd, an) = ((8.0 * e1 - e2) / (12.0 * step), grad[comp][k]);
                worst = worst.max((fd - an).abs() / an.abs().max(scale).max(f64::MIN_POSITIVE));
            }
        }
    }
    Ok(worst)
}

/// Prestressed functional and its rescaled value `h^(-2 alpha - 1) G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrestressedEnergy {
    pub value: f64,
    pub scaled: f64,
    pub breakdown: EnergyBreakdown,
}

/// `h^alpha F_h^b(zeta) + h^(2 alpha + 1) (∫ J(D(v, zeta)) - ∮ f·v)` with unscaled `f`.
pub fn prestressed_energy(
    grid: &Grid,
    v: &VectorField2,
    zeta: &ScalarField,
    m: &Material,
    load: &LoadSpec,
    alpha: f64,
) -> Result<PrestressedEnergy> {
    check_fields(grid, v, zeta)?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let load = LoadSpec {
        traction: load.traction.clone(),
        transverse: None,
        alpha: 0.0,
    };
    let f = Functional::new(grid, m, Weights::prestressed(m, alpha), &load)?;
    let b = f.energy(&v.x, &v.y, &zeta.0);
    let value = b.total;
    Ok(PrestressedEnergy {
        value,
        scaled: value / m.thickness.powf(2.0 * alpha + 1.0),
        breakdown: b,
    })
}
