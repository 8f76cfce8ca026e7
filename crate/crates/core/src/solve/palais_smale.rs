//! Bounded-energy and vanishing-gradient check along a sequence of scaled states.

use super::linear::min_inplane;
use crate::energy::{energy_gradient, scaled_energy, LoadSpec};
use crate::error::{invalid, Result};
use crate::grid::{BoundarySpec, Grid, ScalarField, VectorField2};
use crate::material::Material;
use crate::numeric::pairwise_sum_by;
use serde::Serialize;

/// Residuals below this count as converged regardless of the trend.
const RESIDUAL_FLOOR: f64 = 1e-10;
/// Required shrink factor between consecutive residuals; a sequence that only
/// drifts down by rounding-level amounts is not tending to zero.
const DECAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsEntry {
    pub eps: f64,
    /// `eps^-2 (F_h(u, eps w) - F_h(u*, 0))`.
    pub energy: f64,
    /// Dual norm of the gradient of the scaled energy in `(u, w)`.
    pub residual: f64,
    pub bounded: bool,
    /// Residual is below the floor or at most half its predecessor.
    pub decreasing: bool,
    pub pass: bool,
}

/// Evaluates each `(u, w, eps)` against `|energy| <= bound` and a residual
/// that keeps shrinking geometrically along the sequence.
pub fn uniform_ps_check(
    grid: &Grid,
    sequence: &[(VectorField2, ScalarField, f64)],
    m: &Material,
    load: &LoadSpec,
    bc: &BoundarySpec,
    bound: f64,
) -> Result<Vec<PsEntry>> {
    if !(bound.is_finite() && bound >= 0.0) {
        return Err(invalid(format!(
            "energy bound must be finite and >= 0, got {bound}"
        )));
    }
    let min_ref = min_inplane(grid, m, load)?.energy;
    let wt = grid.weights();
    let n = grid.node_count();
    let mut out: Vec<PsEntry> = Vec::with_capacity(sequence.len());
    for (u, w, eps) in sequence {
        let eps = *eps;
        let energy = scaled_energy(grid, u, w, m, load, bc, eps, min_ref)?;
        let (gu, gw) = energy_gradient(grid, u, &w.scaled(eps), m, load, bc)?;
        let (su, sw) = (eps.powi(-2), eps.recip());
        let residual = pairwise_sum_by(n, |k| {
            ((su * gu.x[k]).powi(2) + (su * gu.y[k]).powi(2) + (sw * gw.0[k]).powi(2)) / wt[k]
        })
        .sqrt();
        let bounded = energy.abs() <= bound;
        let decreasing =
            residual < RESIDUAL_FLOOR || out.last().is_none_or(|p| residual < DECAY * p.residual);
        out.push(PsEntry {
            eps,
            energy,
            residual,
            bounded,
            decreasing,
            pass: bounded && decreasing,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BcClass;
    use crate::solve::membrane_correction;

    fn mat() -> Material {
        Material::new(1.0, 0.3, 0.1).unwrap()
    }

    #[test]
    fn affine_deflections_with_their_correction_pass() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 9, 9).unwrap();
        let m = mat();
        let bc = BoundarySpec::free(&g);
        let w = g.sample(|x, y| 0.3 * x - 0.2 * y + 0.1);
        let (z, _) = membrane_correction(&g, &w, &m).unwrap();
        let seq: Vec<_> = [1e-1, 1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&e| (z.scaled(e * e), w.clone(), e))
            .collect();
        let r = uniform_ps_check(&g, &seq, &m, &LoadSpec::none(), &bc, 1.0).unwrap();
        assert!(r.iter().all(|e| e.pass), "{r:?}");
    }

    #[test]
    fn constant_sequence_at_noncritical_point_fails() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 9, 9).unwrap();
        let m = mat();
        let bc = BoundarySpec::whole_boundary(&g, BcClass::A1);
        let w = g
            .apply_bc(
                &g.sample(|x, y| (x * y * (1.0 - x) * (1.0 - y)) * 16.0),
                &bc,
            )
            .unwrap();
        let u = VectorField2::zeros(g.node_count());
        let seq: Vec<_> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&e| (u.clone(), w.clone(), e))
            .collect();
        let r = uniform_ps_check(&g, &seq, &m, &LoadSpec::none(), &bc, 1e6).unwrap();
        assert!(r[0].pass);
        assert!(r[1..].iter().all(|e| !e.decreasing && !e.pass));
    }
}
