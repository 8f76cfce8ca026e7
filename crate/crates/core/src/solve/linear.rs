//! Conjugate-gradient solves for the quadratic membrane problems.
//!
//! Both problems share the stiffness `K v = ∇ ∫ J(E(v))`, whose kernel is
//! exactly the discrete rigid motions. Iterates are kept Euclidean-orthogonal
//! to that kernel, so a consistent right-hand side gives a unique answer.

use crate::energy::{total_energy, traction_resultant, Functional, LoadSpec, Weights};
use crate::error::{Error, Result};
use crate::grid::{BoundarySpec, Grid, ScalarField, VectorField2};
use crate::material::Material;
use crate::numeric::{axpy, dot, norm2};

const REL_TOL: f64 = 1e-12;

/// Minimizer of `∫ J(E(v)) - ∮ f·v` for the unscaled traction.
#[derive(Debug, Clone, PartialEq)]
pub struct InplaneSolution {
    pub v: VectorField2,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// The flat minimizer `u* = h^alpha v*` of the plate functional and its energy.
#[derive(Debug, Clone, PartialEq)]
pub struct InplaneMinimum {
    pub u_star: VectorField2,
    /// `F_h(u*, 0)`, the reference subtracted in the scaled energies.
    pub energy: f64,
    pub solution: InplaneSolution,
}

fn stiffness<'g>(grid: &'g Grid, m: &Material) -> Result<Functional<'g>> {
    let w = Weights {
        membrane: 1.0,
        bending: 0.0,
        inplane: 0.0,
        transverse: 0.0,
    };
    Functional::new(grid, m, w, &LoadSpec::none())
}

/// Euclidean orthonormal basis of the nodal rigid motions, stacked `[x; y]`.
fn rigid_basis(grid: &Grid) -> Vec<Vec<f64>> {
    let n = grid.node_count();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(3);
    let raw = [
        [vec![1.0; n], vec![0.0; n]].concat(),
        [vec![0.0; n], vec![1.0; n]].concat(),
        {
            let mut r = vec![0.0; 2 * n];
            for k in 0..n {
                let [x, y] = grid.coord(k);
                r[k] = -y;
                r[n + k] = x;
            }
            r
        },
    ];
    for mut v in raw {
        for b in &basis {
            let c = dot(b, &v);
            axpy(-c, b, &mut v);
        }
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        basis.push(v);
    }
    basis
}

fn project_off(basis: &[Vec<f64>], v: &mut [f64]) {
    for b in basis {
        let c = dot(b, v);
        axpy(-c, b, v);
    }
}

/// Solves `K x = rhs` on the rigid complement; `rhs` must be rigid-orthogonal.
fn solve_stiffness(
    grid: &Grid,
    m: &Material,
    rhs: &[f64],
    what: &'static str,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = grid.node_count();
    let k = stiffness(grid, m)?;
    let basis = rigid_basis(grid);
    let zeros = vec![0.0; n];
    let mut gw = vec![0.0; n];
    let mut apply = |x: &[f64], out: &mut [f64]| {
        let (ox, oy) = out.split_at_mut(n);
        k.energy_and_grad(&x[..n], &x[n..], &zeros, ox, oy, &mut gw);
    };
    // Jacobi-like scaling by the lumped mass keeps boundary rows balanced.
    let inv_w: Vec<f64> = grid.weights().iter().map(|w| 1.0 / w).collect();
    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..2 * n {
            z[i] = r[i] * inv_w[i % n];
        }
    };

    let mut b = rhs.to_vec();
    project_off(&basis, &mut b);
    let bnorm = norm2(&b);
    let mut x = vec![0.0; 2 * n];
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut r = b;
    let mut z = vec![0.0; 2 * n];
    precond(&r, &mut z);
    project_off(&basis, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut kp = vec![0.0; 2 * n];
    let max_iters = 20 * 2 * n + 100;
    for it in 1..=max_iters {
        apply(&p, &mut kp);
        let pkp = dot(&p, &kp);
        if !(pkp > 0.0) {
            return Err(Error::NoConvergence {
                what,
                iterations: it,
                residual: norm2(&r) / bnorm,
            });
        }
        let a = rz / pkp;
        axpy(a, &p, &mut x);
        axpy(-a, &kp, &mut r);
        project_off(&basis, &mut r);
        let rel = norm2(&r) / bnorm;
        if rel <= REL_TOL {
            project_off(&basis, &mut x);
            return Ok((x, it, rel));
        }
        precond(&r, &mut z);
        project_off(&basis, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..2 * n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        what,
        iterations: max_iters,
        residual: norm2(&r) / bnorm,
    })
}

/// Solves the linear in-plane problem for the unscaled traction of `load`.
pub fn solve_inplane(grid: &Grid, m: &Material, load: &LoadSpec) -> Result<InplaneSolution> {
    m.validate()?;
    let t = load.resolve(grid)?;
    let n = grid.node_count();
    let mut rhs = vec![0.0; 2 * n];
    for (b, v) in grid.boundary().iter().zip(&t) {
        rhs[b.node] += b.weight * v[0];
        rhs[n + b.node] += b.weight * v[1];
    }
    let total = norm2(&rhs);
    let mut rigid_part = rhs.clone();
    let mut off = rhs.clone();
    project_off(&rigid_basis(grid), &mut off);
    for (a, o) in rigid_part.iter_mut().zip(&off) {
        *a -= o;
    }
    let rel = if total > 0.0 {
        norm2(&rigid_part) / total
    } else {
        0.0
    };
    if rel > 1e-8 {
        let [fx, fy, mz] = traction_resultant(grid, &t);
        return Err(Error::NotEquilibrated(fx.abs().max(fy.abs()).max(mz.abs())));
    }
    let (x, iterations, relative_residual) =
        solve_stiffness(grid, m, &rhs, "in-plane conjugate gradient")?;
    Ok(InplaneSolution {
        v: VectorField2 {
            x: x[..n].to_vec(),
            y: x[n..].to_vec(),
        },
        iterations,
        relative_residual,
    })
}

/// Flat minimizer `u* = h^alpha v*` and `F_h(u*, 0)`.
pub fn min_inplane(grid: &Grid, m: &Material, load: &LoadSpec) -> Result<InplaneMinimum> {
    let solution = solve_inplane(grid, m, load)?;
    let u_star = solution.v.scaled(m.thickness.powf(load.alpha));
    let bc = BoundarySpec::free(grid);
    let energy = total_energy(
        grid,
        &u_star,
        &ScalarField::zeros(grid.node_count()),
        m,
        load,
        &bc,
    )?
    .total;
    Ok(InplaneMinimum {
        u_star,
        energy,
        solution,
    })
}

/// Minimizer `z_w` of `Q_w(z) = ∫ J(E(z) + Dw⊗Dw/2)` with its rigid part
/// removed, together with `min Q_w`.
pub fn membrane_correction(
    grid: &Grid,
    w: &ScalarField,
    m: &Material,
) -> Result<(VectorField2, f64)> {
    grid.check_len(w.len())?;
    let n = grid.node_count();
    let q = stiffness(grid, m)?;
    let zeros = vec![0.0; n];
    let (mut gx, mut gy, mut gw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    q.energy_and_grad(&zeros, &zeros, &w.0, &mut gx, &mut gy, &mut gw);
    let rhs: Vec<f64> = gx.iter().chain(&gy).map(|v| -v).collect();
    let (x, _, _) = solve_stiffness(grid, m, &rhs, "membrane correction")?;
    let mut z = VectorField2 {
        x: x[..n].to_vec(),
        y: x[n..].to_vec(),
    };
    grid.remove_rigid(&mut z.x, &mut z.y);
    let min_q = q.energy(&z.x, &z.y, &w.0).membrane;
    Ok((z, min_q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Traction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat() -> Material {
        Material::new(2.0, 0.25, 0.05).unwrap()
    }

    #[test]
    fn pressure_gives_uniform_strain() {
        let m = mat();
        let g = Grid::rectangle((0.0, 1.5), (0.0, 1.0), 13, 9).unwrap();
        let f = -0.3;
        let load = LoadSpec::traction(Traction::NormalPressure(f));
        let s = solve_inplane(&g, &m, &load).unwrap();
        let e = g.sym_grad_vector(&s.v).unwrap();
        let expect = f * (1.0 - m.poisson) / m.young;
        for a in &e.0 {
            assert!(
                (a.a11 - expect).abs() < 1e-9
                    && (a.a22 - expect).abs() < 1e-9
                    && a.a12.abs() < 1e-9
            );
        }
    }

    #[test]
    fn min_inplane_matches_closed_form_energy() {
        let m = mat();
        let g = Grid::annulus(0.5, 1.0, 9, 24).unwrap();
        let f = 0.2;
        let alpha = 1.0;
        let load = LoadSpec::traction(Traction::NormalPressure(f)).with_alpha(alpha);
        let r = min_inplane(&g, &m, &load).unwrap();
        // Uniform isotropic strain; energy -h^(1+2 alpha) f^2 (1-nu) |Omega| / E.
        let expect =
            -m.thickness.powf(1.0 + 2.0 * alpha) * f * f * (1.0 - m.poisson) * g.area() / m.young;
        assert!(
            (r.energy - expect).abs() < 1e-9 * expect.abs(),
            "{} vs {expect}",
            r.energy
        );
    }

    #[test]
    fn unbalanced_load_is_rejected() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 7, 7).unwrap();
        let load = LoadSpec::traction(Traction::PerEdge(vec![crate::energy::EdgeLoad {
            edge: crate::grid::Edge::Left,
            normal: 1.0,
            tangential: 0.0,
        }]));
        assert!(matches!(
            solve_inplane(&g, &mat(), &load),
            Err(Error::NotEquilibrated(_))
        ));
    }

    #[test]
    fn zero_deflection_needs_no_correction() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 8, 8).unwrap();
        let (z, q) = membrane_correction(&g, &ScalarField::zeros(64), &mat()).unwrap();
        assert_eq!(q, 0.0);
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn one_dimensional_deflection_is_fully_absorbed() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 9, 41).unwrap();
        let w = g.sample(|_, y| (std::f64::consts::PI * y).sin() + 0.3 * y * y);
        let (z, q) = membrane_correction(&g, &w, &mat()).unwrap();
        let (_, q0) = {
            let n = g.node_count();
            let f = stiffness(&g, &mat()).unwrap();
            ((), f.energy(&vec![0.0; n], &vec![0.0; n], &w.0).membrane)
        };
        assert!(q < 1e-12 * q0, "{q} {q0}");
        // z2' = -w'^2/2 and z1 constant, up to the solver tolerance.
        let dw = g.grad_scalar(&w).unwrap();
        let dz = g.sym_grad_vector(&z).unwrap();
        for k in 0..g.node_count() {
            assert!(
                (dz.0[k].a22 + 0.5 * dw.y[k] * dw.y[k]).abs() < 1e-5,
                "{k} {}",
                dz.0[k].a22 + 0.5 * dw.y[k] * dw.y[k]
            );
            assert!(dz.0[k].a11.abs() < 1e-5);
        }
        let zx_spread = z.x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - z.x.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(zx_spread < 1e-5);
    }

    #[test]
    fn correction_beats_random_trials() {
        let m = mat();
        let g = Grid::annulus(0.4, 1.0, 8, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = ScalarField(
            (0..g.node_count())
                .map(|_| rng.gen_range(-0.1..0.1))
                .collect(),
        );
        let (z, qmin) = membrane_correction(&g, &w, &m).unwrap();
        let q = stiffness(&g, &m).unwrap();
        let n = g.node_count();
        let (mut gx, mut gy, mut gw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        q.energy_and_grad(&z.x, &z.y, &w.0, &mut gx, &mut gy, &mut gw);
        let res = norm2(&[gx, gy].concat());
        let (mut g0x, mut g0y) = (vec![0.0; n], vec![0.0; n]);
        q.energy_and_grad(
            &vec![0.0; n],
            &vec![0.0; n],
            &w.0,
            &mut g0x,
            &mut g0y,
            &mut gw,
        );
        assert!(res <= 1e-9 * norm2(&[g0x, g0y].concat()));
        for _ in 0..20 {
            let tx: Vec<f64> = z.x.iter().map(|v| v + rng.gen_range(-0.01..0.01)).collect();
            let ty: Vec<f64> = z.y.iter().map(|v| v + rng.gen_range(-0.01..0.01)).collect();
            assert!(qmin <= q.energy(&tx, &ty, &w.0).membrane);
        }
    }
}
