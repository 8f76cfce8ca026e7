//! Best Poincaré constant of the grid domain and the compression threshold it sets.

use crate::error::{Error, Result};
use crate::grid::{trapezoid_weights, Grid, GridKind};
use crate::material::{coercivity_constants, Material};
use crate::numeric::{axpy, dot, norm2};

/// Neumann Laplacian as a list of weighted edges: `u·Lu = Σ c (u_a - u_b)²`.
fn edges(grid: &Grid) -> Vec<(usize, usize, f64)> {
    let (n1, n2) = grid.shape();
    let (h1, h2) = grid.spacing();
    let mut e = Vec::with_capacity(2 * grid.node_count());
    match *grid.kind() {
        GridKind::Rectangle { .. } => {
            let w1 = trapezoid_weights(n1, h1);
            let w2 = trapezoid_weights(n2, h2);
            for j in 0..n2 {
                for i in 0..n1 - 1 {
                    e.push((grid.index(i, j), grid.index(i + 1, j), w2[j] / h1));
                }
            }
            for j in 0..n2 - 1 {
                for (i, wi) in w1.iter().enumerate() {
                    e.push((grid.index(i, j), grid.index(i, j + 1), wi / h2));
                }
            }
        }
        GridKind::Annulus { r1, .. } => {
            let wr = trapezoid_weights(n1, h1);
            for j in 0..n2 {
                for i in 0..n1 - 1 {
                    let rm = r1 + (i as f64 + 0.5) * h1;
                    e.push((grid.index(i, j), grid.index(i + 1, j), rm * h2 / h1));
                }
                let jn = (j + 1) % n2;
                for (i, wi) in wr.iter().enumerate() {
                    let r = r1 + i as f64 * h1;
                    e.push((grid.index(i, j), grid.index(i, jn), wi / (r * h2)));
                }
            }
        }
    }
    e
}

fn apply_laplacian(edges: &[(usize, usize, f64)], u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for &(a, b, c) in edges {
        let d = c * (u[a] - u[b]);
        out[a] += d;
        out[b] -= d;
    }
}

/// Projects `v` to zero Euclidean sum (the range of the Neumann Laplacian).
fn remove_sum(v: &mut [f64]) {
    let m = crate::numeric::pairwise_sum(v) / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Jacobi-preconditioned CG for `L x = b` with `b` of zero sum.
fn solve_neumann(edges: &[(usize, usize, f64)], diag: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let bn = norm2(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, d)| a / d).collect();
    remove_sum(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut lp = vec![0.0; n];
    let max_iters = 10 * n + 100;
    for _ in 0..max_iters {
        apply_laplacian(edges, &p, &mut lp);
        let a = rz / dot(&p, &lp);
        axpy(a, &p, &mut x);
        axpy(-a, &lp, &mut r);
        remove_sum(&mut r);
        if norm2(&r) <= 1e-13 * bn {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        remove_sum(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        what: "Neumann Laplacian solve",
        iterations: max_iters,
        residual: norm2(&r) / bn,
    })
}

/// `K(Ω) = 1/μ₁` with `μ₁` the smallest nonzero Neumann eigenvalue of the
/// grid Laplacian against the lumped mass, by inverse iteration on
/// mean-zero functions.
pub fn poincare_constant(grid: &Grid) -> Result<f64> {
    let n = grid.node_count();
    let w = grid.weights();
    let e = edges(grid);
    let mut diag = vec![0.0; n];
    for &(a, b, c) in &e {
        diag[a] += c;
        diag[b] += c;
    }
    // Generic start with components along both coordinate directions.
    let mut u: Vec<f64> = (0..n)
        .map(|k| {
            let [x, y] = grid.coord(k);
            x + 0.61 * y + 0.1 * (x * y).sin()
        })
        .collect();
    grid_remove_mean(w, &mut u);
    let mut lu = vec![0.0; n];
    let rayleigh = |u: &[f64], lu: &mut [f64]| {
        apply_laplacian(&e, u, lu);
        dot(u, lu) / crate::numeric::pairwise_sum_by(n, |k| w[k] * u[k] * u[k])
    };
    let mut mu = rayleigh(&u, &mut lu);
    let max_outer = 2000;
    for _ in 0..max_outer {
        let b: Vec<f64> = (0..n).map(|k| w[k] * u[k]).collect();
        let mut x = solve_neumann(&e, &diag, &b)?;
        grid_remove_mean(w, &mut x);
        let s = norm2(&x);
        x.iter_mut().for_each(|v| *v /= s);
        u = x;
        let next = rayleigh(&u, &mut lu);
        let done = (next - mu).abs() <= 1e-12 * next;
        mu = next;
        if done {
            return Ok(1.0 / mu);
        }
    }
    Err(Error::NoConvergence {
        what: "Poincaré inverse iteration",
        iterations: max_outer,
        residual: mu,
    })
}

fn grid_remove_mean(w: &[f64], u: &mut [f64]) {
    let a = crate::numeric::pairwise_sum(w);
    let m = crate::numeric::pairwise_sum_by(u.len(), |k| w[k] * u[k]) / a;
    u.iter_mut().for_each(|v| *v -= m);
}

/// Boundary pressure `-h² c_ν E / (12 K(Ω))` above which a supported plate
/// under uniform compression stays flat.
pub fn compression_threshold(m: &Material, grid: &Grid) -> Result<f64> {
    m.validate()?;
    let (c_nu, _) = coercivity_constants(m.poisson)?;
    let k = poincare_constant(grid)?;
    Ok(-m.thickness * m.thickness * c_nu * m.young / (12.0 * k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_square_constant() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 64, 64).unwrap();
        let k = poincare_constant(&g).unwrap();
        let rel = (k * PI * PI - 1.0).abs();
        assert!(rel < 0.02, "{k}");
    }

    #[test]
    fn long_rectangle_constant() {
        let l = 2.5;
        let g = Grid::rectangle((0.0, l), (0.0, 1.0), 101, 41).unwrap();
        let k = poincare_constant(&g).unwrap();
        assert!((k / (l * l / (PI * PI)) - 1.0).abs() < 0.02, "{k}");
    }

    #[test]
    fn constant_scales_with_area() {
        let g1 = Grid::rectangle((0.0, 1.3), (0.0, 1.0), 27, 21).unwrap();
        let g2 = Grid::rectangle((0.0, 3.9), (0.0, 3.0), 27, 21).unwrap();
        let (k1, k2) = (
            poincare_constant(&g1).unwrap(),
            poincare_constant(&g2).unwrap(),
        );
        assert!((k2 / (9.0 * k1) - 1.0).abs() < 1e-3);
        let a1 = Grid::annulus(0.5, 1.0, 9, 32).unwrap();
        let a2 = Grid::annulus(1.0, 2.0, 9, 32).unwrap();
        let (k1, k2) = (
            poincare_constant(&a1).unwrap(),
            poincare_constant(&a2).unwrap(),
        );
        assert!((k2 / (4.0 * k1) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn thin_annulus_approaches_circle_mode() {
        // A thin ring behaves like a circle of mean radius: mu1 ~ 1/R².
        let g = Grid::annulus(0.98, 1.02, 5, 128).unwrap();
        let k = poincare_constant(&g).unwrap();
        assert!((k - 1.0).abs() < 0.01, "{k}");
    }

    #[test]
    fn threshold_reference_value() {
        let m = Material::new(1.0, 0.0, 0.1).unwrap();
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 64, 64).unwrap();
        let t = compression_threshold(&m, &g).unwrap();
        let expect = -(0.01 / 12.0) * PI * PI;
        assert!((t / expect - 1.0).abs() < 0.02, "{t}");
        let m2 = m.with_thickness(0.05).unwrap();
        let t2 = compression_threshold(&m2, &g).unwrap();
        assert!((t2 / t - 0.25).abs() < 1e-12);
    }
}
