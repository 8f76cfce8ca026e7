//! One-dimensional buckling pencils `∫ w''² = k ∫ w'²`.
//!
//! Both forms are assembled as symmetric matrices on the unconstrained nodes
//! (constrained values are eliminated, not penalized), and the pencil is
//! reduced to a standard symmetric problem through the Cholesky factor of
//! `K + G`: if `C y = θ y` with `C = L⁻¹ K L⁻ᵀ`, then `k = θ / (1 - θ)`.

use crate::error::{invalid, Result};
use crate::grid::{trapezoid_weights, Closure, Op1d};
use crate::material::Material;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Boundary conditions at both ends of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BucklingBc {
    /// `w = w' = 0`.
    Clamped,
    /// `w = w'' = 0`.
    Supported,
    /// Natural conditions only.
    Free,
}

/// One eigenpair; the shape is normalized to `max |w| = 1` with a positive maximum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucklingMode {
    pub k: f64,
    pub x: Vec<f64>,
    pub shape: Vec<f64>,
}

/// Dense forms on all nodes plus the list of free nodes.
struct Pencil {
    x: Vec<f64>,
    k: DMatrix<f64>,
    g: DMatrix<f64>,
    free: Vec<usize>,
    /// Constants lie in the kernel of both forms and must be lifted.
    lift_constants: bool,
}

fn check_interval(interval: (f64, f64), nodes: usize, min_nodes: usize) -> Result<f64> {
    let (a, b) = interval;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(invalid(format!(
            "interval must satisfy a < b, got ({a}, {b})"
        )));
    }
    if nodes < min_nodes {
        return Err(invalid(format!(
            "need at least {min_nodes} nodes, got {nodes}"
        )));
    }
    Ok((b - a) / (nodes - 1) as f64)
}

fn nodes_on(interval: (f64, f64), n: usize, d: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i == n - 1 {
                interval.1
            } else {
                interval.0 + i as f64 * d
            }
        })
        .collect()
}

/// Central stencils with ghost-node elimination at the ends.
fn ghost_pencil(bc: BucklingBc, interval: (f64, f64), n: usize, d: f64) -> Pencil {
    let wt = trapezoid_weights(n, d);
    let mut k = DMatrix::zeros(n, n);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        let c = 1.0 / d;
        g[(i, i)] += c;
        g[(i + 1, i + 1)] += c;
        g[(i, i + 1)] -= c;
        g[(i + 1, i)] -= c;
    }
    let d2 = 1.0 / (d * d);
    // Row i of the second difference as (node, coefficient) after ghost elimination.
    let row = |i: usize| -> Vec<(usize, f64)> {
        let ghost = match bc {
            BucklingBc::Clamped => 1.0,
            BucklingBc::Supported => -1.0,
            BucklingBc::Free => 0.0,
        };
        if i == 0 {
            vec![(0, -2.0 * d2), (1, (1.0 + ghost) * d2)]
        } else if i == n - 1 {
            vec![(n - 1, -2.0 * d2), (n - 2, (1.0 + ghost) * d2)]
        } else {
            vec![(i - 1, d2), (i, -2.0 * d2), (i + 1, d2)]
        }
    };
    let rows: Vec<usize> = match bc {
        BucklingBc::Free => (1..n - 1).collect(),
        _ => (0..n).collect(),
    };
    for i in rows {
        let r = row(i);
        for &(a, ca) in &r {
            for &(b, cb) in &r {
                k[(a, b)] += wt[i] * ca * cb;
            }
        }
    }
    let free = match bc {
        BucklingBc::Free => (0..n).collect(),
        _ => (1..n - 1).collect(),
    };
    Pencil {
        x: nodes_on(interval, n, d),
        k,
        g,
        free,
        lift_constants: bc == BucklingBc::Free,
    }
}

fn solve_pencil(p: Pencil, count: usize) -> Result<Vec<BucklingMode>> {
    let m = p.free.len();
    let sub = |a: &DMatrix<f64>| DMatrix::from_fn(m, m, |i, j| a[(p.free[i], p.free[j])]);
    let (k, g) = (sub(&p.k), sub(&p.g));
    let mut mass = &k + &g;
    if p.lift_constants {
        let s = mass.diagonal().max() / m as f64;
        mass.add_scalar_mut(s);
    }
    let chol = mass
        .cholesky()
        .ok_or_else(|| invalid("buckling pencil is not positive definite"))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&k)
        .ok_or_else(|| invalid("singular Cholesky factor"))?;
    let mut c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| invalid("singular Cholesky factor"))?;
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut out = Vec::with_capacity(count);
    for idx in order {
        if out.len() == count {
            break;
        }
        let theta = eig.eigenvalues[idx];
        if 1.0 - theta < 1e-13 {
            continue;
        }
        let kval = theta / (1.0 - theta);
        if kval.abs() < 1e-8 {
            continue;
        }
        let y: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        let a = l
            .tr_solve_lower_triangular(&y)
            .ok_or_else(|| invalid("singular Cholesky factor"))?;
        let mut shape = vec![0.0; p.x.len()];
        for (i, &node) in p.free.iter().enumerate() {
            shape[node] = a[i];
        }
        normalize(&mut shape);
        out.push(BucklingMode {
            k: kval,
            x: p.x.clone(),
            shape,
        });
    }
    if out.len() < count {
        return Err(invalid(format!(
            "only {} buckling modes available, {count} requested",
            out.len()
        )));
    }
    Ok(out)
}

fn normalize(v: &mut [f64]) {
    let (mut best, mut at) = (0.0f64, 0);
    for (i, x) in v.iter().enumerate() {
        // Ties go to the first index so symmetric modes normalize deterministically.
        if x.abs() > best * (1.0 + 1e-12) {
            best = x.abs();
            at = i;
        }
    }
    if best == 0.0 {
        return;
    }
    let s = v[at].signum() / best;
    v.iter_mut().for_each(|x| *x *= s);
}

/// Smallest `count` eigenvalues of `w'''' = -k w''` on `interval` with `nodes`
/// grid points (at least 200), using second-order central stencils.
pub fn buckling_critical(
    bc: BucklingBc,
    interval: (f64, f64),
    nodes: usize,
    count: usize,
) -> Result<Vec<BucklingMode>> {
    let d = check_interval(interval, nodes, 200)?;
    solve_pencil(ghost_pencil(bc, interval, nodes, d), count)
}

/// Clamped pencil built from the plate grid's own one-dimensional operators:
/// summation-by-parts first derivative, compact second difference, trapezoid
/// weights, and two fixed nodes per end as in the clamped plate constraint.
/// A mode of this pencil at its eigenvalue makes the discrete limit energy of
/// the matching plate problem vanish to rounding.
pub fn pencil_modes(interval: (f64, f64), nodes: usize, count: usize) -> Result<Vec<BucklingMode>> {
    let d = check_interval(interval, nodes, 7)?;
    let wt = trapezoid_weights(nodes, d);
    let gram = |op: &Op1d| {
        let rows = op.to_dense();
        let dense = DMatrix::from_fn(nodes, nodes, |i, j| rows[i][j]);
        let w = DMatrix::from_diagonal(&DVector::from_vec(wt.clone()));
        dense.transpose() * w * dense
    };
    let k = gram(&Op1d::second_derivative(nodes, d));
    let g = gram(&Op1d::first_derivative(nodes, d, Closure::SummationByParts));
    let p = Pencil {
        x: nodes_on(interval, nodes, d),
        k,
        g,
        free: (2..nodes - 2).collect(),
        lift_constants: false,
    };
    solve_pencil(p, count)
}

/// `h = sqrt(12 γ a (1-ν²) / (E k))` for uniaxial compression `γ` on a strip of stretch `a`.
pub fn critical_thickness_compression(m: &Material, gamma: f64, a: f64, k: f64) -> Result<f64> {
    critical(12.0 * gamma * a, m, k)
}

/// `h = sqrt(6 γ (1-ν²) / (E k))` for shear `γ`.
pub fn critical_thickness_shear(m: &Material, gamma: f64, k: f64) -> Result<f64> {
    critical(6.0 * gamma, m, k)
}

fn critical(load: f64, m: &Material, k: f64) -> Result<f64> {
    let v = load * (1.0 - m.poisson * m.poisson) / (m.young * k);
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid(format!(
            "critical thickness needs a positive load and eigenvalue, got {v}"
        )));
    }
    Ok(v.sqrt())
}
