//! Pointwise constitutive algebra for the isotropic plate.
//!
//! The stored energy density of a symmetric strain `A` is
//! `J(A) = E/(2(1-nu^2)) (tr^2 A - 2(1-nu) det A)`,
//! equivalently `E/(2(1+nu)) |A|^2 + E nu/(2(1-nu^2)) tr^2 A`.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// Isotropic material together with the plate thickness scale `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Young modulus `E > 0`.
    pub young: f64,
    /// Poisson ratio, `-1 < nu < 1/2`.
    pub poisson: f64,
    /// Thickness scale `h > 0`.
    pub thickness: f64,
}

impl Material {
    pub fn new(young: f64, poisson: f64, thickness: f64) -> Result<Self> {
        let m = Self {
            young,
            poisson,
            thickness,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young.is_finite() && self.young > 0.0) {
            return Err(invalid(format!(
                "Young modulus must be positive, got {}",
                self.young
            )));
        }
        check_poisson(self.poisson)?;
        if !(self.thickness.is_finite() && self.thickness > 0.0) {
            return Err(invalid(format!(
                "thickness must be positive, got {}",
                self.thickness
            )));
        }
        Ok(())
    }

    /// Same constitutive law with a different thickness.
    pub fn with_thickness(&self, thickness: f64) -> Result<Self> {
        Self::new(self.young, self.poisson, thickness)
    }
}

fn check_poisson(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > -1.0 && nu < 0.5 {
        Ok(())
    } else {
        Err(invalid(format!(
            "Poisson ratio must lie in (-1, 1/2), got {nu}"
        )))
    }
}

/// Symmetric 2x2 tensor; only the upper triangle is stored.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        a11: 0.0,
        a12: 0.0,
        a22: 0.0,
    };
    pub const IDENTITY: Sym2 = Sym2 {
        a11: 1.0,
        a12: 0.0,
        a22: 1.0,
    };

    pub const fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22 }
    }

    pub const fn diag(a11: f64, a22: f64) -> Self {
        Self { a11, a12: 0.0, a22 }
    }

    /// `xi ⊗ xi`.
    pub fn outer(xi: [f64; 2]) -> Self {
        Self::new(xi[0] * xi[0], xi[0] * xi[1], xi[1] * xi[1])
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    /// Frobenius inner product `A : B`.
    pub fn ddot(&self, b: &Sym2) -> f64 {
        self.a11 * b.a11 + 2.0 * self.a12 * b.a12 + self.a22 * b.a22
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.a11.abs().max(self.a12.abs()).max(self.a22.abs())
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * x[0] + self.a12 * x[1],
            self.a12 * x[0] + self.a22 * x[1],
        ]
    }

    /// `Q^T A Q` for the rotation `Q` by angle `theta`.
    pub fn rotated(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        // Columns of Q are (c, s) and (-s, c).
        let q1 = [c, s];
        let q2 = [-s, c];
        let aq1 = self.apply(q1);
        let aq2 = self.apply(q2);
        Self::new(
            q1[0] * aq1[0] + q1[1] * aq1[1],
            q1[0] * aq2[0] + q1[1] * aq2[1],
            q2[0] * aq2[0] + q2[1] * aq2[1],
        )
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a22.is_finite()
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, b: Sym2) -> Sym2 {
        Sym2::new(self.a11 + b.a11, self.a12 + b.a12, self.a22 + b.a22)
    }
}

impl Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, b: Sym2) -> Sym2 {
        Sym2::new(self.a11 - b.a11, self.a12 - b.a12, self.a22 - b.a22)
    }
}

impl Neg for Sym2 {
    type Output = Sym2;
    fn neg(self) -> Sym2 {
        Sym2::new(-self.a11, -self.a12, -self.a22)
    }
}

impl Mul<Sym2> for f64 {
    type Output = Sym2;
    fn mul(self, a: Sym2) -> Sym2 {
        Sym2::new(self * a.a11, self * a.a12, self * a.a22)
    }
}

/// Ordered eigen-decomposition of a [`Sym2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigPair {
    pub lam1: f64,
    pub lam2: f64,
    pub v1: [f64; 2],
    pub v2: [f64; 2],
}

/// `J(A)`.
pub fn energy_density(a: &Sym2, m: &Material) -> f64 {
    let nu = m.poisson;
    let tr = a.trace();
    m.young / (2.0 * (1.0 - nu * nu)) * (tr * tr - 2.0 * (1.0 - nu) * a.det())
}

/// `J'(A) = E/(1+nu) A + E nu/(1-nu^2) tr(A) I`.
pub fn energy_density_grad(a: &Sym2, m: &Material) -> Sym2 {
    let nu = m.poisson;
    let e = m.young;
    let s = e / (1.0 + nu);
    let t = e * nu / (1.0 - nu * nu) * a.trace();
    Sym2::new(s * a.a11 + t, s * a.a12, s * a.a22 + t)
}

/// Makes the first nonzero component positive.
pub(crate) fn canonical_sign(v: [f64; 2]) -> [f64; 2] {
    const TINY: f64 = 1e-15;
    let flip = if v[0].abs() > TINY {
        v[0] < 0.0
    } else {
        v[1] < 0.0
    };
    if flip {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Closed-form eigen-decomposition with `lam1 <= lam2`.
///
/// A multiple of the identity returns the canonical axes. Eigenvectors carry
/// the sign convention "first nonzero component positive".
pub fn eig_sym2(a: &Sym2) -> EigPair {
    let mean = 0.5 * (a.a11 + a.a22);
    let half = 0.5 * (a.a11 - a.a22);
    let d = half.hypot(a.a12);
    let scale = a.max_abs();
    if d <= 4.0 * f64::EPSILON * scale || d == 0.0 {
        return EigPair {
            lam1: mean,
            lam2: mean,
            v1: [1.0, 0.0],
            v2: [0.0, 1.0],
        };
    }
    let lam1 = mean - d;
    let lam2 = mean + d;
    // Two null vectors of A - lam2 I; pick the better conditioned one.
    let c1 = [a.a12, lam2 - a.a11];
    let c2 = [lam2 - a.a22, a.a12];
    let n1 = c1[0].hypot(c1[1]);
    let n2 = c2[0].hypot(c2[1]);
    let v2 = if n1 >= n2 {
        [c1[0] / n1, c1[1] / n1]
    } else {
        [c2[0] / n2, c2[1] / n2]
    };
    let v1 = canonical_sign([v2[1], -v2[0]]);
    EigPair {
        lam1,
        lam2,
        v1,
        v2: canonical_sign(v2),
    }
}

/// `(c_nu, C_nu) = (min, max) of {1/(1-nu), 1/(1+nu)}`.
pub fn coercivity_constants(nu: f64) -> Result<(f64, f64)> {
    check_poisson(nu)?;
    let p = 1.0 / (1.0 - nu);
    let q = 1.0 / (1.0 + nu);
    Ok((p.min(q), p.max(q)))
}
