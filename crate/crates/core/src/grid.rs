//! Structured grids, nodal fields and finite-difference operators.
//!
//! Nodes are stored with the first axis fastest: `k = j * n1 + i`, where the
//! first axis is `x` (rectangle) or `r` (annulus) and the second is `y` or
//! the periodic angle `theta`.
//!
//! First derivatives default to a summation-by-parts (SBP) operator: central
//! differences in the interior and first-order one-sided rows at the ends,
//! paired with trapezoidal weights. Against those weights the operator obeys
//! a discrete divergence theorem, so constant-strain states are exact
//! discrete equilibria. [`Closure::SecondOrder`] swaps in second-order
//! one-sided rows for pointwise derivative evaluation.

use crate::error::{invalid, Error, Result};
use crate::material::Sym2;
use crate::numeric::pairwise_sum_by;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Boundary row treatment for first derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Closure {
    /// First-order one-sided rows; summation-by-parts with trapezoid weights.
    #[default]
    SummationByParts,
    /// Second-order one-sided rows; exact on quadratics.
    SecondOrder,
}

/// Sparse 1D operator stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Op1d {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Op1d {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// First derivative on `n` equispaced nodes with spacing `h`.
    pub fn first_derivative(n: usize, h: f64, closure: Closure) -> Self {
        let mut rows = Vec::with_capacity(n);
        let c = 0.5 / h;
        for i in 0..n {
            let row = if i == 0 {
                match closure {
                    Closure::SummationByParts => vec![(0, -1.0 / h), (1, 1.0 / h)],
                    Closure::SecondOrder => vec![(0, -3.0 * c), (1, 4.0 * c), (2, -c)],
                }
            } else if i == n - 1 {
                match closure {
                    Closure::SummationByParts => vec![(n - 2, -1.0 / h), (n - 1, 1.0 / h)],
                    Closure::SecondOrder => vec![(n - 3, c), (n - 2, -4.0 * c), (n - 1, 3.0 * c)],
                }
            } else {
                vec![(i - 1, -c), (i + 1, c)]
            };
            rows.push(row);
        }
        Self { rows }
    }

    /// Compact second difference; each end row copies its neighbour's stencil.
    pub fn second_derivative(n: usize, h: f64) -> Self {
        let s = 1.0 / (h * h);
        let rows = (0..n)
            .map(|i| {
                let m = i.clamp(1, n - 2);
                vec![(m - 1, s), (m, -2.0 * s), (m + 1, s)]
            })
            .collect();
        Self { rows }
    }

    /// Periodic central first difference, exact on the first harmonic.
    pub fn periodic_first(n: usize, dt: f64) -> Self {
        let c = 0.5 / dt.sin();
        let rows = (0..n)
            .map(|j| vec![((j + n - 1) % n, -c), ((j + 1) % n, c)])
            .collect();
        Self { rows }
    }

    /// Periodic second difference, exact on the first harmonic.
    pub fn periodic_second(n: usize, dt: f64) -> Self {
        let s = 1.0 / (2.0 * (1.0 - dt.cos()));
        let rows = (0..n)
            .map(|j| vec![((j + n - 1) % n, s), (j, -2.0 * s), ((j + 1) % n, s)])
            .collect();
        Self { rows }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(c, v)| v * f[c]).sum())
            .collect()
    }

    /// `out += A^T g`.
    pub fn apply_t_add(&self, g: &[f64], out: &mut [f64]) {
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, v) in r {
                out[c] += v * g[i];
            }
        }
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut d = vec![vec![0.0; n]; n];
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, v) in r {
                d[i][c] += v;
            }
        }
        d
    }

    /// Applies the operator along `axis` of an `n1 x n2` array.
    fn apply_axis(&self, axis: usize, n1: usize, n2: usize, f: &[f64], out: &mut [f64]) {
        if axis == 0 {
            for j in 0..n2 {
                let b = j * n1;
                for (i, r) in self.rows.iter().enumerate() {
                    out[b + i] = r.iter().map(|&(c, v)| v * f[b + c]).sum();
                }
            }
        } else {
            out.iter_mut().for_each(|x| *x = 0.0);
            for (j, r) in self.rows.iter().enumerate() {
                for &(c, v) in r {
                    let (dst, src) = (j * n1, c * n1);
                    for i in 0..n1 {
                        out[dst + i] += v * f[src + i];
                    }
                }
            }
        }
    }

    /// `out += (operator along axis)^T g`.
    fn apply_axis_t_add(&self, axis: usize, n1: usize, n2: usize, g: &[f64], out: &mut [f64]) {
        if axis == 0 {
            for j in 0..n2 {
                let b = j * n1;
                for (i, r) in self.rows.iter().enumerate() {
                    let gi = g[b + i];
                    for &(c, v) in r {
                        out[b + c] += v * gi;
                    }
                }
            }
        } else {
            for (j, r) in self.rows.iter().enumerate() {
                for &(c, v) in r {
                    let (src, dst) = (j * n1, c * n1);
                    for i in 0..n1 {
                        out[dst + i] += v * g[src + i];
                    }
                }
            }
        }
    }
}

/// Trapezoidal weights on `n` equispaced nodes.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
        .collect()
}

/// Grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridKind {
    Rectangle {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
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

/// Boundary edge label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Bottom,
    Right,
    Top,
    Left,
    Inner,
    Outer,
}

/// One boundary quadrature point. Rectangle corners appear once per edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub node: usize,
    /// Arc-length quadrature weight.
    pub weight: f64,
    /// Outward unit normal.
    pub normal: [f64; 2],
    /// Unit tangent `(-n2, n1)`, counterclockwise with the domain on the left.
    pub tangent: [f64; 2],
    pub edge: Edge,
    /// Node one layer inward along the normal.
    pub inward: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarField(pub Vec<f64>);

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn max_abs(&self) -> f64 {
        crate::numeric::max_abs(&self.0)
    }
    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| s * v).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorField2 {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorField2 {
    pub fn zeros(n: usize) -> Self {
        Self {
            x: vec![0.0; n],
            y: vec![0.0; n],
        }
    }
    pub fn len(&self) -> usize {
        self.x.len()
    }
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            x: self.x.iter().map(|v| s * v).collect(),
            y: self.y.iter().map(|v| s * v).collect(),
        }
    }
    pub fn add(&self, o: &VectorField2) -> Self {
        Self {
            x: self.x.iter().zip(&o.x).map(|(a, b)| a + b).collect(),
            y: self.y.iter().zip(&o.y).map(|(a, b)| a + b).collect(),
        }
    }
    pub fn max_abs(&self) -> f64 {
        crate::numeric::max_abs(&self.x).max(crate::numeric::max_abs(&self.y))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sym2Field(pub Vec<Sym2>);

impl Sym2Field {
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    /// Largest entrywise magnitude over all nodes.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, a| m.max(a.max_abs()))
    }
}

/// Boundary-condition class for the transverse displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BcClass {
    /// Clamped: `w = dw/dn = 0` on the constrained set.
    A0,
    /// Simply supported: `w = 0` on the constrained set.
    A1,
    /// Free.
    A2,
}

impl BcClass {
    pub fn name(&self) -> &'static str {
        match self {
            BcClass::A0 => "A0",
            BcClass::A1 => "A1",
            BcClass::A2 => "A2",
        }
    }
}

/// Boundary class plus the node mask of the constrained boundary part.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    pub class: BcClass,
    /// One flag per node; only boundary nodes may be set.
    pub gamma: Vec<bool>,
}

impl BoundarySpec {
    pub fn free(grid: &Grid) -> Self {
        Self {
            class: BcClass::A2,
            gamma: vec![false; grid.node_count()],
        }
    }

    pub fn whole_boundary(grid: &Grid, class: BcClass) -> Self {
        Self::from_predicate(grid, class, |_, _, _| true)
    }

    /// Marks the boundary nodes whose point satisfies `pred(x1, x2, edge)`.
    pub fn from_predicate(
        grid: &Grid,
        class: BcClass,
        pred: impl Fn(f64, f64, Edge) -> bool,
    ) -> Self {
        let mut gamma = vec![false; grid.node_count()];
        for b in grid.boundary() {
            let [x, y] = grid.coord(b.node);
            if pred(x, y, b.edge) {
                gamma[b.node] = true;
            }
        }
        Self { class, gamma }
    }

    pub fn gamma_count(&self) -> usize {
        self.gamma.iter().filter(|&&g| g).count()
    }
}

#[derive(Debug, Clone)]
struct Polar {
    r: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// Immutable structured grid with its operators.
#[derive(Debug, Clone)]
pub struct Grid {
    kind: GridKind,
    n1: usize,
    n2: usize,
    h1: f64,
    h2: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    weights: Vec<f64>,
    boundary: Vec<BoundaryPoint>,
    d1: Op1d,
    d2: Op1d,
    dd1: Op1d,
    dd2: Op1d,
    polar: Option<Polar>,
}

fn check_range(a: f64, b: f64, what: &str) -> Result<()> {
    if a.is_finite() && b.is_finite() && a < b {
        Ok(())
    } else {
        Err(invalid(format!(
            "{what} range must satisfy lo < hi, got ({a}, {b})"
        )))
    }
}

impl Grid {
    /// Tensor grid on `[x0, x1] x [y0, y1]` with `nx * ny` nodes.
    pub fn rectangle(
        x_range: (f64, f64),
        y_range: (f64, f64),
        nx: usize,
        ny: usize,
    ) -> Result<Self> {
        let (x0, x1) = x_range;
        let (y0, y1) = y_range;
        check_range(x0, x1, "x")?;
        check_range(y0, y1, "y")?;
        if nx < 3 || ny < 3 {
            return Err(invalid(format!(
                "rectangle needs at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        let hx = (x1 - x0) / (nx - 1) as f64;
        let hy = (y1 - y0) / (ny - 1) as f64;
        let n = nx * ny;
        let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let wx = trapezoid_weights(nx, hx);
        let wy = trapezoid_weights(ny, hy);
        let mut weights = Vec::with_capacity(n);
        for j in 0..ny {
            for i in 0..nx {
                // Pin the last node to the exact endpoint.
                x.push(if i == nx - 1 { x1 } else { x0 + i as f64 * hx });
                y.push(if j == ny - 1 { y1 } else { y0 + j as f64 * hy });
                weights.push(wx[i] * wy[j]);
            }
        }
        let idx = |i: usize, j: usize| j * nx + i;
        let mut boundary = Vec::with_capacity(2 * (nx + ny));
        let mut push = |node: usize, weight: f64, normal: [f64; 2], edge: Edge, inward: usize| {
            boundary.push(BoundaryPoint {
                node,
                weight,
                normal,
                tangent: [-normal[1], normal[0]],
                edge,
                inward,
            })
        };
        for i in 0..nx {
            push(idx(i, 0), wx[i], [0.0, -1.0], Edge::Bottom, idx(i, 1));
        }
        for j in 0..ny {
            push(
                idx(nx - 1, j),
                wy[j],
                [1.0, 0.0],
                Edge::Right,
                idx(nx - 2, j),
            );
        }
        for i in 0..nx {
            push(idx(i, ny - 1), wx[i], [0.0, 1.0], Edge::Top, idx(i, ny - 2));
        }
        for j in 0..ny {
            push(idx(0, j), wy[j], [-1.0, 0.0], Edge::Left, idx(1, j));
        }
        Ok(Self {
            kind: GridKind::Rectangle {
                x0,
                x1,
                y0,
                y1,
                nx,
                ny,
            },
            n1: nx,
            n2: ny,
            h1: hx,
            h2: hy,
            x,
            y,
            weights,
            boundary,
            d1: Op1d::first_derivative(nx, hx, Closure::SummationByParts),
            d2: Op1d::first_derivative(ny, hy, Closure::SummationByParts),
            dd1: Op1d::second_derivative(nx, hx),
            dd2: Op1d::second_derivative(ny, hy),
            polar: None,
        })
    }

    /// Polar grid on `R1 <= r <= R2` with periodic angle `theta_j = 2 pi j / ntheta`.
    pub fn annulus(r1: f64, r2: f64, nr: usize, ntheta: usize) -> Result<Self> {
        check_range(r1, r2, "radius")?;
        if r1 <= 0.0 {
            return Err(invalid(format!("inner radius must be positive, got {r1}")));
        }
        if nr < 3 || ntheta < 3 {
            return Err(invalid(format!(
                "annulus needs nr, ntheta >= 3, got {nr}x{ntheta}"
            )));
        }
        let dr = (r2 - r1) / (nr - 1) as f64;
        let dt = 2.0 * PI / ntheta as f64;
        let wr = trapezoid_weights(nr, dr);
        let n = nr * ntheta;
        let (mut x, mut y, mut weights) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        let (mut rr, mut cc, mut ss) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for j in 0..ntheta {
            let (s, c) = (j as f64 * dt).sin_cos();
            for (i, wri) in wr.iter().enumerate() {
                let r = if i == nr - 1 { r2 } else { r1 + i as f64 * dr };
                x.push(r * c);
                y.push(r * s);
                weights.push(r * wri * dt);
                rr.push(r);
                cc.push(c);
                ss.push(s);
            }
        }
        let mut boundary = Vec::with_capacity(2 * ntheta);
        for (edge, i, r, sign, inward) in [
            (Edge::Inner, 0, r1, -1.0, 1),
            (Edge::Outer, nr - 1, r2, 1.0, nr - 2),
        ] {
            for j in 0..ntheta {
                let k = j * nr + i;
                let normal = [sign * cc[k], sign * ss[k]];
                boundary.push(BoundaryPoint {
                    node: k,
                    weight: r * dt,
                    normal,
                    tangent: [-normal[1], normal[0]],
                    edge,
                    inward: j * nr + inward,
                });
            }
        }
        Ok(Self {
            kind: GridKind::Annulus { r1, r2, nr, ntheta },
            n1: nr,
            n2: ntheta,
            h1: dr,
            h2: dt,
            x,
            y,
            weights,
            boundary,
            d1: Op1d::first_derivative(nr, dr, Closure::SummationByParts),
            d2: Op1d::periodic_first(ntheta, dt),
            dd1: Op1d::second_derivative(nr, dr),
            dd2: Op1d::periodic_second(ntheta, dt),
            polar: Some(Polar {
                r: rr,
                cos: cc,
                sin: ss,
            }),
        })
    }

    pub fn kind(&self) -> &GridKind {
        &self.kind
    }

    pub fn node_count(&self) -> usize {
        self.n1 * self.n2
    }

    /// `(n1, n2)`: nodes along the first and second axis.
    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// Spacing along the first and second axis (the second is an angle on annuli).
    pub fn spacing(&self) -> (f64, f64) {
        (self.h1, self.h2)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n1 + i
    }

    pub fn coord(&self, k: usize) -> [f64; 2] {
        [self.x[k], self.y[k]]
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn boundary(&self) -> &[BoundaryPoint] {
        &self.boundary
    }

    pub fn is_annulus(&self) -> bool {
        self.polar.is_some()
    }

    /// Radius of node `k` (annulus only).
    pub fn radius(&self, k: usize) -> Option<f64> {
        self.polar.as_ref().map(|p| p.r[k])
    }

    pub fn area(&self) -> f64 {
        crate::numeric::pairwise_sum(&self.weights)
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len == self.node_count() {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.node_count(),
                got: len,
            })
        }
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        ScalarField(self.x.iter().zip(&self.y).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn sample_vector(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> VectorField2 {
        let (mut vx, mut vy) = (
            Vec::with_capacity(self.node_count()),
            Vec::with_capacity(self.node_count()),
        );
        for (&x, &y) in self.x.iter().zip(&self.y) {
            let v = f(x, y);
            vx.push(v[0]);
            vy.push(v[1]);
        }
        VectorField2 { x: vx, y: vy }
    }

    // ---- raw operators on slices -------------------------------------------------

    fn axis(&self, op: &Op1d, axis: usize, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        op.apply_axis(axis, self.n1, self.n2, f, &mut out);
        out
    }

    /// Cartesian gradient `(d/dx1, d/dx2)` of nodal values.
    pub(crate) fn grad_raw(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.grad_raw_with(f, None)
    }

    fn grad_raw_with(&self, f: &[f64], first: Option<&Op1d>) -> (Vec<f64>, Vec<f64>) {
        let d1 = first.unwrap_or(&self.d1);
        match &self.polar {
            None => (self.axis(d1, 0, f), self.axis(&self.d2, 1, f)),
            Some(p) => {
                let fr = self.axis(d1, 0, f);
                let ft = self.axis(&self.d2, 1, f);
                let mut gx = fr.clone();
                let mut gy = fr;
                for k in 0..f.len() {
                    let (c, s, r) = (p.cos[k], p.sin[k], p.r[k]);
                    let (a, b) = (gx[k], ft[k] / r);
                    gx[k] = c * a - s * b;
                    gy[k] = s * a + c * b;
                }
                (gx, gy)
            }
        }
    }

    /// `out += D1^T gx + D2^T gy`: adjoint of [`Self::grad_raw`].
    pub(crate) fn grad_adjoint_add(&self, gx: &[f64], gy: &[f64], out: &mut [f64]) {
        let (n1, n2) = (self.n1, self.n2);
        match &self.polar {
            None => {
                self.d1.apply_axis_t_add(0, n1, n2, gx, out);
                self.d2.apply_axis_t_add(1, n1, n2, gy, out);
            }
            Some(p) => {
                let n = gx.len();
                let mut ar = vec![0.0; n];
                let mut at = vec![0.0; n];
                for k in 0..n {
                    let (c, s, r) = (p.cos[k], p.sin[k], p.r[k]);
                    ar[k] = c * gx[k] + s * gy[k];
                    at[k] = (-s * gx[k] + c * gy[k]) / r;
                }
                self.d1.apply_axis_t_add(0, n1, n2, &ar, out);
                self.d2.apply_axis_t_add(1, n1, n2, &at, out);
            }
        }
    }

    /// Cartesian Hessian components `(h11, h12, h22)`.
    pub(crate) fn hess_raw(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        match &self.polar {
            None => {
                let h11 = self.axis(&self.dd1, 0, f);
                let h22 = self.axis(&self.dd2, 1, f);
                let fy = self.axis(&self.d2, 1, f);
                let h12 = self.axis(&self.d1, 0, &fy);
                (h11, h12, h22)
            }
            Some(p) => {
                let frr = self.axis(&self.dd1, 0, f);
                let fr = self.axis(&self.d1, 0, f);
                let ft = self.axis(&self.d2, 1, f);
                let frt = self.axis(&self.d1, 0, &ft);
                let ftt = self.axis(&self.dd2, 1, f);
                let n = f.len();
                let (mut h11, mut h12, mut h22) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                for k in 0..n {
                    let (c, s, r) = (p.cos[k], p.sin[k], p.r[k]);
                    let hrr = frr[k];
                    let hrt = frt[k] / r - ft[k] / (r * r);
                    let htt = fr[k] / r + ftt[k] / (r * r);
                    h11[k] = c * c * hrr - 2.0 * c * s * hrt + s * s * htt;
                    h12[k] = c * s * (hrr - htt) + (c * c - s * s) * hrt;
                    h22[k] = s * s * hrr + 2.0 * c * s * hrt + c * c * htt;
                }
                (h11, h12, h22)
            }
        }
    }

    /// `out += H11^T b11 + H12^T b12 + H22^T b22`: adjoint of [`Self::hess_raw`].
    pub(crate) fn hess_adjoint_add(&self, b11: &[f64], b12: &[f64], b22: &[f64], out: &mut [f64]) {
        let (n1, n2) = (self.n1, self.n2);
        match &self.polar {
            None => {
                self.dd1.apply_axis_t_add(0, n1, n2, b11, out);
                self.dd2.apply_axis_t_add(1, n1, n2, b22, out);
                let mut t = vec![0.0; b12.len()];
                self.d1.apply_axis_t_add(0, n1, n2, b12, &mut t);
                self.d2.apply_axis_t_add(1, n1, n2, &t, out);
            }
            Some(p) => {
                let n = b11.len();
                let (mut brr, mut brt_r, mut brt_r2, mut btt_r, mut btt_r2) = (
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                );
                for k in 0..n {
                    let (c, s, r) = (p.cos[k], p.sin[k], p.r[k]);
                    let rr = c * c * b11[k] + c * s * b12[k] + s * s * b22[k];
                    let rt =
                        -2.0 * c * s * b11[k] + (c * c - s * s) * b12[k] + 2.0 * c * s * b22[k];
                    let tt = s * s * b11[k] - c * s * b12[k] + c * c * b22[k];
                    brr[k] = rr;
                    brt_r[k] = rt / r;
                    brt_r2[k] = -rt / (r * r);
                    btt_r[k] = tt / r;
                    btt_r2[k] = tt / (r * r);
                }
                self.dd1.apply_axis_t_add(0, n1, n2, &brr, out);
                let mut t = vec![0.0; n];
                self.d1.apply_axis_t_add(0, n1, n2, &brt_r, &mut t);
                for (ti, b) in t.iter_mut().zip(&brt_r2) {
                    *ti += b;
                }
                self.d2.apply_axis_t_add(1, n1, n2, &t, out);
                self.d1.apply_axis_t_add(0, n1, n2, &btt_r, out);
                self.dd2.apply_axis_t_add(1, n1, n2, &btt_r2, out);
            }
        }
    }

    /// Symmetric gradient `E(u)` as component slices.
    pub(crate) fn strain_raw(&self, ux: &[f64], uy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (a, b) = self.grad_raw(ux);
        let (c, d) = self.grad_raw(uy);
        let e12 = b.iter().zip(&c).map(|(p, q)| 0.5 * (p + q)).collect();
        (a, e12, d)
    }

    // ---- public field operators --------------------------------------------------

    pub fn grad_scalar(&self, w: &ScalarField) -> Result<VectorField2> {
        self.grad_scalar_with(w, Closure::SummationByParts)
    }

    /// Gradient with an explicit boundary closure for the non-periodic axes.
    pub fn grad_scalar_with(&self, w: &ScalarField, closure: Closure) -> Result<VectorField2> {
        self.check_len(w.len())?;
        let (gx, gy) = match closure {
            Closure::SummationByParts => self.grad_raw(&w.0),
            Closure::SecondOrder => {
                let d1 = Op1d::first_derivative(self.n1, self.h1, closure);
                if self.polar.is_some() {
                    self.grad_raw_with(&w.0, Some(&d1))
                } else {
                    let d2 = Op1d::first_derivative(self.n2, self.h2, closure);
                    (self.axis(&d1, 0, &w.0), self.axis(&d2, 1, &w.0))
                }
            }
        };
        Ok(VectorField2 { x: gx, y: gy })
    }

    pub fn hessian_scalar(&self, w: &ScalarField) -> Result<Sym2Field> {
        self.check_len(w.len())?;
        let (a, b, c) = self.hess_raw(&w.0);
        Ok(zip_sym(&a, &b, &c))
    }

    pub fn sym_grad_vector(&self, u: &VectorField2) -> Result<Sym2Field> {
        self.check_len(u.x.len())?;
        self.check_len(u.y.len())?;
        let (a, b, c) = self.strain_raw(&u.x, &u.y);
        Ok(zip_sym(&a, &b, &c))
    }

    /// `D(u, w) = E(u) + (1/2) Dw ⊗ Dw`.
    pub fn stretching(&self, u: &VectorField2, w: &ScalarField) -> Result<Sym2Field> {
        let mut e = self.sym_grad_vector(u)?;
        let g = self.grad_scalar(w)?;
        for (k, a) in e.0.iter_mut().enumerate() {
            *a = *a + 0.5 * Sym2::outer([g.x[k], g.y[k]]);
        }
        Ok(e)
    }

    /// Trapezoidal integral of nodal values.
    pub fn integrate(&self, f: &ScalarField) -> Result<f64> {
        self.check_len(f.len())?;
        Ok(self.integrate_slice(&f.0))
    }

    pub(crate) fn integrate_slice(&self, f: &[f64]) -> f64 {
        pairwise_sum_by(f.len(), |k| self.weights[k] * f[k])
    }

    /// Integral over the boundary of values given per boundary point.
    pub fn boundary_integrate(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.boundary.len() {
            return Err(Error::GridMismatch {
                expected: self.boundary.len(),
                got: f.len(),
            });
        }
        Ok(pairwise_sum_by(f.len(), |b| self.boundary[b].weight * f[b]))
    }

    /// Boundary integral of a nodal field sampled at the boundary points.
    pub fn boundary_integrate_nodal(&self, f: &ScalarField) -> Result<f64> {
        self.check_len(f.len())?;
        Ok(pairwise_sum_by(self.boundary.len(), |b| {
            let p = &self.boundary[b];
            p.weight * f.0[p.node]
        }))
    }

    // ---- boundary conditions -----------------------------------------------------

    /// Mask of transverse degrees of freedom fixed at zero.
    ///
    /// A1 fixes the nodes of the constrained set. A0 also fixes the first
    /// inward layer, so the one-sided normal difference vanishes there.
    pub fn constrained_mask(&self, bc: &BoundarySpec) -> Result<Vec<bool>> {
        self.check_len(bc.gamma.len())?;
        let mut fixed = vec![false; self.node_count()];
        if bc.class == BcClass::A2 {
            return Ok(fixed);
        }
        if bc.gamma_count() == 0 {
            return Err(Error::EmptyGamma(bc.class.name()));
        }
        for b in &self.boundary {
            if bc.gamma[b.node] {
                fixed[b.node] = true;
                if bc.class == BcClass::A0 {
                    fixed[b.inward] = true;
                }
            }
        }
        Ok(fixed)
    }

    pub fn apply_bc(&self, w: &ScalarField, bc: &BoundarySpec) -> Result<ScalarField> {
        self.check_len(w.len())?;
        let fixed = self.constrained_mask(bc)?;
        Ok(ScalarField(
            w.0.iter()
                .zip(&fixed)
                .map(|(&v, &f)| if f { 0.0 } else { v })
                .collect(),
        ))
    }

    /// Zeroes the gradient components of constrained degrees of freedom.
    pub fn project_bc_grad(&self, g: &ScalarField, bc: &BoundarySpec) -> Result<ScalarField> {
        self.apply_bc(g, bc)
    }

    // ---- rigid motions -----------------------------------------------------------

    fn centroid(&self) -> [f64; 2] {
        let a = self.area();
        [
            self.integrate_slice(&self.x) / a,
            self.integrate_slice(&self.y) / a,
        ]
    }

    /// Coefficients of the L2 projection onto translations and the rotation.
    pub(crate) fn rigid_coefficients(&self, ux: &[f64], uy: &[f64]) -> [f64; 3] {
        let a = self.area();
        let [xc, yc] = self.centroid();
        let rot = pairwise_sum_by(ux.len(), |k| {
            self.weights[k] * (-(self.y[k] - yc) * ux[k] + (self.x[k] - xc) * uy[k])
        });
        let rot_norm = pairwise_sum_by(ux.len(), |k| {
            let (dx, dy) = (self.x[k] - xc, self.y[k] - yc);
            self.weights[k] * (dx * dx + dy * dy)
        });
        [
            self.integrate_slice(ux) / a,
            self.integrate_slice(uy) / a,
            rot / rot_norm,
        ]
    }

    fn rigid_field(&self, c: [f64; 3]) -> VectorField2 {
        let [xc, yc] = self.centroid();
        self.sample_vector(|x, y| [c[0] - c[2] * (y - yc), c[1] + c[2] * (x - xc)])
    }

    /// L2 projection of `u` onto span{(1,0), (0,1), (-x2, x1)}.
    pub fn rigid_project(&self, u: &VectorField2) -> Result<VectorField2> {
        self.check_len(u.x.len())?;
        self.check_len(u.y.len())?;
        Ok(self.rigid_field(self.rigid_coefficients(&u.x, &u.y)))
    }

    /// Removes the rigid part in place.
    pub(crate) fn remove_rigid(&self, ux: &mut [f64], uy: &mut [f64]) {
        let c = self.rigid_coefficients(ux, uy);
        let r = self.rigid_field(c);
        for k in 0..ux.len() {
            ux[k] -= r.x[k];
            uy[k] -= r.y[k];
        }
    }

    /// Removes the weighted mean in place.
    pub(crate) fn remove_mean(&self, f: &mut [f64]) {
        let m = self.integrate_slice(f) / self.area();
        f.iter_mut().for_each(|v| *v -= m);
    }
}

fn zip_sym(a: &[f64], b: &[f64], c: &[f64]) -> Sym2Field {
    Sym2Field(
        a.iter()
            .zip(b)
            .zip(c)
            .map(|((&p, &q), &r)| Sym2::new(p, q, r))
            .collect(),
    )
}
