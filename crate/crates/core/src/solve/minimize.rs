//! Limited-memory quasi-Newton descent with an Armijo line search and an
//! approximate-Wolfe fallback near rounding level.

use crate::energy::{traction_resultant, Functional, LoadSpec, Weights};
use crate::error::{invalid, Error, Result};
use crate::grid::{BcClass, BoundarySpec, Grid, ScalarField, VectorField2};
use crate::material::Material;
use crate::numeric::{all_finite, dot, max_abs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Relative energy band inside which steps are judged by slope alone.
const APPROX_WOLFE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop when the dual norm of the projected gradient drops below this.
    pub grad_tol: f64,
    /// Step shrink factor in `(0, 1)`.
    pub backtracking: f64,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    /// Stored curvature pairs; 0 means plain gradient descent.
    pub memory: usize,
    pub seed: u64,
    /// Energy below which the run is certified diverging; defaults to
    /// `-1e6 |E0 + 1|` with `E0` the initial energy.
    pub energy_floor: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            grad_tol: 1e-9,
            backtracking: 0.5,
            sufficient_decrease: 1e-4,
            memory: 10,
            seed: 0,
            energy_floor: None,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(invalid("grad_tol must be positive"));
        }
        if !(self.backtracking > 0.0 && self.backtracking < 1.0) {
            return Err(invalid("backtracking factor must lie in (0, 1)"));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(invalid("sufficient decrease constant must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    /// Accepted energies, starting with the initial one; nonincreasing.
    pub energy_history: Vec<f64>,
    pub converged: bool,
    pub diverging: bool,
}

impl SolveReport {
    pub fn final_energy(&self) -> f64 {
        *self.energy_history.last().unwrap_or(&f64::NAN)
    }
}

/// Which unknowns the minimizer moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unknowns {
    /// In-plane and transverse displacements.
    All,
    /// Transverse displacement only; the in-plane field stays at its initial value.
    TransverseOnly,
}

/// Flat state plus seeded uniform noise in `[-amplitude, amplitude]`,
/// with the transverse part projected onto the constraints.
pub fn flat_with_noise(
    grid: &Grid,
    bc: &BoundarySpec,
    amplitude: f64,
    seed: u64,
) -> Result<(VectorField2, ScalarField)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.node_count();
    let mut draw = || -> Vec<f64> {
        (0..n)
            .map(|_| amplitude * rng.gen_range(-1.0..=1.0))
            .collect()
    };
    let u = VectorField2 {
        x: draw(),
        y: draw(),
    };
    let w = grid.apply_bc(&ScalarField(draw()), bc)?;
    Ok((u, w))
}

/// Minimizes the plate functional `F_h`.
pub fn minimize(
    grid: &Grid,
    m: &Material,
    load: &LoadSpec,
    bc: &BoundarySpec,
    init: (&VectorField2, &ScalarField),
    opts: &SolveOptions,
) -> Result<(VectorField2, ScalarField, SolveReport)> {
    let f = Functional::new(grid, m, Weights::plate(m, load.alpha), load)?;
    minimize_functional(&f, bc, init, opts, Unknowns::All)
}

struct Problem<'a, 'g> {
    f: &'a Functional<'g>,
    n: usize,
    unknowns: Unknowns,
    fixed_w: Vec<bool>,
    u0: (Vec<f64>, Vec<f64>),
    gauge_rigid: bool,
    gauge_mean: bool,
    inv_weight: Vec<f64>,
}

impl Problem<'_, '_> {
    fn dim(&self) -> usize {
        match self.unknowns {
            Unknowns::All => 3 * self.n,
            Unknowns::TransverseOnly => self.n,
        }
    }

    fn split<'x>(&'x self, x: &'x [f64]) -> (&'x [f64], &'x [f64], &'x [f64]) {
        let n = self.n;
        match self.unknowns {
            Unknowns::All => (&x[..n], &x[n..2 * n], &x[2 * n..]),
            Unknowns::TransverseOnly => (&self.u0.0, &self.u0.1, x),
        }
    }

    fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let n = self.n;
        let (ux, uy, w) = self.split(x);
        let total = match self.unknowns {
            Unknowns::All => {
                let (gu, gw) = g.split_at_mut(2 * n);
                let (gx, gy) = gu.split_at_mut(n);
                self.f.energy_and_grad(ux, uy, w, gx, gy, gw).total
            }
            Unknowns::TransverseOnly => {
                let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
                self.f.energy_and_grad(ux, uy, w, &mut gx, &mut gy, g).total
            }
        };
        let off = self.dim() - n;
        for (k, &fx) in self.fixed_w.iter().enumerate() {
            if fx {
                g[off + k] = 0.0;
            }
        }
        total
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let (ux, uy, w) = self.split(x);
        self.f.energy(ux, uy, w).total
    }

    /// Dual norm `sqrt(sum g_k^2 / W_k)` of the gradient.
    fn residual(&self, g: &[f64]) -> f64 {
        let n = self.n;
        crate::numeric::pairwise_sum_by(g.len(), |i| g[i] * g[i] * self.inv_weight[i % n]).sqrt()
    }

    fn gauge(&self, x: &mut [f64]) {
        let n = self.n;
        let grid = self.f.grid();
        if self.unknowns == Unknowns::All && self.gauge_rigid {
            let (ux, rest) = x.split_at_mut(n);
            grid.remove_rigid(ux, &mut rest[..n]);
        }
        if self.gauge_mean {
            let off = self.dim() - n;
            grid.remove_mean(&mut x[off..]);
        }
    }
}

/// Minimizes any [`Functional`] under the transverse constraints of `bc`.
pub fn minimize_functional(
    f: &Functional<'_>,
    bc: &BoundarySpec,
    init: (&VectorField2, &ScalarField),
    opts: &SolveOptions,
    unknowns: Unknowns,
) -> Result<(VectorField2, ScalarField, SolveReport)> {
    opts.validate()?;
    let grid = f.grid();
    let n = grid.node_count();
    grid.check_len(init.0.x.len())?;
    grid.check_len(init.0.y.len())?;
    grid.check_len(init.1.len())?;
    let fixed_w = grid.constrained_mask(bc)?;
    let violations = fixed_w
        .iter()
        .zip(&init.1 .0)
        .filter(|(&fx, &v)| fx && v != 0.0)
        .count();
    if violations > 0 {
        return Err(Error::ConstraintViolation(violations));
    }

    let t = f.traction();
    let [fx, fy, mz] = traction_resultant(grid, t);
    let scale: f64 = grid
        .boundary()
        .iter()
        .zip(t)
        .map(|(b, v)| b.weight * v[0].hypot(v[1]))
        .sum::<f64>()
        .max(1e-300);
    let equilibrated = fx.abs().max(fy.abs()).max(mz.abs()) <= 1e-10 * scale * (1.0 + grid.area());
    let transverse_free = match &f_transverse_integral(f) {
        Some(s) => s.abs() <= 1e-12,
        None => true,
    };
    let problem = Problem {
        f,
        n,
        unknowns,
        fixed_w,
        u0: (init.0.x.clone(), init.0.y.clone()),
        gauge_rigid: equilibrated,
        gauge_mean: bc.class == BcClass::A2 && transverse_free,
        inv_weight: grid.weights().iter().map(|w| 1.0 / w).collect(),
    };

    let mut x: Vec<f64> = match unknowns {
        Unknowns::All => [&init.0.x[..], &init.0.y[..], &init.1 .0[..]].concat(),
        Unknowns::TransverseOnly => init.1 .0.clone(),
    };
    let report = lbfgs(&problem, &mut x, opts)?;
    let (ux, uy, w) = problem.split(&x);
    Ok((
        VectorField2 {
            x: ux.to_vec(),
            y: uy.to_vec(),
        },
        ScalarField(w.to_vec()),
        report,
    ))
}

fn f_transverse_integral(f: &Functional<'_>) -> Option<f64> {
    // Zero-weight transverse terms never break the constant-shift invariance.
    if f.weights().transverse == 0.0 {
        return None;
    }
    let n = f.grid().node_count();
    let zeros = vec![0.0; n];
    let ones = vec![1.0; n];
    Some(f.energy(&zeros, &zeros, &ones).load_work_transverse)
}

fn lbfgs(p: &Problem<'_, '_>, x: &mut Vec<f64>, opts: &SolveOptions) -> Result<SolveReport> {
    let dim = p.dim();
    let mut g = vec![0.0; dim];
    p.gauge(x);
    let mut fx = p.eval(x, &mut g);
    if !fx.is_finite() || !all_finite(&g) {
        return Err(Error::NonFinite("initial energy or gradient".into()));
    }
    let floor = opts.energy_floor.unwrap_or(-1e6 * (fx + 1.0).abs());
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let (mut xt, mut gt) = (vec![0.0; dim], vec![0.0; dim]);
    let mut converged = false;
    let mut diverging = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if p.residual(&g) < opts.grad_tol {
            converged = true;
            break;
        }
        let mut d = direction(p, &g, &pairs);
        let mut gd = dot(&g, &d);
        if gd >= 0.0 || !gd.is_finite() {
            pairs.clear();
            d = direction(p, &g, &pairs);
            gd = dot(&g, &d);
        }
        let mut step = if pairs.is_empty() {
            (1.0 / max_abs(&d).max(1e-300)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        loop {
            for i in 0..dim {
                xt[i] = x[i] + step * d[i];
            }
            let ft = p.energy(&xt);
            if ft.is_finite() && ft <= fx + opts.sufficient_decrease * step * gd {
                accepted = Some(ft);
                break;
            }
            // Once energy differences drown in rounding, judge the step by the
            // slope along d instead (approximate Wolfe conditions).
            if ft.is_finite() && ft <= fx + APPROX_WOLFE_EPS * fx.abs() {
                p.eval(&xt, &mut gt);
                let slope = dot(&gt, &d);
                let c = opts.sufficient_decrease;
                if 0.9 * gd <= slope && slope <= (2.0 * c - 1.0) * gd {
                    accepted = Some(ft);
                    break;
                }
            }
            step *= opts.backtracking;
            if step * max_abs(&d) < 1e-18 * (1.0 + max_abs(x)) {
                break;
            }
        }
        let Some(_) = accepted else {
            if pairs.is_empty() {
                // Steepest descent cannot decrease further at this precision.
                break;
            }
            pairs.clear();
            continue;
        };
        iterations += 1;
        p.gauge(&mut xt);
        let ft = p.eval(&xt, &mut gt);
        if !ft.is_finite() || !all_finite(&gt) {
            return Err(Error::NonFinite(format!(
                "energy or gradient at iteration {iterations}"
            )));
        }
        // Gauge moves are energy neutral; keep the record monotone.
        let ft = ft.min(fx);
        if opts.memory > 0 {
            let s: Vec<f64> = xt.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if pairs.len() == opts.memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
            }
        }
        std::mem::swap(x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        fx = ft;
        history.push(fx);
        if fx < floor {
            diverging = true;
            break;
        }
    }
    if !converged && !diverging && p.residual(&g) < opts.grad_tol {
        converged = true;
    }
    Ok(SolveReport {
        iterations,
        final_residual: p.residual(&g),
        energy_history: history,
        converged,
        diverging,
    })
}

/// Two-loop recursion with the inverse lumped mass as initial metric.
fn direction(
    p: &Problem<'_, '_>,
    g: &[f64],
    pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
) -> Vec<f64> {
    let n = p.n;
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        crate::numeric::axpy(-a, y, &mut q);
        alphas.push(a);
    }
    let gamma = match pairs.back() {
        Some((s, y, _)) => {
            let ywy =
                crate::numeric::pairwise_sum_by(y.len(), |i| y[i] * y[i] * p.inv_weight[i % n]);
            dot(s, y) / ywy.max(1e-300)
        }
        None => 1.0,
    };
    for (i, qi) in q.iter_mut().enumerate() {
        *qi *= gamma * p.inv_weight[i % n];
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        crate::numeric::axpy(a - b, s, &mut q);
    }
    let off = p.dim() - n;
    for (k, &fx) in p.fixed_w.iter().enumerate() {
        if fx {
            q[off + k] = 0.0;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
