//! Flat-torus target manifolds with trigonometric time-periodic potentials.
//!
//! The loop `u: S¹ → R^n` is read modulo `2π` in each component. Critical
//! loops solve `−ü − ∇V_t(u) = 0`; in the chart `u = x + ζ` around a critical
//! loop `x` the heat flow becomes `ζ' + Aζ = f(ζ)` with
//! `f(ζ) = ∇V_t(x+ζ) − ∇V_t(x) − ∇²V_t(x)ζ` pointwise.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loopspace::{self, FourierBasis, LoopField, NormKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Cos,
    Sin,
}

/// One term `amp·cos(k·q + 2πmt + phase)` (or `sin`) of the potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialTerm {
    pub amp: f64,
    pub wavevector: Vec<i32>,
    #[serde(default)]
    pub time_mode: i32,
    #[serde(default)]
    pub phase: f64,
    pub kind: TermKind,
}

impl PotentialTerm {
    #[inline]
    fn angle(&self, t: f64, q: &[f64]) -> f64 {
        let kq: f64 = self.wavevector.iter().zip(q).map(|(k, x)| *k as f64 * x).sum();
        kq + 2.0 * PI * self.time_mode as f64 * t + self.phase
    }

    /// Angle `θ'` with the term written as `amp·cos θ'`.
    #[inline]
    fn cos_angle(&self, t: f64, q: &[f64]) -> f64 {
        match self.kind {
            TermKind::Cos => self.angle(t, q),
            TermKind::Sin => self.angle(t, q) - 0.5 * PI,
        }
    }

    #[inline]
    fn k_dot(&self, v: &[f64]) -> f64 {
        self.wavevector.iter().zip(v).map(|(k, x)| *k as f64 * x).sum()
    }
}

/// `sin δ − δ` without cancellation for small `δ`.
fn sin_minus_id(d: f64) -> f64 {
    if d.abs() < 0.25 {
        let d2 = d * d;
        -d * d2 / 6.0 * (1.0 - d2 / 20.0 * (1.0 - d2 / 42.0 * (1.0 - d2 / 72.0 * (1.0 - d2 / 110.0))))
    } else {
        d.sin() - d
    }
}

/// `cos δ − 1` without cancellation.
fn cos_minus_one(d: f64) -> f64 {
    let h = (0.5 * d).sin();
    -2.0 * h * h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusModel {
    pub dim: usize,
    pub terms: Vec<PotentialTerm>,
}

impl TorusModel {
    pub fn new(dim: usize, terms: Vec<PotentialTerm>) -> Result<Self> {
        let model = Self { dim, terms };
        model.validate()?;
        Ok(model)
    }

    /// `V(q) = a·cos q` on the circle.
    pub fn pendulum(a: f64) -> Self {
        Self {
            dim: 1,
            terms: vec![PotentialTerm {
                amp: a,
                wavevector: vec![1],
                time_mode: 0,
                phase: 0.0,
                kind: TermKind::Cos,
            }],
        }
    }

    /// `V(q) = a·(cos q₁ + cos q₂)` on the 2-torus.
    pub fn torus_product(a: f64) -> Self {
        let term = |k: Vec<i32>| PotentialTerm {
            amp: a,
            wavevector: k,
            time_mode: 0,
            phase: 0.0,
            kind: TermKind::Cos,
        };
        Self {
            dim: 2,
            terms: vec![term(vec![1, 0]), term(vec![0, 1])],
        }
    }

    pub fn free(dim: usize) -> Self {
        Self { dim, terms: vec![] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invalid("model dimension must be ≥ 1".into()));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if t.wavevector.len() != self.dim {
                return Err(Error::Dimension(format!(
                    "term {i}: wavevector has length {}, model dimension is {}",
                    t.wavevector.len(),
                    self.dim
                )));
            }
            if !t.amp.is_finite() || !t.phase.is_finite() {
                return Err(Error::Invalid(format!("term {i}: non-finite amplitude or phase")));
            }
        }
        Ok(())
    }

    /// True when no term depends on `t`.
    pub fn is_autonomous(&self) -> bool {
        self.terms.iter().all(|t| t.time_mode == 0)
    }

    pub fn potential(&self, t: f64, q: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                let th = term.angle(t, q);
                match term.kind {
                    TermKind::Cos => term.amp * th.cos(),
                    TermKind::Sin => term.amp * th.sin(),
                }
            })
            .sum()
    }

    pub(crate) fn grad_into(&self, t: f64, q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for term in &self.terms {
            let th = term.angle(t, q);
            let c = match term.kind {
                TermKind::Cos => -term.amp * th.sin(),
                TermKind::Sin => term.amp * th.cos(),
            };
            for (o, k) in out.iter_mut().zip(&term.wavevector) {
                *o += c * *k as f64;
            }
        }
    }

    /// Row-major `n × n` Hessian into `out`.
    pub(crate) fn hess_into(&self, t: f64, q: &[f64], out: &mut [f64]) {
        let n = self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for term in &self.terms {
            let th = term.angle(t, q);
            let c = match term.kind {
                TermKind::Cos => -term.amp * th.cos(),
                TermKind::Sin => -term.amp * th.sin(),
            };
            for a in 0..n {
                for b in 0..n {
                    out[a * n + b] += c * (term.wavevector[a] * term.wavevector[b]) as f64;
                }
            }
        }
    }

    pub fn grad_potential(&self, t: f64, q: &[f64]) -> DVector<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_into(t, q, &mut out);
        DVector::from_vec(out)
    }

    pub fn hess_potential(&self, t: f64, q: &[f64]) -> DMatrix<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.hess_into(t, q, &mut out);
        DMatrix::from_row_slice(self.dim, self.dim, &out)
    }
}

/// Grid values in component-major layout: entry `m·N + i` is component `m`
/// at node `t_i`.
fn to_grid(field: &LoopField) -> Vec<f64> {
    let g = loopspace::inverse(field);
    g.values.as_slice().to_vec()
}

fn point(grid: &[f64], i: usize, nodes: usize, dim: usize, out: &mut [f64]) {
    for m in 0..dim {
        out[m] = grid[m * nodes + i];
    }
}

/// `∫₀¹ (½|u̇|² − V_t(u)) dt`: kinetic part spectrally, potential by the
/// rectangle rule on the collocation grid.
pub fn action(model: &TorusModel, u: &LoopField) -> f64 {
    let n = u.nodes();
    let kinetic: f64 = u
        .coords()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let w = 2.0 * PI * loopspace::wavenumber(i % n) as f64;
            0.5 * w * w * a * a
        })
        .sum();
    let grid = to_grid(u);
    let times = FourierBasis::get(u.modes()).times();
    let mut q = vec![0.0; u.dim()];
    let mut pot = 0.0;
    for (i, t) in times.iter().enumerate() {
        point(&grid, i, n, u.dim(), &mut q);
        pot += model.potential(*t, &q);
    }
    kinetic - pot / n as f64
}

/// Spectral residual `−ü − ∇V_t(u)` in Fourier coordinates.
pub fn euler_lagrange_residual(model: &TorusModel, u: &LoopField) -> LoopField {
    let n = u.nodes();
    let dim = u.dim();
    let grid = to_grid(u);
    let times = FourierBasis::get(u.modes()).times();
    let mut q = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut grad_grid = vec![0.0; dim * n];
    for (i, t) in times.iter().enumerate() {
        point(&grid, i, n, dim, &mut q);
        model.grad_into(*t, &q, &mut g);
        for m in 0..dim {
            grad_grid[m * n + i] = g[m];
        }
    }
    let grad = grid_to_field(&grad_grid, dim, u.modes());
    let mut out = u.clone();
    for (i, c) in out.coords_mut().iter_mut().enumerate() {
        let w = 2.0 * PI * loopspace::wavenumber(i % n) as f64;
        *c *= w * w;
    }
    out.sub(&grad)
}

fn grid_to_field(grid: &[f64], dim: usize, modes: usize) -> LoopField {
    let values = DMatrix::from_column_slice(2 * modes + 1, dim, grid);
    loopspace::transform(&loopspace::GridField::new(values)).expect("odd grid by construction")
}

/// Hessian of `V_t` along `u`, laid out for [`loopspace::multiplication_matrix`].
fn hessian_along(model: &TorusModel, u: &LoopField) -> Vec<f64> {
    let n = u.nodes();
    let dim = u.dim();
    let grid = to_grid(u);
    let times = FourierBasis::get(u.modes()).times();
    let mut q = vec![0.0; dim];
    let mut h = vec![0.0; n * dim * dim];
    for (i, t) in times.iter().enumerate() {
        point(&grid, i, n, dim, &mut q);
        model.hess_into(*t, &q, &mut h[i * dim * dim..(i + 1) * dim * dim]);
    }
    h
}

/// Galerkin matrix of `ξ ↦ −ξ'' − ∇²V_t(u(t))ξ` in real Fourier coordinates.
pub fn second_variation_matrix(model: &TorusModel, u: &LoopField) -> DMatrix<f64> {
    let n = u.nodes();
    let h = hessian_along(model, u);
    let mut mat = -loopspace::multiplication_matrix(u.modes(), u.dim(), &h);
    for i in 0..u.dim() * n {
        let w = 2.0 * PI * loopspace::wavenumber(i % n) as f64;
        mat[(i, i)] += w * w;
    }
    mat
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalLoop {
    pub x: LoopField,
    pub action: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative threshold on the smallest Jacobian eigenvalue.
    pub singular_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            singular_tol: 1e-12,
        }
    }
}

pub fn find_critical_loop(model: &TorusModel, guess: &LoopField, opts: NewtonOptions) -> Result<CriticalLoop> {
    model.validate()?;
    if guess.dim() != model.dim {
        return Err(Error::Dimension(format!(
            "guess has {} components, model dimension is {}",
            guess.dim(),
            model.dim
        )));
    }
    let mut x = guess.clone();
    let mut res = euler_lagrange_residual(model, &x);
    let mut res_norm = res.norm(NormKind::L2);
    for _ in 0..opts.max_iter {
        if res_norm < opts.tol {
            return Ok(CriticalLoop {
                action: action(model, &x),
                residual: res_norm,
                x,
            });
        }
        let jac = second_variation_matrix(model, &x);
        let eig = SymmetricEigen::new(jac);
        let scale = eig.eigenvalues.amax().max(1.0);
        let min_abs = eig.eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        if min_abs < opts.singular_tol * scale {
            return Err(Error::SingularJacobian { min_abs_eig: min_abs });
        }
        let rhs = eig.eigenvectors.tr_mul(&res.to_vector());
        let scaled = rhs.component_div(&eig.eigenvalues);
        let step = &eig.eigenvectors * scaled;
        let step = LoopField::from_vector(x.dim(), x.modes(), &step);
        // damped Newton: halve until the residual decreases
        let mut alpha = 1.0;
        loop {
            let trial = x.axpy(-alpha, &step);
            let trial_res = euler_lagrange_residual(model, &trial);
            let trial_norm = trial_res.norm(NormKind::L2);
            if trial_norm < res_norm || alpha < 1e-4 {
                x = trial;
                res = trial_res;
                res_norm = trial_norm;
                break;
            }
            alpha *= 0.5;
        }
    }
    if res_norm < opts.tol {
        return Ok(CriticalLoop {
            action: action(model, &x),
            residual: res_norm,
            x,
        });
    }
    Err(Error::NoConvergence {
        iters: opts.max_iter,
        residual: res_norm,
    })
}

/// Pointwise curvature contribution to the chart nonlinearity on a curved
/// target; receives `(t, x(t), ẋ(t), ζ(t))` and adds into `out`. Flat tori
/// have none, so [`Chart`] carries `None`.
pub trait CurvatureTerm: Send + Sync {
    fn add_into(&self, t: f64, x: &[f64], xdot: &[f64], zeta: &[f64], out: &mut [f64]);
}

/// Local coordinates `u = x + ζ` around a critical loop, with the pointwise
/// data of `x` cached on the collocation grid.
#[derive(Clone)]
pub struct Chart {
    pub model: TorusModel,
    pub critical: CriticalLoop,
    pub curvature: Option<Arc<dyn CurvatureTerm>>,
    dim: usize,
    modes: usize,
    times: Vec<f64>,
    x_grid: Vec<f64>,
    hess_x: Vec<f64>,
    /// `(sin θ', cos θ')` of every potential term at every node of `x`
    trig_x: Vec<(f64, f64)>,
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chart")
            .field("model", &self.model)
            .field("critical", &self.critical)
            .field("modes", &self.modes)
            .finish()
    }
}

impl Chart {
    pub fn new(model: TorusModel, critical: CriticalLoop) -> Self {
        let x = &critical.x;
        let dim = x.dim();
        let modes = x.modes();
        let n = x.nodes();
        let times = FourierBasis::get(modes).times();
        let x_grid = to_grid(x);
        let mut hess_x = vec![0.0; n * dim * dim];
        let mut trig_x = Vec::with_capacity(n * model.terms.len());
        let mut q = vec![0.0; dim];
        for (i, t) in times.iter().enumerate() {
            point(&x_grid, i, n, dim, &mut q);
            model.hess_into(*t, &q, &mut hess_x[i * dim * dim..(i + 1) * dim * dim]);
            trig_x.extend(model.terms.iter().map(|term| term.cos_angle(*t, &q).sin_cos()));
        }
        Self {
            model,
            critical,
            curvature: None,
            dim,
            modes,
            times,
            x_grid,
            hess_x,
            trig_x,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn nodes(&self) -> usize {
        2 * self.modes + 1
    }

    pub(crate) fn hessian_grid(&self) -> &[f64] {
        &self.hess_x
    }

    /// `f(ζ)` on the grid, component-major layout in and out.
    ///
    /// Each term contributes the exact Taylor remainder
    /// `−amp·k·[sin θ'(cos δ − 1) + cos θ'(sin δ − δ)]`, `δ = k·ζ`, evaluated
    /// without cancellation so that the rounding error scales with `|ζ|²`.
    pub fn f_grid(&self, zeta: &[f64], out: &mut [f64]) {
        let n = self.nodes();
        let d = self.dim;
        let nt = self.model.terms.len();
        let mut z = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut xdot_grid: Option<Vec<f64>> = None;
        for i in 0..n {
            point(zeta, i, n, d, &mut z);
            g.iter_mut().for_each(|x| *x = 0.0);
            for (j, term) in self.model.terms.iter().enumerate() {
                let delta = term.k_dot(&z);
                if delta == 0.0 {
                    continue;
                }
                let (s, c) = self.trig_x[i * nt + j];
                let r = -term.amp * (s * cos_minus_one(delta) + c * sin_minus_id(delta));
                for (a, k) in term.wavevector.iter().enumerate() {
                    g[a] += r * *k as f64;
                }
            }
            if let Some(curv) = &self.curvature {
                let xd = xdot_grid.get_or_insert_with(|| to_grid(&self.critical.x.derivative()));
                let mut xi = vec![0.0; d];
                let mut xdi = vec![0.0; d];
                point(&self.x_grid, i, n, d, &mut xi);
                point(xd, i, n, d, &mut xdi);
                curv.add_into(self.times[i], &xi, &xdi, &z, &mut g);
            }
            for m in 0..d {
                out[m * n + i] = g[m];
            }
        }
    }

    /// `df(ζ)v = (∇²V_t(x+ζ) − ∇²V_t(x))v` on the grid, per term
    /// `−amp·k(k·v)·[cos θ'(cos δ − 1) − sin θ' sin δ]`.
    pub fn df_grid(&self, zeta: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.nodes();
        let d = self.dim;
        let nt = self.model.terms.len();
        let mut z = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut g = vec![0.0; d];
        for i in 0..n {
            point(zeta, i, n, d, &mut z);
            point(v, i, n, d, &mut w);
            g.iter_mut().for_each(|x| *x = 0.0);
            for (j, term) in self.model.terms.iter().enumerate() {
                let delta = term.k_dot(&z);
                let kv = term.k_dot(&w);
                if delta == 0.0 || kv == 0.0 {
                    continue;
                }
                let (s, c) = self.trig_x[i * nt + j];
                let r = -term.amp * kv * (c * cos_minus_one(delta) - s * delta.sin());
                for (a, k) in term.wavevector.iter().enumerate() {
                    g[a] += r * *k as f64;
                }
            }
            for m in 0..d {
                out[m * n + i] = g[m];
            }
        }
    }

    pub fn nonlinearity(&self, zeta: &LoopField) -> LoopField {
        let zg = to_grid(zeta);
        let mut out = vec![0.0; zg.len()];
        self.f_grid(&zg, &mut out);
        grid_to_field(&out, self.dim, self.modes)
    }

    pub fn dnonlinearity(&self, zeta: &LoopField, v: &LoopField) -> LoopField {
        let zg = to_grid(zeta);
        let vg = to_grid(v);
        let mut out = vec![0.0; zg.len()];
        self.df_grid(&zg, &vg, &mut out);
        grid_to_field(&out, self.dim, self.modes)
    }
}

/// Empirical lower estimates of the Lipschitz data of `f` on the `ρ`-ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub rho: f64,
    /// `max ‖f(ξ)−f(η)‖_{L1} / ‖ξ−η‖_{W12}` over sampled pairs.
    pub kappa: f64,
    /// `max ‖df(ξ)v−df(η)v‖_{L1} / (‖ξ−η‖_{W12}‖v‖_{W12})`.
    pub kappa_star: f64,
    /// `max ‖ξ‖_∞ / ‖ξ‖_{W12}` over the sampled points.
    pub sup_ratio: f64,
    pub samples: usize,
    /// Always true: sampling only bounds the supremum from below.
    pub lower_estimate: bool,
}

/// Random direction with unit W^{1,2} norm whose energy is spread evenly
/// over the Fourier modes.
pub(crate) fn random_w12_direction(dim: usize, modes: usize, rng: &mut impl Rng) -> LoopField {
    let n = 2 * modes + 1;
    let coords: Vec<f64> = (0..dim * n)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            z / loopspace::w12_weight(i % n).sqrt()
        })
        .collect();
    let f = LoopField::from_coords(dim, modes, coords).expect("shape by construction");
    let nrm = f.norm(NormKind::W12);
    f.scaled(1.0 / nrm)
}

pub fn estimate_kappa(chart: &Chart, rho: f64, samples: usize, seed: u64) -> KappaEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(LoopField, LoopField, LoopField, f64, f64)> = (0..samples)
        .map(|_| {
            let a = random_w12_direction(chart.dim, chart.modes, &mut rng);
            let b = random_w12_direction(chart.dim, chart.modes, &mut rng);
            let v = random_w12_direction(chart.dim, chart.modes, &mut rng);
            let ra: f64 = rng.random::<f64>().powf(0.25);
            let rb: f64 = rng.random::<f64>().powf(0.25);
            (a, b, v, ra, rb)
        })
        .collect();
    let per_sample: Vec<(f64, f64, f64)> = draws
        .par_iter()
        .map(|(a, b, v, ra, rb)| {
            let xi = a.scaled(rho * ra);
            let eta = b.scaled(rho * rb);
            let diff = xi.sub(&eta).norm(NormKind::W12);
            if diff == 0.0 {
                return (0.0, 0.0, 0.0);
            }
            let fd = chart.nonlinearity(&xi).sub(&chart.nonlinearity(&eta));
            let k = fd.norm(NormKind::L1) / diff;
            let dd = chart.dnonlinearity(&xi, v).sub(&chart.dnonlinearity(&eta, v));
            let ks = dd.norm(NormKind::L1) / (diff * v.norm(NormKind::W12));
            let sup = [&xi, &eta]
                .iter()
                .filter(|f| f.norm(NormKind::W12) > 0.0)
                .map(|f| f.norm(NormKind::Linf) / f.norm(NormKind::W12))
                .fold(0.0, f64::max);
            (k, ks, sup)
        })
        .collect();
    let fold = |sel: fn(&(f64, f64, f64)) -> f64| per_sample.iter().map(sel).fold(0.0, f64::max);
    KappaEstimate {
        rho,
        kappa: fold(|s| s.0),
        kappa_star: fold(|s| s.1),
        sup_ratio: fold(|s| s.2),
        samples,
        lower_estimate: true,
    }
}
