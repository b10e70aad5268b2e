//! Truncated Fourier discretization of vector fields along loops `S¹ = R/Z → R^n`.
//!
//! A [`LoopField`] stores real coordinates in the L²-orthonormal basis
//! `1, √2 cos(2πjt), √2 sin(2πjt)` for `1 ≤ j ≤ J`, one block of `2J+1`
//! coordinates per component. The complex coefficients `ĉ_{j,m}` are derived
//! on demand, so conjugate symmetry holds by construction. Pointwise work
//! happens on the `N = 2J+1` collocation nodes `t_i = i/N`.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semiflow::Trajectory;

pub const DEFAULT_MODES: usize = 32;

/// Wavenumber `j` of the real basis function at block offset `k`.
#[inline]
pub fn wavenumber(k: usize) -> usize {
    k.div_ceil(2)
}

/// `1 + (2πj)²`, the diagonal W^{1,2} weight of block offset `k`.
#[inline]
pub fn w12_weight(k: usize) -> f64 {
    let w = 2.0 * PI * wavenumber(k) as f64;
    1.0 + w * w
}

/// Collocation matrices for one truncation level.
#[derive(Debug)]
pub struct FourierBasis {
    pub modes: usize,
    pub nodes: usize,
    /// `synth[(i, k)]` is basis function `k` evaluated at `t_i`.
    pub synth: DMatrix<f64>,
}

impl FourierBasis {
    fn build(modes: usize) -> Self {
        let nodes = 2 * modes + 1;
        let synth = DMatrix::from_fn(nodes, nodes, |i, k| {
            let t = i as f64 / nodes as f64;
            let j = wavenumber(k) as f64;
            if k == 0 {
                1.0
            } else if k % 2 == 1 {
                SQRT_2 * (2.0 * PI * j * t).cos()
            } else {
                SQRT_2 * (2.0 * PI * j * t).sin()
            }
        });
        Self { modes, nodes, synth }
    }

    /// Shared basis for truncation `modes`; built once per process.
    pub fn get(modes: usize) -> Arc<FourierBasis> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<FourierBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("basis cache poisoned");
        guard
            .entry(modes)
            .or_insert_with(|| Arc::new(FourierBasis::build(modes)))
            .clone()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| i as f64 / self.nodes as f64).collect()
    }
}

/// Real-valued vector field along a loop, truncated at `|j| ≤ J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopField {
    dim: usize,
    modes: usize,
    coords: Vec<f64>,
}

impl LoopField {
    pub fn zeros(dim: usize, modes: usize) -> Self {
        Self {
            dim,
            modes,
            coords: vec![0.0; dim * (2 * modes + 1)],
        }
    }

    /// The constant loop with value `value ∈ R^n`.
    pub fn constant(modes: usize, value: &[f64]) -> Self {
        let mut f = Self::zeros(value.len(), modes);
        let n = 2 * modes + 1;
        for (m, v) in value.iter().enumerate() {
            f.coords[m * n] = *v;
        }
        f
    }

    pub fn from_coords(dim: usize, modes: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || modes == 0 {
            return Err(Error::Dimension("need dim ≥ 1 and modes ≥ 1".into()));
        }
        if coords.len() != dim * (2 * modes + 1) {
            return Err(Error::Dimension(format!(
                "expected {} coordinates, got {}",
                dim * (2 * modes + 1),
                coords.len()
            )));
        }
        Ok(Self { dim, modes, coords })
    }

    pub fn from_vector(dim: usize, modes: usize, v: &DVector<f64>) -> Self {
        debug_assert_eq!(v.len(), dim * (2 * modes + 1));
        Self {
            dim,
            modes,
            coords: v.as_slice().to_vec(),
        }
    }

    /// Build from complex coefficients `ĉ_{j,m}` laid out as `coeffs[m][j + J]`
    /// for `-J ≤ j ≤ J`. Rejects data violating conjugate symmetry.
    pub fn from_complex(dim: usize, modes: usize, coeffs: &[Vec<Complex64>]) -> Result<Self> {
        if coeffs.len() != dim || coeffs.iter().any(|c| c.len() != 2 * modes + 1) {
            return Err(Error::Dimension("complex coefficient table has wrong shape".into()));
        }
        let n = 2 * modes + 1;
        let mut coords = vec![0.0; dim * n];
        for (m, row) in coeffs.iter().enumerate() {
            let scale = row.iter().map(|c| c.norm()).fold(1.0, f64::max);
            for j in 0..=modes {
                let pos = row[modes + j];
                let neg = row[modes - j];
                if (pos - neg.conj()).norm() > 1e-12 * scale {
                    return Err(Error::Invalid(format!(
                        "coefficients of component {m}, mode {j} are not conjugate symmetric"
                    )));
                }
            }
            coords[m * n] = row[modes].re;
            for j in 1..=modes {
                let c = row[modes + j];
                coords[m * n + 2 * j - 1] = SQRT_2 * c.re;
                coords[m * n + 2 * j] = -SQRT_2 * c.im;
            }
        }
        Ok(Self { dim, modes, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Number of collocation nodes `2J + 1`.
    pub fn nodes(&self) -> usize {
        2 * self.modes + 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    /// Complex Fourier coefficient `ĉ_{j,m}` for `|j| ≤ J`.
    pub fn coeff(&self, j: i64, m: usize) -> Complex64 {
        let n = self.nodes();
        let a = j.unsigned_abs() as usize;
        assert!(a <= self.modes && m < self.dim, "coefficient index out of range");
        if a == 0 {
            return Complex64::new(self.coords[m * n], 0.0);
        }
        let c = Complex64::new(self.coords[m * n + 2 * a - 1], -self.coords[m * n + 2 * a]) / SQRT_2;
        if j < 0 {
            c.conj()
        } else {
            c
        }
    }

    /// Value at an arbitrary time `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let n = self.nodes();
        (0..self.dim)
            .map(|m| {
                let block = &self.coords[m * n..(m + 1) * n];
                let mut acc = block[0];
                for j in 1..=self.modes {
                    let arg = 2.0 * PI * j as f64 * t;
                    acc += SQRT_2 * (block[2 * j - 1] * arg.cos() + block[2 * j] * arg.sin());
                }
                acc
            })
            .collect()
    }

    /// Time derivative `d/dt`.
    pub fn derivative(&self) -> LoopField {
        let n = self.nodes();
        let mut out = LoopField::zeros(self.dim, self.modes);
        for m in 0..self.dim {
            for j in 1..=self.modes {
                let w = 2.0 * PI * j as f64;
                let c = self.coords[m * n + 2 * j - 1];
                let s = self.coords[m * n + 2 * j];
                out.coords[m * n + 2 * j - 1] = w * s;
                out.coords[m * n + 2 * j] = -w * c;
            }
        }
        out
    }

    pub fn scaled(&self, a: f64) -> LoopField {
        let mut out = self.clone();
        out.coords.iter_mut().for_each(|c| *c *= a);
        out
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: f64, other: &LoopField) -> LoopField {
        assert_eq!(self.coords.len(), other.coords.len(), "field shapes differ");
        let mut out = self.clone();
        for (o, b) in out.coords.iter_mut().zip(&other.coords) {
            *o += a * b;
        }
        out
    }

    pub fn sub(&self, other: &LoopField) -> LoopField {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &LoopField) -> LoopField {
        self.axpy(1.0, other)
    }

    /// L² inner product.
    pub fn dot(&self, other: &LoopField) -> f64 {
        self.coords.iter().zip(&other.coords).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        norm(self, kind)
    }
}

/// Values on the collocation grid, `N × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: DMatrix<f64>,
}

impl GridField {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Grid values to Fourier coordinates. Requires an odd node count `N = 2J+1`.
pub fn transform(field: &GridField) -> Result<LoopField> {
    let nodes = field.nodes();
    if nodes < 3 || nodes.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "collocation grid needs N = 2J+1 ≥ 3 nodes, got {nodes}"
        )));
    }
    if field.dim() == 0 {
        return Err(Error::Dimension("grid field has no components".into()));
    }
    let modes = (nodes - 1) / 2;
    let basis = FourierBasis::get(modes);
    let mut coords = Vec::with_capacity(field.dim() * nodes);
    for m in 0..field.dim() {
        let a = basis.synth.tr_mul(&field.values.column(m)) / nodes as f64;
        coords.extend_from_slice(a.as_slice());
    }
    LoopField::from_coords(field.dim(), modes, coords)
}

/// Fourier coordinates to grid values.
pub fn inverse(field: &LoopField) -> GridField {
    let basis = FourierBasis::get(field.modes);
    let n = field.nodes();
    let mut values = DMatrix::zeros(n, field.dim);
    for m in 0..field.dim {
        let block = DVector::from_column_slice(&field.coords[m * n..(m + 1) * n]);
        values.set_column(m, &(&basis.synth * block));
    }
    GridField { values }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
    Lp(f64),
    W12,
    Linf,
}

impl NormKind {
    pub fn label(&self) -> String {
        match self {
            NormKind::L1 => "L1".into(),
            NormKind::L2 => "L2".into(),
            NormKind::Lp(p) => format!("L{p}"),
            NormKind::W12 => "W12".into(),
            NormKind::Linf => "Linf".into(),
        }
    }
}

/// Exponential time weight `e^{|s|·rate}` on a fixed time grid; with
/// `rate = μ/2` this is the exp norm of the contraction spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpWeight {
    pub rate: f64,
    pub grid: Vec<f64>,
}

impl ExpWeight {
    pub fn new(rate: f64, grid: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Grid("exp-weight grid must be nonempty and strictly increasing".into()));
        }
        Ok(Self { rate, grid })
    }
}

/// Galerkin matrix of pointwise multiplication by a matrix-valued function
/// `H(t_i)` given on the grid as `h[i·n² + a·n + b]`. The result is symmetric
/// whenever every `H(t_i)` is.
pub fn multiplication_matrix(modes: usize, dim: usize, h: &[f64]) -> DMatrix<f64> {
    let basis = FourierBasis::get(modes);
    let n = basis.nodes;
    assert_eq!(h.len(), n * dim * dim, "multiplier has wrong length");
    let mut out = DMatrix::zeros(dim * n, dim * n);
    for a in 0..dim {
        for b in 0..dim {
            let diag: Vec<f64> = (0..n).map(|i| h[i * dim * dim + a * dim + b]).collect();
            if diag.iter().all(|v| *v == 0.0) {
                continue;
            }
            let mut scaled = basis.synth.clone();
            for (i, d) in diag.iter().enumerate() {
                scaled.row_mut(i).scale_mut(*d / n as f64);
            }
            let block = basis.synth.tr_mul(&scaled);
            out.view_mut((a * n, b * n), (n, n)).copy_from(&block);
        }
    }
    out
}

/// L² norm of real coordinates, weighted diagonally for W^{1,2}.
pub fn w12_norm_coords(coords: &[f64], modes: usize) -> f64 {
    let n = 2 * modes + 1;
    coords
        .iter()
        .enumerate()
        .map(|(i, c)| w12_weight(i % n) * c * c)
        .sum::<f64>()
        .sqrt()
}

pub fn norm(field: &LoopField, kind: NormKind) -> f64 {
    match kind {
        NormKind::L2 => field.coords.iter().map(|c| c * c).sum::<f64>().sqrt(),
        NormKind::W12 => w12_norm_coords(&field.coords, field.modes),
        NormKind::L1 => grid_pnorm(field, 1.0),
        NormKind::Lp(p) => grid_pnorm(field, p),
        NormKind::Linf => {
            let g = inverse(field);
            g.values
                .row_iter()
                .map(|r| r.norm())
                .fold(0.0, f64::max)
        }
    }
}

fn grid_pnorm(field: &LoopField, p: f64) -> f64 {
    let g = inverse(field);
    let n = g.nodes() as f64;
    let sum: f64 = g.values.row_iter().map(|r| r.norm().powf(p)).sum();
    (sum / n).powf(1.0 / p)
}

/// `max_s e^{|s|·rate} ‖ξ(s)‖_{W12}` over the trajectory grid.
pub fn traj_norm(traj: &Trajectory, weight: &ExpWeight) -> Result<f64> {
    if traj.grid != weight.grid {
        return Err(Error::Grid("trajectory grid differs from weight grid".into()));
    }
    Ok(traj
        .grid
        .iter()
        .zip(&traj.states)
        .map(|(s, x)| (s.abs() * weight.rate).exp() * norm(x, NormKind::W12))
        .fold(0.0, f64::max))
}
