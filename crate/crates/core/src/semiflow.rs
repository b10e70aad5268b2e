//! The local semiflow `φ_s` of `ζ' + Aζ = f(ζ)` near a critical loop.
//!
//! [`evolve`] is an exponential integrator built on the same per-eigenmode
//! kernels as the contraction solvers; [`evolve_oracle`] integrates the
//! original PDE on the collocation grid with an explicit Runge–Kutta pair and
//! shares no code path with it beyond the model's pointwise gradient.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::duhamel::{forward_weights, phi1, MeshKernels};
use crate::error::{Error, Result};
use crate::loopspace::{self, FourierBasis, LoopField, NormKind};
use crate::model::{self, Chart, CriticalLoop, NewtonOptions, TorusModel};
use crate::spectral::{self, SpectralDecomposition};

/// A critical loop together with its chart, spectral splitting and the
/// precomputed maps between eigen-coordinates and grid values.
#[derive(Debug, Clone)]
pub struct LocalFlow {
    pub chart: Chart,
    pub dec: SpectralDecomposition,
    /// eigen-coordinates → component-major grid values
    to_grid: DMatrix<f64>,
    /// component-major grid values → eigen-coordinates
    from_grid: DMatrix<f64>,
    /// `‖·‖_{W12}` of eigen-coordinates is the Euclidean norm after this map
    w12_map: DMatrix<f64>,
}

impl LocalFlow {
    pub fn new(chart: Chart, dec: SpectralDecomposition) -> Self {
        let basis = FourierBasis::get(chart.modes());
        let n = basis.nodes;
        let dim = chart.dim();
        let mut block_synth = DMatrix::zeros(dim * n, dim * n);
        for m in 0..dim {
            block_synth.view_mut((m * n, m * n), (n, n)).copy_from(&basis.synth);
        }
        let to_grid = &block_synth * &dec.eigenvectors;
        let from_grid = to_grid.transpose() / n as f64;
        let mut w12_map = dec.eigenvectors.clone();
        for (i, mut row) in w12_map.row_iter_mut().enumerate() {
            row *= loopspace::w12_weight(i % n).sqrt();
        }
        Self {
            chart,
            dec,
            to_grid,
            from_grid,
            w12_map,
        }
    }

    /// Newton for the critical loop, then assembly and decomposition.
    pub fn from_model(
        model: TorusModel,
        guess: &LoopField,
        newton: NewtonOptions,
        mu_fraction: f64,
        degeneracy_tol: f64,
    ) -> Result<Self> {
        let crit = model::find_critical_loop(&model, guess, newton)?;
        Self::from_critical(model, crit, mu_fraction, degeneracy_tol)
    }

    pub fn from_critical(model: TorusModel, crit: CriticalLoop, mu_fraction: f64, degeneracy_tol: f64) -> Result<Self> {
        let chart = Chart::new(model, crit);
        let dec = spectral::decompose(&spectral::assemble(&chart), mu_fraction, degeneracy_tol)?;
        Ok(Self::new(chart, dec))
    }

    pub fn size(&self) -> usize {
        self.dec.size()
    }

    pub fn mu(&self) -> f64 {
        self.dec.mu
    }

    pub fn to_eigen(&self, field: &LoopField) -> DVector<f64> {
        self.dec.to_eigen(field)
    }

    pub fn field(&self, y: &DVector<f64>) -> LoopField {
        self.dec.from_eigen(y)
    }

    pub fn w12(&self, y: &DVector<f64>) -> f64 {
        (&self.w12_map * y).norm()
    }

    pub fn grid_of(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.to_grid * y
    }

    /// `f` in eigen-coordinates.
    pub fn f_eigen(&self, y: &DVector<f64>) -> DVector<f64> {
        let g = self.grid_of(y);
        let mut out = DVector::zeros(g.len());
        self.chart.f_grid(g.as_slice(), out.as_mut_slice());
        &self.from_grid * out
    }

    /// `df(ζ)v` in eigen-coordinates, with `ζ` given by its grid values.
    pub fn df_eigen(&self, zeta_grid: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let vg = self.grid_of(v);
        let mut out = DVector::zeros(vg.len());
        self.chart.df_grid(zeta_grid.as_slice(), vg.as_slice(), out.as_mut_slice());
        &self.from_grid * out
    }

    pub fn action_of(&self, y: &DVector<f64>) -> f64 {
        model::action(&self.chart.model, &self.chart.critical.x.add(&self.field(y)))
    }

    /// `max e^{|s|·rate}‖Δ(s)‖_{W12}` for eigen-coordinate paths.
    pub fn exp_norm(&self, nodes: &[f64], path: &[DVector<f64>], rate: f64) -> f64 {
        nodes
            .iter()
            .zip(path)
            .map(|(s, y)| (s.abs() * rate).exp() * self.w12(y))
            .fold(0.0, f64::max)
    }

    pub fn exp_dist(&self, nodes: &[f64], a: &[DVector<f64>], b: &[DVector<f64>], rate: f64) -> f64 {
        nodes
            .iter()
            .zip(a.iter().zip(b))
            .map(|(s, (x, y))| (s.abs() * rate).exp() * self.w12(&(x - y)))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeGrid {
    Uniform { step: f64 },
    /// Geometric steps from `floor` with factor `ratio` until `max_step`, then uniform.
    Graded { ratio: f64, floor: f64, max_step: f64 },
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid::Graded {
            ratio: 1.2,
            floor: 1e-6,
            max_step: 0.01,
        }
    }
}

impl TimeGrid {
    pub fn max_step(&self) -> f64 {
        match *self {
            TimeGrid::Uniform { step } => step,
            TimeGrid::Graded { max_step, .. } => max_step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TimeGrid::Uniform { step } => step > 0.0,
            TimeGrid::Graded { ratio, floor, max_step } => ratio > 1.0 && floor > 0.0 && max_step >= floor,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Grid(format!("invalid time grid {self:?}")))
        }
    }

    /// Nodes `0 = s₀ < … < s_M = t`.
    pub fn nodes(&self, t: f64) -> Vec<f64> {
        assert!(t >= 0.0, "grid length must be nonnegative");
        let mut nodes = vec![0.0];
        if t == 0.0 {
            return nodes;
        }
        let uniform_start = match *self {
            TimeGrid::Uniform { .. } => 0.0,
            TimeGrid::Graded { ratio, floor, max_step } => {
                let mut h = floor;
                let mut s = 0.0;
                while h < max_step && s + h < t {
                    s += h;
                    nodes.push(s);
                    h *= ratio;
                }
                s
            }
        };
        let rest = t - uniform_start;
        if rest > 0.0 {
            let count = (rest / self.max_step() - 1e-9).ceil().max(1.0) as usize;
            let h = rest / count as f64;
            for i in 1..count {
                nodes.push(uniform_start + i as f64 * h);
            }
            nodes.push(t);
        }
        nodes
    }
}

/// Append steps after the last node until `horizon` is reached: the first
/// of length `first_step`, then growing by `ratio` up to `cap`.
pub fn extend_tail(nodes: &mut Vec<f64>, horizon: f64, first_step: f64, ratio: f64, cap: f64) {
    let mut h = first_step / ratio;
    let mut s = *nodes.last().expect("nonempty mesh");
    while s < horizon {
        h = (h * ratio).min(cap);
        s = (s + h).min(horizon);
        if horizon - s < 0.25 * h {
            s = horizon;
        }
        nodes.push(s);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub solver: String,
    pub left_chart: bool,
    pub halvings: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<LoopField>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn from_states(grid: Vec<f64>, states: Vec<LoopField>) -> Result<Self> {
        if grid.len() != states.len() || grid.is_empty() {
            return Err(Error::Grid("grid and state counts differ".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Grid("trajectory grid must be strictly increasing".into()));
        }
        Ok(Self {
            grid,
            states,
            meta: TrajectoryMeta::default(),
        })
    }

    pub fn end(&self) -> &LoopField {
        self.states.last().expect("nonempty trajectory")
    }

    /// CSV with header `s,c0,c1,…` of real Fourier coordinates.
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map(|f| f.coords().len()).unwrap_or(0);
        let mut out = String::from("s");
        for i in 0..d {
            out.push_str(&format!(",c{i}"));
        }
        out.push('\n');
        for (s, f) in self.grid.iter().zip(&self.states) {
            out.push_str(&format!("{s:e}"));
            for c in f.coords() {
                out.push_str(&format!(",{c:e}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Chart radius in W^{1,2}; exceeding it ends the trajectory early.
    pub rho0: Option<f64>,
    /// Largest accepted W^{1,2} change between predictor and corrector.
    pub step_tol: f64,
    pub max_halvings: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            rho0: None,
            step_tol: 1e-3,
            max_halvings: 12,
        }
    }
}

fn etd_step(flow: &LocalFlow, y: &DVector<f64>, fy: &DVector<f64>, h: f64) -> (DVector<f64>, DVector<f64>, f64) {
    let d = y.len();
    let mut pred = DVector::zeros(d);
    for i in 0..d {
        let lam = flow.dec.eigenvalues[i];
        pred[i] = (-h * lam).exp() * y[i] + h * phi1(-h * lam) * fy[i];
    }
    let fp = flow.f_eigen(&pred);
    let mut corr = DVector::zeros(d);
    for i in 0..d {
        let w = forward_weights(flow.dec.eigenvalues[i], h);
        corr[i] = w.decay * y[i] + w.left * fy[i] + w.right * fp[i];
    }
    let change = flow.w12(&(&corr - &pred));
    (corr, fp, change)
}

#[allow(clippy::too_many_arguments)]
fn advance(
    flow: &LocalFlow,
    y: &DVector<f64>,
    fy: &DVector<f64>,
    s: f64,
    h: f64,
    depth: usize,
    opts: &EvolveOptions,
    halvings: &mut usize,
) -> Result<DVector<f64>> {
    let (corr, _, change) = etd_step(flow, y, fy, h);
    if change <= opts.step_tol {
        return Ok(corr);
    }
    if depth >= opts.max_halvings {
        return Err(Error::StepRejected { s, change });
    }
    *halvings += 1;
    let mid = advance(flow, y, fy, s, 0.5 * h, depth + 1, opts, halvings)?;
    let fmid = flow.f_eigen(&mid);
    advance(flow, &mid, &fmid, s + 0.5 * h, 0.5 * h, depth + 1, opts, halvings)
}

/// Forward integration on given nodes; returns eigen-coordinates per node
/// and whether the chart was left (in which case the path stops there).
pub fn evolve_nodes(
    flow: &LocalFlow,
    y0: &DVector<f64>,
    nodes: &[f64],
    opts: &EvolveOptions,
) -> Result<(Vec<DVector<f64>>, TrajectoryMeta)> {
    let mut meta = TrajectoryMeta {
        solver: "duhamel-etd2".into(),
        ..Default::default()
    };
    let mut path = vec![y0.clone()];
    let mut y = y0.clone();
    let mut fy = flow.f_eigen(&y);
    for w in nodes.windows(2) {
        let next = advance(flow, &y, &fy, w[0], w[1] - w[0], 0, opts, &mut meta.halvings)?;
        meta.steps += 1;
        if let Some(r) = opts.rho0 {
            if flow.w12(&next) > r {
                meta.left_chart = true;
                break;
            }
        }
        fy = flow.f_eigen(&next);
        y = next;
        path.push(y.clone());
    }
    Ok((path, meta))
}

pub fn evolve(flow: &LocalFlow, z: &LoopField, t: f64, grid: &TimeGrid, opts: &EvolveOptions) -> Result<Trajectory> {
    grid.validate()?;
    if let Some(r) = opts.rho0 {
        let nz = z.norm(NormKind::W12);
        if nz > r {
            return Err(Error::BallViolation { norm: nz, radius: r });
        }
    }
    let nodes = grid.nodes(t);
    let (path, meta) = evolve_nodes(flow, &flow.to_eigen(z), &nodes, opts)?;
    Ok(Trajectory {
        grid: nodes[..path.len()].to_vec(),
        states: path.iter().map(|y| flow.field(y)).collect(),
        meta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub initial_step: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            min_step: 1e-10,
            initial_step: 1e-5,
        }
    }
}

/// Right-hand side of `ζ_s = ζ_tt + ∇V_t(x+ζ) − ∇V_t(x)` on the grid.
struct MethodOfLines {
    dim: usize,
    nodes: usize,
    second_derivative: DMatrix<f64>,
    x_grid: Vec<f64>,
    grad_x: Vec<f64>,
    times: Vec<f64>,
    model: TorusModel,
}

impl MethodOfLines {
    fn new(chart: &Chart) -> Self {
        let basis = FourierBasis::get(chart.modes());
        let n = basis.nodes;
        let lap = DMatrix::from_fn(n, n, |k, l| {
            if k == l {
                let w = 2.0 * std::f64::consts::PI * loopspace::wavenumber(k) as f64;
                -w * w
            } else {
                0.0
            }
        });
        let second_derivative = &basis.synth * lap * basis.synth.transpose() / n as f64;
        let x = &chart.critical.x;
        let xg = loopspace::inverse(x);
        let times = basis.times();
        let dim = chart.dim();
        let mut grad_x = vec![0.0; dim * n];
        let mut q = vec![0.0; dim];
        let mut g = vec![0.0; dim];
        for i in 0..n {
            for m in 0..dim {
                q[m] = xg.values[(i, m)];
            }
            chart.model.grad_into(times[i], &q, &mut g);
            for m in 0..dim {
                grad_x[m * n + i] = g[m];
            }
        }
        Self {
            dim,
            nodes: n,
            second_derivative,
            x_grid: xg.values.as_slice().to_vec(),
            grad_x,
            times,
            model: chart.model.clone(),
        }
    }

    fn rhs(&self, zeta: &DVector<f64>) -> DVector<f64> {
        let n = self.nodes;
        let mut out = DVector::zeros(zeta.len());
        for m in 0..self.dim {
            let block = zeta.rows(m * n, n);
            out.rows_mut(m * n, n).copy_from(&(&self.second_derivative * block));
        }
        let mut q = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for i in 0..n {
            for m in 0..self.dim {
                q[m] = self.x_grid[m * n + i] + zeta[m * n + i];
            }
            self.model.grad_into(self.times[i], &q, &mut g);
            for m in 0..self.dim {
                out[m * n + i] += g[m] - self.grad_x[m * n + i];
            }
        }
        out
    }
}

// Dormand–Prince 5(4) tableau; the RHS is autonomous in s, so the nodes c_i are not needed
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Method-of-lines reference solution sampled at `nodes` (which must start at 0).
pub fn evolve_oracle(chart: &Chart, z: &LoopField, nodes: &[f64], opts: &OracleOptions) -> Result<Trajectory> {
    if nodes.first() != Some(&0.0) || nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Grid("oracle output nodes must start at 0 and increase".into()));
    }
    let mol = MethodOfLines::new(chart);
    let mut y = DVector::from_column_slice(loopspace::inverse(z).values.as_slice());
    let mut states = vec![z.clone()];
    let mut k = vec![DVector::zeros(y.len()); 7];
    k[0] = mol.rhs(&y);
    let mut s = 0.0;
    let mut h = opts.initial_step;
    let mut steps = 0;
    for &target in &nodes[1..] {
        while s < target {
            let last = target - s <= h * (1.0 + 1e-12);
            let step = if last { target - s } else { h };
            for st in 1..7 {
                let mut tmp = y.clone();
                for (j, a) in DP_A[st].iter().enumerate().take(st) {
                    if *a != 0.0 {
                        tmp.axpy(step * a, &k[j], 1.0);
                    }
                }
                k[st] = mol.rhs(&tmp);
            }
            let mut ynew = y.clone();
            let mut err = DVector::zeros(y.len());
            for st in 0..7 {
                if DP_B[st] != 0.0 {
                    ynew.axpy(step * DP_B[st], &k[st], 1.0);
                }
                if DP_E[st] != 0.0 {
                    err.axpy(step * DP_E[st], &k[st], 1.0);
                }
            }
            let mut acc = 0.0;
            for i in 0..y.len() {
                let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
                acc += (err[i] / sc).powi(2);
            }
            let en = (acc / y.len() as f64).sqrt();
            if en <= 1.0 {
                s = if last { target } else { s + step };
                y = ynew;
                k[0] = k[6].clone();
                steps += 1;
                let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    h = step * fac;
                }
            } else {
                let fac = if en.is_finite() { (0.9 * en.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                h = step * fac;
            }
            if h < opts.min_step {
                return Err(Error::StiffnessAbort { s, step: h });
            }
        }
        let values = DMatrix::from_column_slice(mol.nodes, mol.dim, y.as_slice());
        states.push(loopspace::transform(&loopspace::GridField::new(values))?);
    }
    Ok(Trajectory {
        grid: nodes.to_vec(),
        states,
        meta: TrajectoryMeta {
            solver: "dopri5-method-of-lines".into(),
            steps,
            ..Default::default()
        },
    })
}

/// Maximum W^{1,2} discrepancy between the stored states and the split
/// integral representation evaluated along them, with the plus part anchored
/// at the first node and the minus part at the last.
pub fn residual_representation(flow: &LocalFlow, traj: &Trajectory) -> Result<f64> {
    if traj.grid.len() < 2 {
        return Ok(0.0);
    }
    let path: Vec<DVector<f64>> = traj.states.iter().map(|f| flow.to_eigen(f)).collect();
    let forcing: Vec<DVector<f64>> = path.iter().map(|y| flow.f_eigen(y)).collect();
    let kernels = MeshKernels::new(&flow.dec, &traj.grid);
    let rep = kernels.sweep(&forcing, &path[0], path.last().unwrap());
    Ok(rep
        .iter()
        .zip(&path)
        .map(|(a, b)| flow.w12(&(a - b)))
        .fold(0.0, f64::max))
}

/// Action of `x + ζ(s)` at every node.
pub fn action_along(model: &TorusModel, x: &LoopField, traj: &Trajectory) -> Vec<f64> {
    traj.states.iter().map(|z| model::action(model, &x.add(z))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn pendulum_flow(modes: usize) -> LocalFlow {
        LocalFlow::from_model(
            TorusModel::pendulum(1.0),
            &LoopField::constant(modes, &[3.0]),
            NewtonOptions::default(),
            0.5,
            1e-8,
        )
        .unwrap()
    }

    fn closed_form(z0: f64, s: f64) -> f64 {
        2.0 * ((z0 / 2.0).tan() * s.exp()).atan()
    }

    #[test]
    fn graded_grid_shape() {
        let g = TimeGrid::default();
        let nodes = g.nodes(1.0);
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[1], 1e-6);
        assert_eq!(*nodes.last().unwrap(), 1.0);
        assert!(nodes.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= 0.01 + 1e-12));
        let u = TimeGrid::Uniform { step: 0.3 }.nodes(1.0);
        assert_eq!(u.len(), 5);
        let mut tail = vec![0.0, 0.5, 1.0];
        extend_tail(&mut tail, 10.0, 0.5, 1.5, 2.0);
        assert_eq!(*tail.last().unwrap(), 10.0);
        assert!(tail.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn equilibrium_stays_put() {
        let flow = pendulum_flow(16);
        let traj = evolve(&flow, &LoopField::zeros(1, 16), 1.0, &TimeGrid::default(), &EvolveOptions::default()).unwrap();
        assert!(traj.states.iter().all(|s| s.norm(NormKind::W12) == 0.0));
        assert!(residual_representation(&flow, &traj).unwrap() < 1e-12);
        let a = action_along(&flow.chart.model, &flow.chart.critical.x, &traj);
        assert!(a.iter().all(|v| (v - a[0]).abs() < 1e-15));
    }

    #[test]
    fn constant_mode_matches_closed_form() {
        let flow = pendulum_flow(16);
        let traj = evolve(
            &flow,
            &LoopField::constant(16, &[0.1]),
            1.0,
            &TimeGrid::default(),
            &EvolveOptions::default(),
        )
        .unwrap();
        let end = traj.end();
        assert_relative_eq!(closed_form(0.1, 1.0), 0.270395, epsilon = 1e-6);
        assert!((end.coords()[0] - closed_form(0.1, 1.0)).abs() < 1e-6);
        assert!(end.coords()[1..].iter().all(|c| c.abs() < 1e-14));
        let actions = action_along(&flow.chart.model, &flow.chart.critical.x, &traj);
        assert!(actions.windows(2).all(|w| w[1] < w[0] + 1e-10));
        assert!(actions.last().unwrap() < &actions[0]);
    }

    #[test]
    fn plus_eigenvector_decays_linearly() {
        let flow = pendulum_flow(16);
        let v = flow.dec.eigenvector(flow.dec.morse_index).scaled(1e-4);
        let traj = evolve(&flow, &v, 0.2, &TimeGrid::default(), &EvolveOptions::default()).unwrap();
        let lam = flow.dec.lowest_positive();
        for (s, z) in traj.grid.iter().zip(&traj.states) {
            assert!(z.norm(NormKind::W12) <= v.norm(NormKind::W12) * (-s * lam).exp() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn leaving_the_chart_is_flagged() {
        let flow = pendulum_flow(8);
        let opts = EvolveOptions {
            rho0: Some(0.5),
            ..Default::default()
        };
        let traj = evolve(&flow, &LoopField::constant(8, &[0.3]), 3.0, &TimeGrid::default(), &opts).unwrap();
        assert!(traj.meta.left_chart);
        assert!(*traj.grid.last().unwrap() < 3.0);
        assert!(matches!(
            evolve(&flow, &LoopField::constant(8, &[0.6]), 1.0, &TimeGrid::default(), &opts),
            Err(Error::BallViolation { .. })
        ));
    }

    #[test]
    fn oracle_agrees_with_exponential_integrator() {
        let flow = pendulum_flow(16);
        let mut z = LoopField::zeros(1, 16);
        z.coords_mut()[0] = 0.03;
        z.coords_mut()[1] = 0.05;
        let grid = TimeGrid::default();
        let a = evolve(&flow, &z, 0.5, &grid, &EvolveOptions::default()).unwrap();
        let b = evolve_oracle(&flow.chart, &z, &[0.0, 0.25, 0.5], &OracleOptions::default()).unwrap();
        assert!(a.end().sub(b.end()).norm(NormKind::W12) < 1e-6);
        let zero = evolve_oracle(&flow.chart, &LoopField::zeros(1, 16), &[0.0, 0.5], &OracleOptions::default()).unwrap();
        assert_eq!(zero.end().norm(NormKind::W12), 0.0);
    }

    #[test]
    fn semiflow_property() {
        let flow = pendulum_flow(16);
        let z = LoopField::constant(16, &[0.05]).add(&flow.dec.eigenvector(3).scaled(0.02));
        let grid = TimeGrid::Uniform { step: 0.005 };
        let whole = evolve(&flow, &z, 0.6, &grid, &EvolveOptions::default()).unwrap();
        let first = evolve(&flow, &z, 0.3, &grid, &EvolveOptions::default()).unwrap();
        let second = evolve(&flow, first.end(), 0.3, &grid, &EvolveOptions::default()).unwrap();
        assert!(whole.end().sub(second.end()).norm(NormKind::W12) < 1e-8);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let traj = Trajectory::from_states(vec![0.0, 1.0], vec![LoopField::zeros(1, 1); 2]).unwrap();
        let csv = traj.to_csv();
        assert!(csv.starts_with("s,c0,c1,c2\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!(Trajectory::from_states(vec![1.0, 0.0], vec![LoopField::zeros(1, 1); 2]).is_err());
    }
}
