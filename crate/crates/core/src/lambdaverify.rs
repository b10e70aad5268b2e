//! Experiment harness: convergence of the time-`T` graphs to the stable
//! graph, C¹ convergence in L², fiber roundtrips, bi-Lipschitz and
//! Lipschitz-in-`T` audits.
//!
//! All sweeps are row-parallel and aggregate in a fixed row order, so their
//! output does not depend on scheduling.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphmaps::{
    self, backward_point, linearized_graph, solve_mixed, solve_stable, Calibration, ConstantsLedger, SolverOptions,
    SpherePoint,
};
use crate::loopspace::{LoopField, NormKind};
use crate::semiflow::{evolve, evolve_oracle, EvolveOptions, LocalFlow, OracleOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// `T_list = T0 + t_offsets`
    pub t_offsets: Vec<f64>,
    pub gamma_count: usize,
    /// random `z₊` samples; `z₊ = 0` is always added as sample 0
    pub zplus_count: usize,
    /// `‖z₊‖_{W12}` as a fraction of the admissible radius `ρ/(2c)`
    pub radius_fraction: f64,
    pub v_count: usize,
    pub seed: u64,
    /// relative slack on fitted rates, as a fraction of `μ`
    pub rate_tol_fraction: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            t_offsets: (0..=8).map(|i| 0.5 * i as f64).collect(),
            gamma_count: 2,
            zplus_count: 5,
            radius_fraction: 0.5,
            v_count: 3,
            seed: 1,
            rate_tol_fraction: 0.05,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_offsets.is_empty() || self.gamma_count == 0 || self.v_count == 0 {
            return Err(Error::Invalid("sweep lists must be nonempty".into()));
        }
        if self.t_offsets[0] < 0.0 || self.t_offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("T offsets must be nonnegative and increasing".into()));
        }
        if !(self.radius_fraction > 0.0 && self.radius_fraction <= 1.0) {
            return Err(Error::Invalid(format!("radius fraction {} not in (0, 1]", self.radius_fraction)));
        }
        Ok(())
    }

    pub fn t_list(&self, t0: f64) -> Vec<f64> {
        self.t_offsets.iter().map(|o| t0 + o).collect()
    }
}

/// Random element of `X⁺` whose eigen-coordinates are damped by `(1+|λ|)^{-power}`.
fn random_plus(flow: &LocalFlow, rng: &mut ChaCha8Rng, power: f64) -> DVector<f64> {
    let k = flow.dec.morse_index;
    DVector::from_fn(flow.size(), |i, _| {
        let z: f64 = StandardNormal.sample(rng);
        if i < k {
            0.0
        } else {
            z / (1.0 + flow.dec.eigenvalues[i].abs()).powf(power)
        }
    })
}

/// Everything a sweep needs: the chart, a calibrated ledger and the samples.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub flow: LocalFlow,
    pub ledger: ConstantsLedger,
    pub gammas: Vec<SpherePoint>,
    /// `z₊` samples; index 0 is the origin
    pub zplus: Vec<LoopField>,
    /// L²-normalized directions in `X⁺`; index 0 is the lowest positive eigenvector
    pub vs: Vec<LoopField>,
    pub t_list: Vec<f64>,
    pub spec: SweepSpec,
    pub opts: SolverOptions,
}

impl Experiment {
    pub fn new(flow: LocalFlow, cal: &Calibration, spec: SweepSpec, opts: SolverOptions) -> Result<Self> {
        spec.validate()?;
        if cal.sphere.len() < spec.gamma_count {
            return Err(Error::Invalid(format!(
                "{} sphere points requested, {} available",
                spec.gamma_count,
                cal.sphere.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let radius = spec.radius_fraction * cal.ledger.zplus_radius();
        let mut zplus = vec![LoopField::zeros(flow.chart.dim(), flow.chart.modes())];
        for _ in 0..spec.zplus_count {
            let y = random_plus(&flow, &mut rng, 0.5);
            zplus.push(flow.field(&(&y * (radius / flow.w12(&y)))));
        }
        let mut vs = vec![flow.dec.eigenvector(flow.dec.morse_index)];
        for _ in 1..spec.v_count {
            let y = random_plus(&flow, &mut rng, 1.0);
            vs.push(flow.field(&(&y / y.norm())));
        }
        Ok(Self {
            t_list: spec.t_list(cal.ledger.t0),
            ledger: cal.ledger.clone(),
            gammas: cal.sphere[..spec.gamma_count].to_vec(),
            flow,
            zplus,
            vs,
            spec,
            opts,
        })
    }

    pub fn rate_tol(&self) -> f64 {
        self.spec.rate_tol_fraction * self.ledger.mu
    }

    pub fn bound_rate(&self) -> f64 {
        0.25 * self.ledger.mu
    }

    /// `(T index, γ index, z₊ index)` in row order.
    fn keys(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for ti in 0..self.t_list.len() {
            for g in 0..self.gammas.len() {
                for z in 0..self.zplus.len() {
                    out.push((ti, g, z));
                }
            }
        }
        out
    }

    fn stable_points(&self) -> Vec<Result<graphmaps::GraphPoint>> {
        self.zplus
            .par_iter()
            .map(|z| solve_stable(&self.flow, &self.ledger, z, &self.opts))
            .collect()
    }
}

/// Least-squares slope of `y` against `x` with a separate intercept per group.
pub fn pooled_slope(groups: &[Vec<(f64, f64)>]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for g in groups.iter().filter(|g| g.len() >= 2) {
        let n = g.len() as f64;
        let mx = g.iter().map(|p| p.0).sum::<f64>() / n;
        let my = g.iter().map(|p| p.1).sum::<f64>() / n;
        for (x, y) in g {
            num += (x - mx) * (y - my);
            den += (x - mx) * (x - mx);
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Distances below this are exact zeros up to rounding and carry no rate.
pub const FIT_FLOOR: f64 = 1e-12;

fn log_groups<K: Ord + Copy>(points: impl Iterator<Item = (K, f64, f64)>) -> Vec<(K, Vec<(f64, f64)>)> {
    let mut map = std::collections::BTreeMap::<K, Vec<(f64, f64)>>::new();
    for (k, t, d) in points {
        if d > FIT_FLOOR && d.is_finite() {
            map.entry(k).or_default().push((t, d.ln()));
        }
    }
    map.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub gamma_id: usize,
    pub zplus_id: usize,
    pub v_id: Option<usize>,
    pub points: usize,
    /// `−slope` of `ln dist` against `T`
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub gamma_id: usize,
    pub zplus_id: usize,
    /// `‖Γ^T_γ(z₊) − Γ^∞(z₊)‖_{W12}`
    pub dist_w12: Option<f64>,
    /// `‖φ_{−T}γ‖_{W12}`, recorded for `z₊ = 0`
    pub gamma_t_norm: Option<f64>,
    pub minus_mismatch: Option<f64>,
    pub distance_to_gamma: Option<f64>,
    pub fixed_point_residual: Option<f64>,
    pub iters: Option<usize>,
    pub max_ratio: Option<f64>,
    /// `‖π₊Γ^T_γ(z₊) − z₊‖` in eigen-coordinates
    pub plus_defect: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub groups: Vec<GroupFit>,
    /// decay rate `−slope` of the pooled fit of `ln dist_w12` against `T`
    pub fitted_rate: Option<f64>,
    pub fitted_slope: Option<f64>,
    pub bound_rate: f64,
    pub rate_tol: f64,
    pub max_ratio: f64,
    pub stable_max_ratio: f64,
    pub pass_rate: bool,
    pub pass_monotone: bool,
    pub pass_zero_rows: bool,
    pub pass_contraction: bool,
    pub pass_complete: bool,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "T,gamma_id,zplus_id,dist_w12,gamma_t_norm,minus_mismatch,distance_to_gamma,fixed_point_residual,iters,max_ratio,plus_defect,error\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.gamma_id,
                r.zplus_id,
                opt(r.dist_w12),
                opt(r.gamma_t_norm),
                opt(r.minus_mismatch),
                opt(r.distance_to_gamma),
                opt(r.fixed_point_residual),
                r.iters.map(|i| i.to_string()).unwrap_or_default(),
                opt(r.max_ratio),
                opt(r.plus_defect),
                csv_text(r.error.as_deref()),
            ));
        }
        out
    }

    /// Two columns `T dist` per group separated by blank lines (gnuplot `index`).
    pub fn decay_table(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            out.push_str(&format!("# gamma {} zplus {}\n", g.gamma_id, g.zplus_id));
            for r in self
                .rows
                .iter()
                .filter(|r| r.gamma_id == g.gamma_id && r.zplus_id == g.zplus_id)
            {
                if let Some(d) = r.dist_w12 {
                    out.push_str(&format!("{:e} {:e}\n", r.t, d));
                }
            }
            out.push_str("\n\n");
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn csv_text(s: Option<&str>) -> String {
    s.map(|e| format!("\"{}\"", e.replace('"', "'"))).unwrap_or_default()
}

/// `‖Γ^T_γ(z₊) − Γ^∞(z₊)‖_{W12}` over the full `(T, γ, z₊)` grid.
pub fn sweep_convergence(exp: &Experiment) -> SweepResult {
    let flow = &exp.flow;
    let stable = exp.stable_points();
    let rows: Vec<SweepRow> = exp
        .keys()
        .par_iter()
        .map(|&(ti, g, z)| {
            let t = exp.t_list[ti];
            let mut row = SweepRow {
                t,
                gamma_id: exp.gammas[g].id,
                zplus_id: z,
                dist_w12: None,
                gamma_t_norm: None,
                minus_mismatch: None,
                distance_to_gamma: None,
                fixed_point_residual: None,
                iters: None,
                max_ratio: None,
                plus_defect: None,
                error: None,
            };
            let gamma = &exp.gammas[g].gamma;
            let res = solve_mixed(flow, &exp.ledger, t, gamma, Some(exp.gammas[g].id), &exp.zplus[z], &exp.opts);
            let p = match (res, &stable[z]) {
                (Ok(p), Ok(_)) => p,
                (Err(e), _) => {
                    row.error = Some(e.to_string());
                    return row;
                }
                (_, Err(e)) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            let s = stable[z].as_ref().unwrap();
            row.dist_w12 = Some(flow.w12(&(p.xi0_eigen() - s.xi0_eigen())));
            row.minus_mismatch = Some(p.endpoint.minus_mismatch);
            row.distance_to_gamma = Some(p.endpoint.distance);
            row.fixed_point_residual = Some(p.endpoint.fixed_point);
            row.iters = Some(p.iters);
            row.max_ratio = Some(p.max_ratio());
            let ze = flow.to_eigen(&exp.zplus[z]);
            let k = flow.dec.morse_index;
            row.plus_defect = Some((p.xi0_eigen().rows(k, ze.len() - k) - ze.rows(k, ze.len() - k)).norm());
            if z == 0 {
                match backward_point(flow, &exp.ledger, gamma, t, &exp.opts) {
                    Ok(b) => row.gamma_t_norm = Some(b.norm(NormKind::W12)),
                    Err(e) => row.error = Some(e.to_string()),
                }
            }
            row
        })
        .collect();

    let groups_raw = log_groups(
        rows.iter()
            .filter_map(|r| r.dist_w12.map(|d| ((r.gamma_id, r.zplus_id), r.t, d))),
    );
    let series: Vec<Vec<(f64, f64)>> = groups_raw.iter().map(|(_, v)| v.clone()).collect();
    let fitted_slope = pooled_slope(&series);
    let groups = groups_raw
        .iter()
        .map(|((g, z), pts)| GroupFit {
            gamma_id: *g,
            zplus_id: *z,
            v_id: None,
            points: pts.len(),
            rate: pooled_slope(std::slice::from_ref(pts)).map(|s| -s),
        })
        .collect();
    let fitted_rate = fitted_slope.map(|s| -s);
    let bound_rate = exp.bound_rate();
    let rate_tol = exp.rate_tol();
    let tol = 10.0 * exp.opts.fp_tol;
    let mut pass_monotone = true;
    for a in &rows {
        for b in &rows {
            if a.gamma_id == b.gamma_id && a.zplus_id == b.zplus_id && b.t > a.t {
                if let (Some(da), Some(db)) = (a.dist_w12, b.dist_w12) {
                    pass_monotone &= db <= da + tol;
                }
            }
        }
    }
    let pass_zero_rows = rows.iter().filter(|r| r.zplus_id == 0).all(|r| match (r.dist_w12, r.gamma_t_norm) {
        (Some(d), Some(n)) => (d - n).abs() <= 2.0 * exp.opts.fp_tol,
        _ => false,
    });
    let max_ratio = rows.iter().filter_map(|r| r.max_ratio).fold(0.0, f64::max);
    let stable_max_ratio = stable
        .iter()
        .filter_map(|s| s.as_ref().ok())
        .map(|s| s.max_ratio())
        .fold(0.0, f64::max);
    SweepResult {
        pass_rate: fitted_rate.is_some_and(|r| r >= bound_rate - rate_tol),
        pass_monotone,
        pass_zero_rows,
        pass_contraction: max_ratio.max(stable_max_ratio) <= graphmaps::PROBE_RATIO_LIMIT,
        pass_complete: rows.iter().all(|r| r.error.is_none()),
        rows,
        groups,
        fitted_rate,
        fitted_slope,
        bound_rate,
        rate_tol,
        max_ratio,
        stable_max_ratio,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1Row {
    #[serde(rename = "T")]
    pub t: f64,
    pub gamma_id: usize,
    pub zplus_id: usize,
    pub v_id: usize,
    /// `‖X_v(0) − Y_v(0)‖_{L2}` for L²-unit `v`
    pub c1_dist_l2: Option<f64>,
    /// `‖X_v(0)‖_{L2}`
    pub xv_l2: Option<f64>,
    /// `‖Y_v(0) − v‖_{L2}`
    pub yv_dev_l2: Option<f64>,
    /// `3ĉ e^{−Tμ/4}`
    pub bound: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1Result {
    pub rows: Vec<C1Row>,
    pub groups: Vec<GroupFit>,
    pub fitted_rate: Option<f64>,
    pub bound_rate: f64,
    pub rate_tol: f64,
    pub max_xv_l2: f64,
    pub max_yv_dev_l2: f64,
    pub pass_xv_bound: bool,
    pub pass_yv_bound: bool,
    pub pass_decay_bound: bool,
    pub pass_rate: bool,
    pub pass_complete: bool,
}

impl C1Result {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,gamma_id,zplus_id,v_id,c1_dist_l2,xv_l2,yv_dev_l2,bound,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{},{},{},{},{},{},{:e},{}\n",
                r.t,
                r.gamma_id,
                r.zplus_id,
                r.v_id,
                opt(r.c1_dist_l2),
                opt(r.xv_l2),
                opt(r.yv_dev_l2),
                r.bound,
                csv_text(r.error.as_deref()),
            ));
        }
        out
    }
}

/// `‖dΓ^T_γ(z₊)v − dΓ^∞(z₊)v‖_{L2}` and the L² bounds of the linearized graphs.
pub fn sweep_c1(exp: &Experiment) -> C1Result {
    let flow = &exp.flow;
    let stable = exp.stable_points();
    let ys: Vec<Vec<Result<LoopField>>> = stable
        .par_iter()
        .map(|s| {
            exp.vs
                .iter()
                .map(|v| match s {
                    Ok(p) => linearized_graph(flow, p, v, &exp.opts),
                    Err(e) => Err(e.clone()),
                })
                .collect()
        })
        .collect();
    let rows: Vec<C1Row> = exp
        .keys()
        .par_iter()
        .flat_map_iter(|&(ti, g, z)| {
            let t = exp.t_list[ti];
            let bound = 3.0 * exp.ledger.c * (-t * exp.ledger.mu / 4.0).exp();
            let base = solve_mixed(
                flow,
                &exp.ledger,
                t,
                &exp.gammas[g].gamma,
                Some(exp.gammas[g].id),
                &exp.zplus[z],
                &exp.opts,
            );
            exp.vs
                .iter()
                .enumerate()
                .map(|(vi, v)| {
                    let mut row = C1Row {
                        t,
                        gamma_id: exp.gammas[g].id,
                        zplus_id: z,
                        v_id: vi,
                        c1_dist_l2: None,
                        xv_l2: None,
                        yv_dev_l2: None,
                        bound,
                        error: None,
                    };
                    let x = base.as_ref().map_err(Clone::clone).and_then(|b| linearized_graph(flow, b, v, &exp.opts));
                    match (x, &ys[z][vi]) {
                        (Ok(x), Ok(y)) => {
                            row.c1_dist_l2 = Some(x.sub(y).norm(NormKind::L2));
                            row.xv_l2 = Some(x.norm(NormKind::L2));
                            row.yv_dev_l2 = Some(y.sub(v).norm(NormKind::L2));
                        }
                        (Err(e), _) => row.error = Some(e.to_string()),
                        (_, Err(e)) => row.error = Some(e.to_string()),
                    }
                    row
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let groups_raw = log_groups(
        rows.iter()
            .filter_map(|r| r.c1_dist_l2.map(|d| ((r.gamma_id, r.zplus_id, r.v_id), r.t, d))),
    );
    let series: Vec<Vec<(f64, f64)>> = groups_raw.iter().map(|(_, v)| v.clone()).collect();
    let fitted_rate = pooled_slope(&series).map(|s| -s);
    let groups = groups_raw
        .iter()
        .map(|((g, z, v), pts)| GroupFit {
            gamma_id: *g,
            zplus_id: *z,
            v_id: Some(*v),
            points: pts.len(),
            rate: pooled_slope(std::slice::from_ref(pts)).map(|s| -s),
        })
        .collect();
    let max_xv_l2 = rows.iter().filter_map(|r| r.xv_l2).fold(0.0, f64::max);
    let max_yv_dev_l2 = rows.iter().filter_map(|r| r.yv_dev_l2).fold(0.0, f64::max);
    let bound_rate = exp.bound_rate();
    let rate_tol = exp.rate_tol();
    C1Result {
        pass_xv_bound: max_xv_l2 <= 2.0,
        pass_yv_bound: max_yv_dev_l2 <= 0.25,
        pass_decay_bound: rows.iter().all(|r| r.c1_dist_l2.is_some_and(|d| d <= r.bound)),
        pass_rate: fitted_rate.is_some_and(|r| r >= bound_rate - rate_tol),
        pass_complete: rows.iter().all(|r| r.error.is_none()),
        rows,
        groups,
        fitted_rate,
        bound_rate,
        rate_tol,
        max_xv_l2,
        max_yv_dev_l2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceCheck {
    #[serde(rename = "T")]
    pub t: f64,
    pub gamma_id: usize,
    pub zplus_id: usize,
    pub v_id: usize,
    pub h: f64,
    /// `‖X_v(0) − (Γ(z₊+hv) − Γ(z₊))/h‖_{W12} / ‖X_v(0)‖_{W12}`
    pub relative_error: f64,
    pub pass: bool,
}

/// Compare the linearized graph with a one-sided difference quotient of `Γ^T_γ`.
pub fn linearization_fd_check(exp: &Experiment, t: f64, gamma_idx: usize, zplus_id: usize, v_id: usize, h: f64) -> Result<FiniteDifferenceCheck> {
    let flow = &exp.flow;
    let gm = &exp.gammas[gamma_idx];
    let z = &exp.zplus[zplus_id];
    let v = &exp.vs[v_id];
    let base = solve_mixed(flow, &exp.ledger, t, &gm.gamma, Some(gm.id), z, &exp.opts)?;
    let shifted = solve_mixed(flow, &exp.ledger, t, &gm.gamma, Some(gm.id), &z.axpy(h, v), &exp.opts)?;
    let x = flow.to_eigen(&linearized_graph(flow, &base, v, &exp.opts)?);
    let fd = (shifted.xi0_eigen() - base.xi0_eigen()) / h;
    let relative_error = flow.w12(&(&x - fd)) / flow.w12(&x);
    Ok(FiniteDifferenceCheck {
        t,
        gamma_id: gm.id,
        zplus_id,
        v_id,
        h,
        relative_error,
        pass: relative_error < 1e-3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub gamma_id: usize,
    pub zplus_id: usize,
    /// `‖π₋φ_T(Γ) − π₋γ‖_{W12}` with the exponential integrator
    pub fiber_residual: Option<f64>,
    /// `‖φ_T(Γ) − γ‖_{W12}`
    pub distance: Option<f64>,
    pub oracle_fiber_residual: Option<f64>,
    pub oracle_distance: Option<f64>,
    /// `‖φ_T − φ_T^{oracle}‖_{W12}` at time `T`
    pub solver_gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub r: f64,
    pub t1: f64,
    pub fiber_tol: f64,
    pub rows: Vec<RoundtripRow>,
    pub max_fiber_residual: f64,
    pub max_distance: f64,
    pub max_solver_gap: f64,
    pub oracle_rows: usize,
    pub pass_fiber: bool,
    pub pass_ball: bool,
    pub pass_oracle: bool,
    pub pass_complete: bool,
}

impl RoundtripReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "T,gamma_id,zplus_id,fiber_residual,distance,oracle_fiber_residual,oracle_distance,solver_gap,error\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.gamma_id,
                r.zplus_id,
                opt(r.fiber_residual),
                opt(r.distance),
                opt(r.oracle_fiber_residual),
                opt(r.oracle_distance),
                opt(r.solver_gap),
                csv_text(r.error.as_deref()),
            ));
        }
        out
    }
}

/// Forward-evolve every `Γ^T_γ(z₊)` by `T` and measure how far it lands
/// from the fiber over `γ`. The method-of-lines oracle is run on the rows
/// selected by `oracle_filter` (it is far slower than the sweep itself).
pub fn roundtrip_audit(exp: &Experiment, oracle_filter: impl Fn(usize, usize, usize) -> bool + Sync) -> RoundtripReport {
    let flow = &exp.flow;
    let k = flow.dec.morse_index;
    let fiber = |state: &LoopField, gamma: &LoopField| {
        let diff = state.sub(gamma);
        let y = flow.to_eigen(&diff);
        let minus = DVector::from_fn(y.len(), |i, _| if i < k { y[i] } else { 0.0 });
        (flow.w12(&minus), diff.norm(NormKind::W12))
    };
    let rows: Vec<RoundtripRow> = exp
        .keys()
        .par_iter()
        .map(|&(ti, g, z)| {
            let t = exp.t_list[ti];
            let gamma = &exp.gammas[g].gamma;
            let mut row = RoundtripRow {
                t,
                gamma_id: exp.gammas[g].id,
                zplus_id: z,
                fiber_residual: None,
                distance: None,
                oracle_fiber_residual: None,
                oracle_distance: None,
                solver_gap: None,
                error: None,
            };
            let mut run = || -> Result<()> {
                let p = solve_mixed(flow, &exp.ledger, t, gamma, Some(exp.gammas[g].id), &exp.zplus[z], &exp.opts)?;
                let fwd = evolve(flow, &p.xi0, t, &exp.opts.grid, &EvolveOptions::default())?;
                let (fr, d) = fiber(fwd.end(), gamma);
                row.fiber_residual = Some(fr);
                row.distance = Some(d);
                if oracle_filter(ti, g, z) {
                    let o = evolve_oracle(&flow.chart, &p.xi0, &[0.0, t], &OracleOptions::default())?;
                    let (ofr, od) = fiber(o.end(), gamma);
                    row.oracle_fiber_residual = Some(ofr);
                    row.oracle_distance = Some(od);
                    row.solver_gap = Some(o.end().sub(fwd.end()).norm(NormKind::W12));
                }
                Ok(())
            };
            if let Err(e) = run() {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect();
    let relevant = |r: &&RoundtripRow| r.t >= exp.ledger.t1;
    let max_fiber_residual = rows
        .iter()
        .flat_map(|r| [r.fiber_residual, r.oracle_fiber_residual])
        .flatten()
        .fold(0.0, f64::max);
    let max_distance = rows
        .iter()
        .filter(relevant)
        .flat_map(|r| [r.distance, r.oracle_distance])
        .flatten()
        .fold(0.0, f64::max);
    let max_solver_gap = rows.iter().filter_map(|r| r.solver_gap).fold(0.0, f64::max);
    let oracle_rows = rows.iter().filter(|r| r.solver_gap.is_some()).count();
    RoundtripReport {
        r: exp.ledger.r,
        t1: exp.ledger.t1,
        fiber_tol: 1e-5,
        pass_fiber: max_fiber_residual < 1e-5,
        pass_ball: max_distance <= exp.ledger.r,
        pass_oracle: oracle_rows > 0 && max_solver_gap < 1e-5,
        pass_complete: rows.iter().all(|r| r.error.is_none()),
        rows,
        max_fiber_residual,
        max_distance,
        max_solver_gap,
        oracle_rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRow {
    pub tau: f64,
    /// `‖Γ^{T+τ} − Γ^T‖_{W12} / τ`
    pub quotient: f64,
    /// the same quotient for the closed-form backward pendulum flow, if applicable
    pub closed_form_quotient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    #[serde(rename = "T")]
    pub t: f64,
    pub gamma_id: usize,
    pub zplus_id: usize,
    pub rows: Vec<LipschitzRow>,
    /// `max quotient / ρ0`
    pub empirical_constant: f64,
    /// largest relative change between successive quotients
    pub max_relative_step: f64,
    pub max_closed_form_error: Option<f64>,
    pub pass_bounded: bool,
    pub pass_stabilizing: bool,
    pub pass_closed_form: Option<bool>,
}

/// `γ` as a constant loop value, if it is one.
fn constant_value(f: &LoopField) -> Option<f64> {
    (f.dim() == 1 && f.coords()[1..].iter().all(|c| c.abs() < 1e-12)).then(|| f.coords()[0])
}

/// Difference quotients of `T ↦ Γ^T_γ(z₊)` over `taus` (largest first). For
/// the pendulum at `z₊ = 0` they are compared with the closed-form backward
/// flow `ζ_T = 2 arctan(e^{−T} tan(ζ/2))`.
pub fn lipschitz_in_t_audit(exp: &Experiment, t: f64, gamma_idx: usize, zplus_id: usize, taus: &[f64]) -> Result<LipschitzReport> {
    let flow = &exp.flow;
    let gamma = &exp.gammas[gamma_idx];
    let z = &exp.zplus[zplus_id];
    let solve = |tt: f64| solve_mixed(flow, &exp.ledger, tt, &gamma.gamma, Some(gamma.id), z, &exp.opts);
    let base = solve(t)?;
    let pendulum = exp.flow.chart.model == crate::model::TorusModel::pendulum(1.0);
    let closed = match (pendulum && zplus_id == 0, constant_value(&gamma.gamma)) {
        (true, Some(z0)) => Some(move |tt: f64| 2.0 * ((-tt).exp() * (z0 / 2.0).tan()).atan()),
        _ => None,
    };
    let rows: Vec<LipschitzRow> = taus
        .par_iter()
        .map(|tau| {
            let p = solve(t + tau)?;
            let quotient = flow.w12(&(p.xi0_eigen() - base.xi0_eigen())) / tau;
            Ok(LipschitzRow {
                tau: *tau,
                quotient,
                closed_form_quotient: closed.map(|c| (c(t + tau) - c(t)).abs() / tau),
            })
        })
        .collect::<Result<_>>()?;
    let qmax = rows.iter().map(|r| r.quotient).fold(0.0, f64::max);
    let max_relative_step = rows
        .windows(2)
        .map(|w| (w[1].quotient - w[0].quotient).abs() / w[0].quotient.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let max_closed_form_error = closed.map(|_| {
        rows.iter()
            .map(|r| (r.quotient - r.closed_form_quotient.unwrap()).abs() / r.closed_form_quotient.unwrap())
            .fold(0.0, f64::max)
    });
    // successive quotient changes should shrink (or be negligible) as τ halves
    let steps: Vec<f64> = rows.windows(2).map(|w| (w[1].quotient - w[0].quotient).abs()).collect();
    let pass_stabilizing = steps.windows(2).all(|w| w[1] <= w[0] * 0.75 + 1e-9 * qmax);
    Ok(LipschitzReport {
        t,
        gamma_id: gamma.id,
        zplus_id,
        empirical_constant: qmax / exp.ledger.rho0,
        max_relative_step,
        pass_bounded: rows.iter().all(|r| r.quotient.is_finite()) && max_relative_step < 0.5,
        pass_stabilizing,
        pass_closed_form: max_closed_form_error.map(|e| e < 1e-4),
        max_closed_form_error,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLipschitzReport {
    pub pairs: usize,
    /// `min ‖Γ(z₁)−Γ(z₂)‖/‖z₁−z₂‖` over pairs
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub upper_bound: f64,
    pub pass: bool,
}

/// Ratios `‖Γ^T_γ(z₁)−Γ^T_γ(z₂)‖/‖z₁−z₂‖` over all sample pairs at each
/// `(T, γ)` in `t_list`.
pub fn bilipschitz_audit(exp: &Experiment, t_list: &[f64]) -> Result<BiLipschitzReport> {
    let flow = &exp.flow;
    let mut keys = Vec::new();
    for (ti, _) in t_list.iter().enumerate() {
        for g in 0..exp.gammas.len() {
            for z in 0..exp.zplus.len() {
                keys.push((ti, g, z));
            }
        }
    }
    let points: Vec<DVector<f64>> = keys
        .par_iter()
        .map(|&(ti, g, z)| {
            let gm = &exp.gammas[g];
            solve_mixed(flow, &exp.ledger, t_list[ti], &gm.gamma, Some(gm.id), &exp.zplus[z], &exp.opts)
                .map(|p| p.xi0_eigen().clone())
        })
        .collect::<Result<_>>()?;
    let zs: Vec<DVector<f64>> = exp.zplus.iter().map(|z| flow.to_eigen(z)).collect();
    let mut ratios = Vec::new();
    for a in 0..keys.len() {
        for b in a + 1..keys.len() {
            let (ta, ga, za) = keys[a];
            let (tb, gb, zb) = keys[b];
            if ta == tb && ga == gb {
                let dz = flow.w12(&(&zs[za] - &zs[zb]));
                ratios.push(flow.w12(&(&points[a] - &points[b])) / dz);
            }
        }
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let upper_bound = 2.0 * exp.ledger.c;
    Ok(BiLipschitzReport {
        pairs: ratios.len(),
        min_ratio,
        max_ratio,
        upper_bound,
        pass: !ratios.is_empty() && min_ratio >= 0.5 && max_ratio <= upper_bound,
    })
}
