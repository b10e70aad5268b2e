use std::path::{Path, PathBuf};

use clap::Subcommand;
use loopflow::graphmaps::{self, Calibration, GraphPointSummary};
use loopflow::lambdaverify::{self, Experiment};
use loopflow::loopspace::{LoopField, NormKind};
use loopflow::model::NewtonOptions;
use loopflow::semiflow::{self, EvolveOptions, LocalFlow, OracleOptions};
use loopflow::semigroup;
use loopflow::spectral::Part;
use serde::Serialize;

use crate::output::{LedgerStatus, Meta, Output};
use crate::{CliError, RunConfig};

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Critical loop and spectral decomposition of the Jacobi operator
    Spectrum,
    /// Evolve a chart coordinate `z` (inline JSON array or file) for time `T`
    Flow {
        #[arg(long)]
        z: String,
        #[arg(long = "T")]
        t: f64,
        /// also run the method-of-lines reference solver
        #[arg(long)]
        oracle: bool,
    },
    /// Point of the local stable manifold over `z₊`
    Stable {
        #[arg(long, conflicts_with = "zplus_id")]
        z: Option<String>,
        /// index into the sampled `z₊` (0 is the origin)
        #[arg(long, default_value_t = 0)]
        zplus_id: usize,
    },
    /// Point of the local unstable manifold over `z₋` (default: origin)
    Unstable {
        #[arg(long)]
        z: Option<String>,
    },
    /// Descending sphere at action level `c − ε`
    Sphere {
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Point of the time-`T` graph over a sphere point
    Mixed {
        #[arg(long = "T")]
        t: f64,
        #[arg(long, default_value_t = 0)]
        gamma_id: usize,
        #[arg(long, conflicts_with = "zplus_id")]
        z: Option<String>,
        #[arg(long, default_value_t = 0)]
        zplus_id: usize,
    },
    /// Convergence of the time-`T` graphs to the stable graph
    LambdaSweep,
    /// Convergence of the linearized graphs in L², plus a finite-difference check
    C1Sweep,
    /// Forward-evolve every sweep point back to its fiber
    Roundtrip,
    /// Lipschitz-in-`T` and bi-Lipschitz audits
    LipschitzAudit,
    /// Weighted semigroup smoothing bound, at `J` and `2J`
    SmoothingAudit,
    /// Calibrated constants ledger and its inequality checks
    ValidateLedger,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Flow { .. } => "flow",
            Command::Stable { .. } => "stable",
            Command::Unstable { .. } => "unstable",
            Command::Sphere { .. } => "sphere",
            Command::Mixed { .. } => "mixed",
            Command::LambdaSweep => "lambda-sweep",
            Command::C1Sweep => "c1-sweep",
            Command::Roundtrip => "roundtrip",
            Command::LipschitzAudit => "lipschitz-audit",
            Command::SmoothingAudit => "smoothing-audit",
            Command::ValidateLedger => "validate-ledger",
        }
    }
}

/// Chart and calibrated ledger shared by every subcommand.
pub struct Session {
    pub cfg: RunConfig,
    pub hash: String,
    pub flow: LocalFlow,
    pub cal: Calibration,
}

impl Session {
    pub fn open(cfg: RunConfig) -> Result<Self, CliError> {
        let flow = flow_at(&cfg, cfg.modes)?;
        let cal = graphmaps::calibrate(&flow, &cfg.ledger, cfg.seed, &cfg.solver)?;
        Ok(Self {
            hash: cfg.hash(),
            cfg,
            flow,
            cal,
        })
    }

    pub fn experiment(&self) -> Result<Experiment, CliError> {
        Ok(Experiment::new(
            self.flow.clone(),
            &self.cal,
            self.cfg.sweep.clone(),
            self.cfg.solver,
        )?)
    }

    fn output(&self, cmd: &Command, root: &Path) -> Result<Output, CliError> {
        Output::create(
            root,
            Meta {
                tool: "loopflow",
                version: env!("CARGO_PKG_VERSION"),
                subcommand: cmd.name().to_string(),
                config_hash: self.hash.clone(),
                ledger: LedgerStatus::from(&self.cal.report),
            },
        )
    }

    fn field_arg(&self, arg: &str) -> Result<LoopField, CliError> {
        parse_field(arg, self.flow.chart.dim(), self.flow.chart.modes())
    }

    fn zplus(&self, z: &Option<String>, zplus_id: usize) -> Result<(LoopField, String), CliError> {
        match z {
            Some(text) => Ok((self.field_arg(text)?, "z".to_string())),
            None => {
                let exp = self.experiment()?;
                let z = exp.zplus.get(zplus_id).cloned().ok_or_else(|| {
                    CliError::Argument(format!("zplus id {zplus_id} out of range (0..{})", exp.zplus.len()))
                })?;
                Ok((z, format!("z{zplus_id}")))
            }
        }
    }
}

fn flow_at(cfg: &RunConfig, modes: usize) -> Result<LocalFlow, CliError> {
    Ok(LocalFlow::from_model(
        cfg.model.clone(),
        &LoopField::constant(modes, &cfg.critical_guess),
        NewtonOptions::default(),
        cfg.mu_fraction,
        cfg.degeneracy_tol,
    )?)
}

/// A loop field from an inline JSON array or a file holding one. An array
/// of length `dim` is read as a constant loop, one of full length as
/// real Fourier coordinates.
pub fn parse_field(arg: &str, dim: usize, modes: usize) -> Result<LoopField, CliError> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| CliError::Io(PathBuf::from(arg), e))?
    };
    let values: Vec<f64> = serde_json::from_str(&text).map_err(|e| CliError::Argument(format!("z: {e}")))?;
    let full = dim * (2 * modes + 1);
    if values.len() == dim {
        Ok(LoopField::constant(modes, &values))
    } else if values.len() == full {
        Ok(LoopField::from_coords(dim, modes, values)?)
    } else {
        Err(CliError::Argument(format!(
            "z has {} entries; expected {dim} (constant) or {full} (coordinates)",
            values.len()
        )))
    }
}

fn tag(x: f64) -> String {
    format!("{x}").replace('-', "m")
}

#[derive(Serialize)]
struct SpectrumReport {
    dim: usize,
    #[serde(rename = "J")]
    modes: usize,
    critical_coeffs: Vec<f64>,
    critical_action: f64,
    critical_residual: f64,
    morse_index: usize,
    gap: f64,
    mu: f64,
    eigenvalues: Vec<f64>,
    orthonormality_defect: f64,
}

#[derive(Serialize)]
struct FlowReport {
    #[serde(rename = "T")]
    t: f64,
    steps: usize,
    halvings: usize,
    left_chart: bool,
    end_w12: f64,
    representation_residual: f64,
    action_start: f64,
    action_end: f64,
    /// largest per-step action increase
    max_action_increase: f64,
    oracle_gap_w12: Option<f64>,
}

#[derive(Serialize)]
struct UnstableReport {
    z_minus_coeffs: Vec<f64>,
    endpoint_coeffs: Vec<f64>,
    iters: usize,
    ratios: Vec<f64>,
    residual: f64,
}

#[derive(Serialize)]
struct C1Report<'a> {
    sweep: &'a lambdaverify::C1Result,
    fd_check: lambdaverify::FiniteDifferenceCheck,
}

#[derive(Serialize)]
struct LipschitzReports {
    lipschitz: Vec<lambdaverify::LipschitzReport>,
    bilipschitz: lambdaverify::BiLipschitzReport,
}

#[derive(Serialize)]
struct SmoothingSummary {
    alpha: f64,
    mu: f64,
    #[serde(rename = "J")]
    modes: usize,
    constant: f64,
    refined_constant: f64,
    refinement_stable: bool,
    #[serde(rename = "J_doubled")]
    modes_doubled: usize,
    constant_doubled: f64,
    /// `constant_doubled / constant − 1`
    relative_change: f64,
    pass_bounded: bool,
    pass_doubling: bool,
}

#[derive(Serialize)]
struct SweepSummaryRow {
    fitted_rate: Option<f64>,
    bound_rate: f64,
    rate_tol: f64,
    pass_rate: bool,
    pass_monotone: bool,
    pass_zero_rows: bool,
    pass_contraction: bool,
    pass_complete: bool,
}

/// Run one subcommand and write its outputs under `root`; returns the
/// human-readable summary lines.
pub fn run(session: &Session, cmd: &Command, root: &Path) -> Result<Vec<String>, CliError> {
    let flow = &session.flow;
    let cfg = &session.cfg;
    let ledger = &session.cal.ledger;
    let mut out = session.output(cmd, root)?;
    let mut lines = Vec::new();
    match cmd {
        Command::Spectrum => {
            let dec = &flow.dec;
            let rep = SpectrumReport {
                dim: flow.chart.dim(),
                modes: flow.chart.modes(),
                critical_coeffs: flow.chart.critical.x.coords().to_vec(),
                critical_action: flow.chart.critical.action,
                critical_residual: flow.chart.critical.residual,
                morse_index: dec.morse_index,
                gap: dec.gap,
                mu: dec.mu,
                eigenvalues: dec.eigenvalues.iter().copied().collect(),
                orthonormality_defect: dec.orthonormality_defect(),
            };
            lines.push(format!("morse index {}, gap {:.6}, mu {:.6}", rep.morse_index, rep.gap, rep.mu));
            out.json("spectrum.json", &rep)?;
        }
        Command::Flow { z, t, oracle } => {
            let z0 = session.field_arg(z)?;
            let traj = semiflow::evolve(flow, &z0, *t, &cfg.solver.grid, &EvolveOptions::default())?;
            let actions = semiflow::action_along(&flow.chart.model, &flow.chart.critical.x, &traj);
            let max_action_increase = actions.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            let oracle_gap_w12 = if *oracle {
                let o = semiflow::evolve_oracle(&flow.chart, &z0, &[0.0, *t], &OracleOptions::default())?;
                Some(o.end().sub(traj.end()).norm(NormKind::W12))
            } else {
                None
            };
            let rep = FlowReport {
                t: *t,
                steps: traj.meta.steps,
                halvings: traj.meta.halvings,
                left_chart: traj.meta.left_chart,
                end_w12: traj.end().norm(NormKind::W12),
                representation_residual: semiflow::residual_representation(flow, &traj)?,
                action_start: actions[0],
                action_end: *actions.last().unwrap(),
                max_action_increase,
                oracle_gap_w12,
            };
            lines.push(format!(
                "{} steps, representation residual {:.3e}",
                rep.steps, rep.representation_residual
            ));
            out.csv(&format!("trajectory_T{}.csv", tag(*t)), &traj.to_csv())?;
            out.json(&format!("flow_T{}.json", tag(*t)), &rep)?;
        }
        Command::Stable { z, zplus_id } => {
            let (zp, name) = session.zplus(z, *zplus_id)?;
            let p = graphmaps::solve_stable(flow, ledger, &zp, &cfg.solver)?;
            lines.push(format!("{} iterations, max ratio {:.3}", p.iters, p.max_ratio()));
            out.json(&format!("stable_{name}.json"), &p.summary())?;
            out.csv(&format!("trajectory_{name}.csv"), &p.trajectory.to_csv())?;
        }
        Command::Unstable { z } => {
            let zm = match z {
                Some(text) => session.field_arg(text)?,
                None => LoopField::zeros(flow.chart.dim(), flow.chart.modes()),
            };
            let u = graphmaps::solve_unstable(flow, ledger, &zm, &cfg.solver)?;
            lines.push(format!("{} iterations, residual {:.3e}", u.iters, u.residual));
            out.json(
                "unstable.json",
                &UnstableReport {
                    z_minus_coeffs: zm.coords().to_vec(),
                    endpoint_coeffs: u.endpoint.coords().to_vec(),
                    iters: u.iters,
                    ratios: u.ratios.clone(),
                    residual: u.residual,
                },
            )?;
            out.csv("trajectory.csv", &u.trajectory.to_csv())?;
        }
        Command::Sphere { eps } => {
            let eps = eps.unwrap_or(ledger.eps);
            let sphere = graphmaps::descending_sphere(flow, ledger, eps, cfg.ledger.n_sphere, &cfg.solver)?;
            lines.push(format!("{} sphere points at eps {eps}", sphere.len()));
            out.json(&format!("sphere_eps{}.json", tag(eps)), &sphere)?;
        }
        Command::Mixed {
            t,
            gamma_id,
            z,
            zplus_id,
        } => {
            let gamma = session
                .cal
                .sphere
                .iter()
                .find(|g| g.id == *gamma_id)
                .ok_or_else(|| CliError::Argument(format!("no sphere point with id {gamma_id}")))?;
            let (zp, name) = session.zplus(z, *zplus_id)?;
            let p = graphmaps::solve_mixed(flow, ledger, *t, &gamma.gamma, Some(gamma.id), &zp, &cfg.solver)?;
            let summary: GraphPointSummary = p.summary();
            lines.push(format!("{} iterations, max ratio {:.3}", p.iters, p.max_ratio()));
            out.json(&format!("mixed_T{}_g{}_{name}.json", tag(*t), gamma_id), &summary)?;
        }
        Command::LambdaSweep => {
            let exp = session.experiment()?;
            let res = lambdaverify::sweep_convergence(&exp);
            lines.push(format!(
                "fitted rate {} (bound {:.4}, tol {:.4}); rate {} monotone {} zero-rows {} contraction {}",
                res.fitted_rate.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into()),
                res.bound_rate,
                res.rate_tol,
                res.pass_rate,
                res.pass_monotone,
                res.pass_zero_rows,
                res.pass_contraction
            ));
            let s = SweepSummaryRow {
                fitted_rate: res.fitted_rate,
                bound_rate: res.bound_rate,
                rate_tol: res.rate_tol,
                pass_rate: res.pass_rate,
                pass_monotone: res.pass_monotone,
                pass_zero_rows: res.pass_zero_rows,
                pass_contraction: res.pass_contraction,
                pass_complete: res.pass_complete,
            };
            let summary_csv = format!(
                "fitted_rate,bound_rate,rate_tol,pass_rate,pass_monotone,pass_zero_rows,pass_contraction,pass_complete\n{},{:e},{:e},{},{},{},{},{}\n",
                s.fitted_rate.map(|r| format!("{r:e}")).unwrap_or_default(),
                s.bound_rate,
                s.rate_tol,
                s.pass_rate,
                s.pass_monotone,
                s.pass_zero_rows,
                s.pass_contraction,
                s.pass_complete
            );
            out.csv("sweep.csv", &res.to_csv())?;
            out.csv("summary.csv", &summary_csv)?;
            out.table("decay.dat", &res.decay_table())?;
            out.json("sweep.json", &res)?;
        }
        Command::C1Sweep => {
            let exp = session.experiment()?;
            let res = lambdaverify::sweep_c1(&exp);
            let z = usize::min(1, exp.zplus.len() - 1);
            let fd = lambdaverify::linearization_fd_check(&exp, exp.t_list[0], 0, z, 0, cfg.audits.fd_step)?;
            lines.push(format!(
                "fitted rate {} ; max |X| {:.4} ; max |Y-v| {:.4} ; fd rel err {:.2e}",
                res.fitted_rate.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into()),
                res.max_xv_l2,
                res.max_yv_dev_l2,
                fd.relative_error
            ));
            out.csv("c1.csv", &res.to_csv())?;
            out.json("c1.json", &C1Report { sweep: &res, fd_check: fd })?;
        }
        Command::Roundtrip => {
            let exp = session.experiment()?;
            let (nt, nz) = (cfg.audits.oracle_t_count, cfg.audits.oracle_zplus_count);
            let rep = lambdaverify::roundtrip_audit(&exp, |ti, g, z| ti < nt && g == 0 && z < nz);
            lines.push(format!(
                "max fiber residual {:.3e}, max distance {:.4} (r = {:.4}), solver gap {:.3e} over {} oracle rows",
                rep.max_fiber_residual, rep.max_distance, rep.r, rep.max_solver_gap, rep.oracle_rows
            ));
            out.csv("roundtrip.csv", &rep.to_csv())?;
            out.json("roundtrip.json", &rep)?;
        }
        Command::LipschitzAudit => {
            let exp = session.experiment()?;
            let t = ledger.t0 + cfg.audits.lipschitz_t_offset;
            let lipschitz = (0..exp.zplus.len().min(2))
                .map(|z| lambdaverify::lipschitz_in_t_audit(&exp, t, 0, z, &cfg.audits.lipschitz_taus))
                .collect::<Result<Vec<_>, _>>()?;
            let nt = cfg.audits.bilipschitz_t_count.clamp(1, exp.t_list.len());
            let bilipschitz = lambdaverify::bilipschitz_audit(&exp, &exp.t_list[..nt])?;
            lines.push(format!(
                "bi-Lipschitz ratios [{:.4}, {:.4}] (upper bound {:.4}) over {} pairs",
                bilipschitz.min_ratio, bilipschitz.max_ratio, bilipschitz.upper_bound, bilipschitz.pairs
            ));
            out.json("lipschitz.json", &LipschitzReports { lipschitz, bilipschitz })?;
        }
        Command::SmoothingAudit => {
            let a = &cfg.audits;
            let grid = semigroup::log_grid(a.smoothing_s_min, a.smoothing_s_max, a.smoothing_points);
            let audit = |dec| {
                semigroup::audit_smoothing(dec, &grid, a.smoothing_alpha, ledger.mu, Part::Plus, NormKind::L1, NormKind::W12)
            };
            let base = audit(&flow.dec)?;
            let doubled_flow = flow_at(cfg, 2 * cfg.modes)?;
            let doubled = audit(&doubled_flow.dec)?;
            let relative_change = doubled.constant / base.constant - 1.0;
            let s = SmoothingSummary {
                alpha: a.smoothing_alpha,
                mu: ledger.mu,
                modes: cfg.modes,
                constant: base.constant,
                refined_constant: base.refined_constant,
                refinement_stable: base.refinement_stable,
                modes_doubled: 2 * cfg.modes,
                constant_doubled: doubled.constant,
                relative_change,
                pass_bounded: base.constant.is_finite() && base.refinement_stable,
                pass_doubling: relative_change.abs() <= 0.1,
            };
            lines.push(format!(
                "constant {:.4} at J={}, {:.4} at J={} ({:+.2}%)",
                s.constant,
                s.modes,
                s.constant_doubled,
                s.modes_doubled,
                100.0 * relative_change
            ));
            out.csv("smoothing.csv", &base.to_csv())?;
            out.csv("smoothing_doubled.csv", &doubled.to_csv())?;
            out.json("smoothing.json", &s)?;
        }
        Command::ValidateLedger => {
            #[derive(Serialize)]
            struct LedgerOut<'a> {
                ledger: &'a graphmaps::ConstantsLedger,
                report: &'a graphmaps::LedgerReport,
                sphere_size: usize,
            }
            let rep = &session.cal.report;
            for c in &rep.checks {
                lines.push(format!(
                    "{:<16} {:>12.5e} vs {:>12.5e}  {}{}",
                    c.name,
                    c.lhs,
                    c.rhs,
                    if c.pass { "ok" } else { "FAIL" },
                    if c.structural { "" } else { " (advisory in empirical mode)" }
                ));
            }
            lines.push(format!("probe ratio {:?}; valid {}", rep.probe_ratio, rep.valid));
            out.json(
                "ledger.json",
                &LedgerOut {
                    ledger,
                    report: rep,
                    sphere_size: session.cal.sphere.len(),
                },
            )?;
        }
    }
    for p in out.written() {
        lines.push(format!("wrote {}", p.display()));
    }
    Ok(lines)
}
