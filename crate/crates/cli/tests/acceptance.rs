//! End-to-end acceptance suite on the bundled pendulum config (J = 32).
//!
//! Runs every criterion, prints one PASS/FAIL line each and exits nonzero if
//! any failed. Sweeps go through the `loopflow` binary so the persisted
//! outputs are what gets checked.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use loopflow::graphmaps;
use loopflow::loopspace::{LoopField, NormKind};
use loopflow::model::{NewtonOptions, TorusModel};
use loopflow::semiflow::{self, EvolveOptions, LocalFlow, OracleOptions, TimeGrid};
use loopflow_cli::commands::Session;
use loopflow_cli::RunConfig;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&mut Suite) -> Outcome);

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/pendulum.json")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

/// Run the binary and return the output directory of the subcommand.
fn loopflow(outdir: &Path, args: &[&str]) -> Result<PathBuf, String> {
    let cfg = config_path();
    let out = Command::new(env!("CARGO_BIN_EXE_loopflow"))
        .arg("--config")
        .arg(&cfg)
        .arg("--outdir")
        .arg(outdir)
        .args(args)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let hash = RunConfig::load(&cfg).map_err(|e| e.to_string())?.hash();
    Ok(outdir.join(args[0]).join(hash))
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn result_of(dir: &Path, file: &str) -> Result<Value, String> {
    let v = read_json(&dir.join(file))?;
    if v["meta"]["config_hash"].as_str().is_none() || v["meta"]["ledger"]["valid"].as_bool().is_none() {
        return Err(format!("{file}: metadata missing"));
    }
    Ok(v["result"].clone())
}

fn flag(v: &Value, key: &str) -> bool {
    v[key].as_bool().unwrap_or(false)
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or(f64::NAN)
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn closed_form(z0: f64, s: f64) -> f64 {
    2.0 * ((z0 / 2.0).tan() * s.exp()).atan()
}

/// Shared state: one chart/ledger session and the sweep output directories,
/// each produced once and read by several criteria.
struct Suite {
    session: Session,
    root: PathBuf,
    sweep_dir: Option<Result<PathBuf, String>>,
    c1_dir: Option<Result<PathBuf, String>>,
}

impl Suite {
    fn sweep(&mut self) -> Result<PathBuf, String> {
        let root = self.root.clone();
        self.sweep_dir
            .get_or_insert_with(|| loopflow(&root.join("run-a"), &["lambda-sweep"]))
            .clone()
    }

    fn c1(&mut self) -> Result<PathBuf, String> {
        let root = self.root.clone();
        self.c1_dir.get_or_insert_with(|| loopflow(&root, &["c1-sweep"])).clone()
    }
}

fn spectrum_oracle(s: &mut Suite) -> Outcome {
    let dir = loopflow(&s.root, &["spectrum"])?;
    let r = result_of(&dir, "spectrum.json")?;
    let eig: Vec<f64> = r["eigenvalues"]
        .as_array()
        .ok_or("no eigenvalues")?
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let modes = r["J"].as_u64().unwrap() as usize;
    let mut oracle = vec![-1.0];
    for j in 1..=modes {
        let l = (2.0 * PI * j as f64).powi(2) - 1.0;
        oracle.extend([l, l]);
    }
    ensure(eig.len() == oracle.len(), "spectrum size")?;
    let err = eig.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(err < 1e-8, format!("max eigenvalue error {err:.2e}"))?;
    ensure(r["morse_index"] == 1, "Morse index")?;
    ensure((num(&r, "gap") - 1.0).abs() < 1e-12, "gap")?;
    let torus = LocalFlow::from_model(
        TorusModel::torus_product(1.0),
        &LoopField::constant(modes, &[3.0, 3.0]),
        NewtonOptions::default(),
        0.5,
        1e-8,
    )
    .map_err(|e| e.to_string())?;
    ensure(torus.dec.morse_index == 2, "torus product index")?;
    Ok(format!("max |λ − oracle| = {err:.1e}, k = 1, d = 1; T² index 2"))
}

fn integrator_cross_validation(s: &mut Suite) -> Outcome {
    let flow = &s.session.flow;
    let modes = flow.chart.modes();
    let mut unit = LoopField::zeros(1, modes);
    unit.coords_mut()[1] = 1.0;
    let z = unit.scaled(0.05 / unit.eval(0.0)[0]);
    ensure((z.eval(0.25)[0]).abs() < 1e-14, "basis is not cos(2πt)")?;
    let grid = TimeGrid::default();
    let a = semiflow::evolve(flow, &z, 0.5, &grid, &EvolveOptions::default()).map_err(|e| e.to_string())?;
    let b = semiflow::evolve_oracle(&flow.chart, &z, &[0.0, 0.5], &OracleOptions::default()).map_err(|e| e.to_string())?;
    let gap = a.end().sub(b.end()).norm(NormKind::W12);
    ensure(gap < 1e-6, format!("evolve vs oracle {gap:.2e}"))?;
    let c = semiflow::evolve(flow, &LoopField::constant(modes, &[0.1]), 1.0, &grid, &EvolveOptions::default())
        .map_err(|e| e.to_string())?;
    let cf = c
        .grid
        .iter()
        .zip(&c.states)
        .map(|(t, st)| (st.coords()[0] - closed_form(0.1, *t)).abs())
        .fold(0.0, f64::max);
    ensure(cf < 1e-6, format!("closed form {cf:.2e}"))?;
    Ok(format!("W12 gap {gap:.1e}; closed-form error {cf:.1e}"))
}

fn representation_formula(s: &mut Suite) -> Outcome {
    let flow = &s.session.flow;
    let z = LoopField::constant(flow.chart.modes(), &[0.2]).add(&flow.dec.eigenvector(3).scaled(0.02));
    let mut res = Vec::new();
    for h in [0.02, 0.01, 0.005] {
        let nodes = TimeGrid::Uniform { step: h }.nodes(0.5);
        let traj = semiflow::evolve_oracle(&flow.chart, &z, &nodes, &OracleOptions::default()).map_err(|e| e.to_string())?;
        res.push(semiflow::residual_representation(flow, &traj).map_err(|e| e.to_string())?);
    }
    ensure(res[2] < 1e-6, format!("residual {:.2e}", res[2]))?;
    let orders: Vec<f64> = res.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    ensure(orders.iter().all(|p| *p >= 1.0), format!("observed orders {orders:?}"))?;
    Ok(format!(
        "residuals {:.1e} → {:.1e} → {:.1e}, orders {:.2}, {:.2}",
        res[0], res[1], res[2], orders[0], orders[1]
    ))
}

fn action_decrease(s: &mut Suite) -> Outcome {
    let flow = &s.session.flow;
    let exp = s.session.experiment().map_err(|e| e.to_string())?;
    let opts = s.session.cfg.solver;
    let ledger = &s.session.cal.ledger;
    let modes = flow.chart.modes();
    let mut trajs = Vec::new();
    for z in [
        LoopField::constant(modes, &[0.1]),
        LoopField::constant(modes, &[-0.3]).add(&flow.dec.eigenvector(2).scaled(0.05)),
        flow.dec.eigenvector(5).scaled(0.1),
    ] {
        trajs.push(semiflow::evolve(flow, &z, 1.0, &opts.grid, &EvolveOptions::default()).map_err(|e| e.to_string())?);
    }
    let stable = graphmaps::solve_stable(flow, ledger, &exp.zplus[1], &opts).map_err(|e| e.to_string())?;
    trajs.push(stable.trajectory);
    let mixed = graphmaps::solve_mixed(flow, ledger, exp.t_list[0], &exp.gammas[0].gamma, Some(0), &exp.zplus[1], &opts)
        .map_err(|e| e.to_string())?;
    trajs.push(mixed.trajectory);
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    for t in &trajs {
        let a = semiflow::action_along(&flow.chart.model, &flow.chart.critical.x, t);
        ensure(a.last() < a.first(), "action did not decrease overall")?;
        for w in a.windows(2) {
            worst = worst.max(w[1] - w[0]);
            steps += 1;
        }
    }
    ensure(worst <= 1e-10, format!("action increased by {worst:.2e}"))?;
    Ok(format!("{} trajectories, {steps} steps, largest increment {worst:.1e}", trajs.len()))
}

fn contraction_certificates(s: &mut Suite) -> Outcome {
    let dir = s.sweep()?;
    let r = result_of(&dir, "sweep.json")?;
    let meta = &read_json(&dir.join("sweep.json"))?["meta"]["ledger"];
    ensure(meta["valid"] == true, "ledger not valid")?;
    ensure(meta["mode"] == "empirical", "expected empirical ledger")?;
    let (mixed, stable) = (num(&r, "max_ratio"), num(&r, "stable_max_ratio"));
    ensure(flag(&r, "pass_contraction") && mixed <= 0.6 && stable <= 0.6, format!("ratios {mixed} / {stable}"))?;
    Ok(format!(
        "max Ψ^T ratio {mixed:.1e}, max Ψ_z+ ratio {stable:.1e}, probe {:.1e}",
        num(meta, "probe_ratio")
    ))
}

fn graph_identities(s: &mut Suite) -> Outcome {
    let dir = s.sweep()?;
    let r = result_of(&dir, "sweep.json")?;
    let rows = r["rows"].as_array().ok_or("no rows")?;
    let defect = rows.iter().map(|row| num(row, "plus_defect")).fold(0.0, f64::max);
    ensure(defect < 1e-13, format!("π₊ defect {defect:.1e}"))?;
    let flow = &s.session.flow;
    let exp = s.session.experiment().map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for g in &exp.gammas {
        let z0 = g.gamma.coords()[0];
        ensure(g.gamma.coords()[1..].iter().all(|c| c.abs() < 1e-12), "sphere point not constant")?;
        for t in &exp.t_list {
            let p = graphmaps::solve_mixed(
                flow,
                &exp.ledger,
                *t,
                &g.gamma,
                Some(g.id),
                &LoopField::zeros(1, flow.chart.modes()),
                &exp.opts,
            )
            .map_err(|e| e.to_string())?;
            let mut want = LoopField::zeros(1, flow.chart.modes());
            want.coords_mut()[0] = closed_form(z0, -*t);
            worst = worst.max(p.xi0.sub(&want).norm(NormKind::W12));
        }
    }
    ensure(worst < 1e-6, format!("Γ^T(0) vs closed form {worst:.2e}"))?;
    Ok(format!("π₊ defect {defect:.1e}; Γ^T_γ(0) vs closed-form backward flow {worst:.1e}"))
}

fn roundtrip_fiber(s: &mut Suite) -> Outcome {
    let dir = loopflow(&s.root, &["roundtrip"])?;
    let r = result_of(&dir, "roundtrip.json")?;
    ensure(flag(&r, "pass_complete"), "rows failed")?;
    ensure(flag(&r, "pass_fiber"), format!("fiber residual {}", num(&r, "max_fiber_residual")))?;
    ensure(flag(&r, "pass_ball"), format!("distance {} > r", num(&r, "max_distance")))?;
    ensure(flag(&r, "pass_oracle"), format!("solver gap {}", num(&r, "max_solver_gap")))?;
    Ok(format!(
        "{} rows, fiber residual {:.1e}, distance {:.1e} ≤ r = {}, oracle gap {:.1e} on {} rows",
        r["rows"].as_array().map_or(0, |a| a.len()),
        num(&r, "max_fiber_residual"),
        num(&r, "max_distance"),
        num(&r, "r"),
        num(&r, "max_solver_gap"),
        num(&r, "oracle_rows")
    ))
}

fn lambda_decay(s: &mut Suite) -> Outcome {
    let dir = s.sweep()?;
    let r = result_of(&dir, "sweep.json")?;
    let (rate, mu) = (num(&r, "fitted_rate"), s.session.cal.ledger.mu);
    ensure(flag(&r, "pass_complete"), "sweep rows failed")?;
    ensure(rate >= mu / 4.0 - 0.05 * mu, format!("fitted rate {rate} < μ/4 − 0.05μ"))?;
    ensure(flag(&r, "pass_monotone"), "distances not monotone in T")?;
    ensure(flag(&r, "pass_zero_rows"), "z₊ = 0 rows differ from ‖γ_T‖")?;
    let summary = std::fs::read_to_string(dir.join("summary.csv")).map_err(|e| e.to_string())?;
    ensure(summary.lines().nth(1).is_some_and(|h| h.starts_with("fitted_rate,")), "summary.csv header")?;
    Ok(format!(
        "pooled rate {rate:.4} ≥ {:.4} over {} rows",
        mu / 4.0 - 0.05 * mu,
        r["rows"].as_array().map_or(0, |a| a.len())
    ))
}

fn c1_bounds(s: &mut Suite) -> Outcome {
    let dir = s.c1()?;
    let r = result_of(&dir, "c1.json")?;
    let sw = &r["sweep"];
    ensure(flag(sw, "pass_complete"), "rows failed")?;
    ensure(flag(sw, "pass_xv_bound"), format!("‖X_v‖ = {}", num(sw, "max_xv_l2")))?;
    ensure(flag(sw, "pass_yv_bound"), format!("‖Y_v − v‖ = {}", num(sw, "max_yv_dev_l2")))?;
    ensure(flag(sw, "pass_decay_bound"), "3ĉe^{−Tμ/4} bound violated")?;
    ensure(flag(sw, "pass_rate"), format!("fitted rate {}", num(sw, "fitted_rate")))?;
    Ok(format!(
        "max ‖X_v‖ {:.4} ≤ 2, max ‖Y_v − v‖ {:.1e} ≤ 0.25, rate {:.4}",
        num(sw, "max_xv_l2"),
        num(sw, "max_yv_dev_l2"),
        num(sw, "fitted_rate")
    ))
}

fn bilipschitz(s: &mut Suite) -> Outcome {
    let dir = loopflow(&s.root, &["lipschitz-audit"])?;
    let r = result_of(&dir, "lipschitz.json")?;
    let b = &r["bilipschitz"];
    ensure(flag(b, "pass"), format!("ratios [{}, {}]", num(b, "min_ratio"), num(b, "max_ratio")))?;
    Ok(format!(
        "{} pairs, ratios in [{:.4}, {:.4}] ⊂ [0.5, {:.3}]",
        num(b, "pairs"),
        num(b, "min_ratio"),
        num(b, "max_ratio"),
        num(b, "upper_bound")
    ))
}

fn linearization_consistency(s: &mut Suite) -> Outcome {
    let dir = s.c1()?;
    let fd = &result_of(&dir, "c1.json")?["fd_check"];
    let err = num(fd, "relative_error");
    ensure(flag(fd, "pass") && err < 1e-3, format!("relative error {err}"))?;
    Ok(format!("relative error {err:.1e} at h = {}", num(fd, "h")))
}

fn smoothing_audit(s: &mut Suite) -> Outcome {
    let dir = loopflow(&s.root, &["smoothing-audit"])?;
    let r = result_of(&dir, "smoothing.json")?;
    ensure(flag(&r, "pass_bounded"), "weighted values not bounded near s = 0")?;
    ensure(flag(&r, "pass_doubling"), format!("J doubling changed constant by {}", num(&r, "relative_change")))?;
    Ok(format!(
        "constant {:.4} (J=32), {:.4} (J=64), change {:+.2e}",
        num(&r, "constant"),
        num(&r, "constant_doubled"),
        num(&r, "relative_change")
    ))
}

fn determinism(s: &mut Suite) -> Outcome {
    let a = s.sweep()?;
    let b = loopflow(&s.root.join("run-b"), &["lambda-sweep"])?;
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for n in &names {
        let x = std::fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(n)).map_err(|e| format!("{n:?}: {e}"))?;
        ensure(x == y, format!("{n:?} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical", names.len()))
}

fn main() {
    let started = Instant::now();
    let cfg = RunConfig::load(&config_path()).expect("bundled config loads");
    assert_eq!(cfg.modes, 32);
    assert_eq!(cfg.model, TorusModel::pendulum(1.0));
    let mut suite = Suite {
        session: Session::open(cfg).expect("session"),
        root: scratch("out"),
        sweep_dir: None,
        c1_dir: None,
    };
    let criteria: [Criterion; 13] = [
        ("spectrum oracle", spectrum_oracle),
        ("integrator cross-validation", integrator_cross_validation),
        ("representation formula", representation_formula),
        ("action decrease", action_decrease),
        ("contraction certificates", contraction_certificates),
        ("graph identities", graph_identities),
        ("roundtrip / fiber", roundtrip_fiber),
        ("backward lambda-lemma decay", lambda_decay),
        ("C1 / L2 bounds", c1_bounds),
        ("bi-Lipschitz graph", bilipschitz),
        ("linearization consistency", linearization_consistency),
        ("smoothing audit", smoothing_audit),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check(&mut suite);
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {:>2}. {name}: {detail} ({secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2}. {name}: {why} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
