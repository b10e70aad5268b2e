use approx::assert_relative_eq;
use loopflow::graphmaps::{
    self, backward_point, descending_sphere, linearized_graph, solve_mixed, solve_stable, solve_unstable,
    validate_ledger, ConstantsLedger, LedgerMode, LedgerParams, SolverOptions,
};
use loopflow::loopspace::{LoopField, NormKind};
use loopflow::model::{NewtonOptions, TorusModel};
use loopflow::semiflow::{evolve, EvolveOptions, LocalFlow, TimeGrid};
use loopflow::Error;

const J: usize = 16;

fn pendulum() -> LocalFlow {
    LocalFlow::from_model(
        TorusModel::pendulum(1.0),
        &LoopField::constant(J, &[3.0]),
        NewtonOptions::default(),
        0.5,
        1e-8,
    )
    .unwrap()
}

/// A ledger whose balls are large enough for the closed-form examples far
/// from the critical point.
fn wide_ledger(flow: &LocalFlow, rho: f64) -> ConstantsLedger {
    ConstantsLedger {
        c: 1.0,
        rho0: 2.0 * rho,
        rho,
        r: rho,
        eps: 0.02,
        mu: flow.mu(),
        gap: flow.dec.gap,
        kappa_star: 1.0,
        kappa_rho: 1.0,
        t1: 0.0,
        t2: 0.0,
        t0: 0.0,
        mode: LedgerMode::Empirical,
    }
    .with_times()
}

fn closed_form(z0: f64, s: f64) -> f64 {
    2.0 * ((z0 / 2.0).tan() * s.exp()).atan()
}

fn constant_value(f: &LoopField) -> f64 {
    f.coords()[0]
}

fn eigen_direction(flow: &LocalFlow, i: usize, norm: f64) -> LoopField {
    let v = flow.dec.eigenvector(i);
    v.scaled(norm / v.norm(NormKind::W12))
}

fn plus_direction(flow: &LocalFlow, norm: f64) -> LoopField {
    eigen_direction(flow, flow.dec.morse_index, norm)
}

#[test]
fn stable_graph_at_origin_is_zero() {
    let flow = pendulum();
    let l = wide_ledger(&flow, 0.25);
    let p = solve_stable(&flow, &l, &LoopField::zeros(1, J), &SolverOptions::default()).unwrap();
    assert_eq!(p.g_value.norm(NormKind::W12), 0.0);
    assert!(p.trajectory.states.iter().all(|s| s.norm(NormKind::W12) == 0.0));
}

#[test]
fn stable_graph_is_tangent_to_plus_space() {
    let flow = pendulum();
    let l = wide_ledger(&flow, 1.0);
    let opts = SolverOptions {
        fp_tol: 1e-14,
        ..Default::default()
    };
    let sizes = [0.4, 0.2, 0.1];
    let g: Vec<f64> = sizes
        .iter()
        .map(|s| {
            let z = plus_direction(&flow, 0.8 * s).add(&eigen_direction(&flow, 3, 0.2 * s));
            solve_stable(&flow, &l, &z, &opts).unwrap().g_value.norm(NormKind::W12)
        })
        .collect();
    for w in g.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!(slope >= 1.9, "slope {slope} from {g:?}");
    }
}

#[test]
fn forward_flow_from_stable_graph_decays() {
    let flow = pendulum();
    let l = wide_ledger(&flow, 0.25);
    let z = plus_direction(&flow, 0.1);
    let p = solve_stable(&flow, &l, &z, &SolverOptions::default()).unwrap();
    let traj = evolve(&flow, &p.xi0, 2.0, &TimeGrid::default(), &EvolveOptions::default()).unwrap();
    for (s, state) in traj.grid.iter().zip(&traj.states) {
        assert!(state.norm(NormKind::W12) <= l.rho * (-s * l.mu / 2.0).exp());
    }
}

#[test]
fn unstable_manifold_examples() {
    let flow = pendulum();
    let l = wide_ledger(&flow, 0.25);
    let opts = SolverOptions::default();
    let zero = solve_unstable(&flow, &l, &LoopField::zeros(1, J), &opts).unwrap();
    assert!(zero.trajectory.states.iter().all(|s| s.norm(NormKind::W12) == 0.0));

    let delta = 0.2;
    let sol = solve_unstable(&flow, &l, &LoopField::constant(J, &[delta]), &opts).unwrap();
    assert_relative_eq!(constant_value(&sol.endpoint), delta, epsilon = 1e-14);
    for (s, state) in sol.trajectory.grid.iter().zip(&sol.trajectory.states) {
        assert!((constant_value(state) - closed_form(delta, *s)).abs() < 1e-6, "s = {s}");
        assert!(state.coords()[1..].iter().all(|c| c.abs() < 1e-12));
        assert!(state.norm(NormKind::W12) <= l.rho * (s * l.mu / 2.0).exp());
    }
    assert!(matches!(
        solve_unstable(&flow, &l, &LoopField::constant(J, &[0.3]), &opts),
        Err(Error::BallViolation { .. })
    ));
    assert!(matches!(
        solve_unstable(&flow, &l, &flow.dec.eigenvector(1).scaled(0.01), &opts),
        Err(Error::Invalid(_))
    ));
}

#[test]
fn descending_sphere_of_the_pendulum() {
    let flow = pendulum();
    let opts = SolverOptions::default();
    let l = wide_ledger(&flow, 1.2);
    let pts = descending_sphere(&flow, &l, 0.5, 4, &opts).unwrap();
    assert_eq!(pts.len(), 2);
    let third = std::f64::consts::FRAC_PI_3;
    assert!((constant_value(&pts[0].gamma) - third).abs() < 1e-7);
    assert!((constant_value(&pts[1].gamma) + third).abs() < 1e-7);
    for p in &pts {
        assert!((p.action - 0.5).abs() < opts.action_tol);
    }
    let tiny = descending_sphere(&flow, &l, 1e-6, 4, &opts).unwrap();
    assert!(tiny.iter().all(|p| p.gamma.norm(NormKind::W12) < 2e-3));
    // the level is out of reach inside a small ball
    let small = wide_ledger(&flow, 0.1);
    assert!(matches!(
        descending_sphere(&flow, &small, 0.5, 4, &opts),
        Err(Error::BisectionFail { .. })
    ));
}

#[test]
fn descending_circle_of_the_torus_product() {
    let flow = LocalFlow::from_model(
        TorusModel::torus_product(1.0),
        &LoopField::constant(8, &[3.0, 3.2]),
        NewtonOptions::default(),
        0.5,
        1e-8,
    )
    .unwrap();
    assert_eq!(flow.dec.morse_index, 2);
    let opts = SolverOptions::default();
    let l = wide_ledger(&flow, 0.4);
    let pts = descending_sphere(&flow, &l, 0.02, 6, &opts).unwrap();
    assert_eq!(pts.len(), 6);
    for p in &pts {
        assert!((p.action - (flow.chart.critical.action - 0.02)).abs() < opts.action_tol);
    }
}

#[test]
fn backward_points_follow_the_closed_form() {
    let flow = pendulum();
    let opts = SolverOptions::default();
    let l = wide_ledger(&flow, 1.6);
    let gamma = LoopField::constant(J, &[std::f64::consts::FRAC_PI_2]);
    let back = backward_point(&flow, &l, &gamma, 2f64.ln(), &opts).unwrap();
    assert_relative_eq!(constant_value(&back), 0.92730, epsilon = 1e-5);
    // far from the critical point the O(h²) quadrature error is visible; refine
    let fine = SolverOptions {
        grid: TimeGrid::Graded {
            ratio: 1.2,
            floor: 1e-6,
            max_step: 0.002,
        },
        ..opts
    };
    let back = backward_point(&flow, &l, &gamma, 2f64.ln(), &fine).unwrap();
    assert_relative_eq!(constant_value(&back), 2.0 * 0.5f64.atan(), epsilon = 1e-6);
    let same = backward_point(&flow, &l, &gamma, 0.0, &opts).unwrap();
    assert!(same.sub(&gamma).norm(NormKind::W12) < 1e-12);

    let l = wide_ledger(&flow, 0.25);
    let gamma = LoopField::constant(J, &[0.2]);
    for t in [0.5, 1.0, 2.0, 4.0] {
        let b = backward_point(&flow, &l, &gamma, t, &opts).unwrap();
        assert!(b.norm(NormKind::W12) <= l.rho * (-t * l.mu / 2.0).exp());
        assert!((constant_value(&b) - closed_form(0.2, -t)).abs() < 1e-6);
    }
}

#[test]
fn mixed_problem_examples() {
    let flow = pendulum();
    let opts = SolverOptions::default();
    let cal = graphmaps::calibrate(&flow, &LedgerParams::default(), 7, &opts).unwrap();
    let l = &cal.ledger;
    assert!(cal.report.valid, "{:?}", cal.report);
    let gamma = &cal.sphere[0].gamma;
    let t = l.t0 + 1.0;

    let at_zero = solve_mixed(&flow, l, t, gamma, Some(0), &LoopField::zeros(1, J), &opts).unwrap();
    let back = backward_point(&flow, l, gamma, t, &opts).unwrap();
    assert!(at_zero.xi0.sub(&back).norm(NormKind::W12) < 1e-6);
    assert!((constant_value(&at_zero.xi0) - closed_form(constant_value(gamma), -t)).abs() < 1e-6);

    let z = plus_direction(&flow, 0.5 * l.zplus_radius()).add(&flow.dec.eigenvector(4).scaled(1e-3));
    let p = solve_mixed(&flow, l, t, gamma, Some(0), &z, &opts).unwrap();
    let xi0 = p.xi0_eigen();
    let ze = flow.to_eigen(&z);
    for i in flow.dec.morse_index..flow.size() {
        assert_eq!(xi0[i], ze[i]);
    }
    assert!(p.max_ratio() <= 0.6);
    assert!(p.endpoint.fixed_point < 10.0 * opts.fp_tol);

    let fwd = evolve(&flow, &p.xi0, t, &TimeGrid::default(), &EvolveOptions::default()).unwrap();
    let end = fwd.end();
    let miss = flow.dec.to_eigen(&end.sub(gamma));
    let minus_miss = miss.rows(0, flow.dec.morse_index).norm();
    assert!(minus_miss < 1e-5, "{minus_miss}");
    assert!(end.sub(gamma).norm(NormKind::W12) <= l.r);
}

#[test]
fn linearized_graph_examples() {
    let flow = pendulum();
    let opts = SolverOptions::default();
    let l = wide_ledger(&flow, 0.25);
    let v = plus_direction(&flow, 1.0).add(&flow.dec.eigenvector(5).scaled(0.2));
    let v = v.scaled(1.0 / v.norm(NormKind::L2));

    let base = solve_stable(&flow, &l, &LoopField::zeros(1, J), &opts).unwrap();
    let y = linearized_graph(&flow, &base, &v, &opts).unwrap();
    assert!(y.sub(&v).norm(NormKind::L2) < 1e-14);

    let gamma = LoopField::constant(J, &[0.2]);
    let z = plus_direction(&flow, 0.05);
    let t = 3.0;
    let tight = SolverOptions {
        fp_tol: 1e-14,
        ..Default::default()
    };
    let p = solve_mixed(&flow, &l, t, &gamma, None, &z, &tight).unwrap();
    let x = linearized_graph(&flow, &p, &v, &opts).unwrap();
    assert!(x.norm(NormKind::L2) <= 2.0);
    let h = 1e-4;
    let ph = solve_mixed(&flow, &l, t, &gamma, None, &z.axpy(h, &v), &tight).unwrap();
    let fd = ph.xi0.sub(&p.xi0).scaled(1.0 / h);
    let rel = fd.sub(&x).norm(NormKind::L2) / x.norm(NormKind::L2);
    assert!(rel < 1e-3, "relative FD error {rel}");
}

#[test]
fn calibrated_ledger_reports_every_inequality() {
    let flow = pendulum();
    let cal = graphmaps::calibrate(&flow, &LedgerParams::default(), 3, &SolverOptions::default()).unwrap();
    for name in ["rho0_backward", "rho_backward", "rho_half", "r_below_rho0", "t1", "t0", "mu_in_gap"] {
        assert!(cal.report.check(name).is_some(), "missing {name}");
    }
    assert_relative_eq!(cal.ledger.t1, 4.0 * 2f64.ln(), epsilon = 1e-12);
    assert_eq!(cal.ledger.t2, 0.0);
    assert_eq!(validate_ledger(&cal.ledger).checks, cal.report.checks);
}
