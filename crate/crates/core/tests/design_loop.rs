use std::sync::OnceLock;

use nalgebra::DVector;

use certrom::affine::{build_benchmark, AffineModel, BenchmarkConfig, Var};
use certrom::certification::Certifier;
use certrom::design::{
    initial_point, optimize_design, run_algorithm1, snapshot_indices, DesignMode, DesignOptions, DesignProblem,
    FullBackend, LoopOptions, OutputBackend, RomBackend,
};
use certrom::pod::{compute_pod, project_affine, solve_reduced_state, RankSelection, SnapshotSet};
use certrom::robust::DerivativeLevel;
use certrom::sensitivity::{closure, solve_state, FactorizedOperator};

fn level2() -> &'static (AffineModel, Certifier) {
    static M: OnceLock<(AffineModel, Certifier)> = OnceLock::new();
    M.get_or_init(|| {
        let (m, _) = build_benchmark(&BenchmarkConfig::default().with_level(2)).unwrap();
        let c = Certifier::new(&m).unwrap();
        (m, c)
    })
}

fn w_norm(model: &AffineModel, v: &DVector<f64>) -> f64 {
    v.dot(&model.w.mul_vec(v)).sqrt()
}

#[test]
fn loop_trace_invariants() {
    let (model, cert) = level2();
    for mode in DesignMode::ALL {
        let problem = DesignProblem::benchmark(model, mode, 100.0, 1e-12).unwrap();
        let r = run_algorithm1(model, cert, &problem, &initial_point(model), &LoopOptions::default()).unwrap();
        let t = &r.trace;
        assert!(t.converged, "{mode}");
        assert!(t.rows.len() <= 4, "{mode}: {} outer iterations", t.rows.len());

        let per_step = closure(&snapshot_indices(model, mode)).len();
        assert_eq!(t.full_solves, per_step * (1 + t.rows.len()), "{mode}");
        assert!(t.rows[0].ell <= 6, "{mode}: first basis has {} vectors", t.rows[0].ell);
        assert!(t.rows.windows(2).all(|w| w[1].ell >= w[0].ell), "{mode}");
        assert!(t.rows.last().unwrap().discrepancy() <= 1e-4);

        // the certified state bound covers the true reduced error at the final design
        let last = t.rows.last().unwrap();
        let phi = problem.evaluation_angle();
        let full = solve_state(model, &last.p, &phi, 1e-12).unwrap();
        let (_, lifted) = solve_reduced_state(&r.basis, &last.p, &phi).unwrap();
        assert!(
            w_norm(model, &(full - lifted)) <= last.delta_u * (1.0 + 1e-10),
            "{mode}"
        );
    }
}

#[test]
fn rom_reproduces_outputs_at_snapshot_parameters() {
    let (model, _) = level2();
    let p = vec![12.0, 4.0, 8.0];
    let phi = [87.0];
    let mode = DesignMode::RobustQuadratic;
    let (bundle, _) = FactorizedOperator::new(model, &p, 1e-12)
        .unwrap()
        .bundle(model, &phi, &snapshot_indices(model, mode))
        .unwrap();
    let mut set = SnapshotSet::new();
    set.push_bundle(&bundle).unwrap();
    let basis = project_affine(model, &compute_pod(&set, &model.w, RankSelection::Full).unwrap()).unwrap();

    let full = FullBackend::new(model, 1e-12)
        .output(&p, &phi, DerivativeLevel::Quadratic)
        .unwrap();
    let rom = RomBackend::new(&basis)
        .output(&p, &phi, DerivativeLevel::Quadratic)
        .unwrap();
    let scale = full.value.abs();
    assert!((full.value - rom.value).abs() <= 1e-8 * scale);
    assert!((&full.grad_p - &rom.grad_p).amax() <= 1e-8 * scale);
    assert!((&full.grad_phi - &rom.grad_phi).amax() <= 1e-8 * scale);
    assert!((&full.hess_phi - &rom.hess_phi).amax() <= 1e-8 * scale);

    // objectives of the design problem then agree as well
    let problem = DesignProblem::benchmark(model, DesignMode::Nominal, 100.0, 1e-12).unwrap();
    let obj = |e: f64| DesignProblem::volume(&p) + problem.rho * (problem.target - e).max(0.0);
    assert!((obj(full.value) - obj(rom.value)).abs() <= 1e-8);
}

#[test]
fn single_point_training_generalises_locally() {
    let (model, cert) = level2();
    let p = model.reference.clone();
    let phi = [90.0];
    let idx: Vec<_> = std::iter::once(model.zero_index())
        .chain((0..3).map(|i| model.index(Var::Design(i), 1)))
        .collect();
    let (bundle, _) = FactorizedOperator::new(model, &p, 1e-12)
        .unwrap()
        .bundle(model, &phi, &idx)
        .unwrap();
    let mut set = SnapshotSet::new();
    set.push_bundle(&bundle).unwrap();
    let basis = project_affine(model, &compute_pod(&set, &model.w, RankSelection::Full).unwrap()).unwrap();
    assert!(basis.len() <= 6);

    let q: Vec<f64> = p.iter().map(|x| x + 0.005).collect();
    let exact = solve_state(model, &q, &phi, 1e-12).unwrap();
    let (_, lifted) = solve_reduced_state(&basis, &q, &phi).unwrap();
    let rel = w_norm(model, &(&exact - &lifted)) / w_norm(model, &exact);
    assert!(rel <= 1e-6, "relative error {rel:e}");
    let bound = cert.state_error_bound(model, &basis, &q, &phi).unwrap();
    assert!(bound >= w_norm(model, &(exact - lifted)));
}

#[test]
fn nominal_design_meets_the_target_with_active_constraint() {
    let (model, _) = level2();
    let problem = DesignProblem::benchmark(model, DesignMode::Nominal, 100.0, 1e-12).unwrap();
    let sol = optimize_design(
        &problem,
        FullBackend::new(model, 1e-12),
        &initial_point(model),
        &DesignOptions::default(),
    )
    .unwrap();
    assert!(sol.converged, "{}", sol.status);
    assert!(sol.xi.abs() <= 1e-8);
    assert!(sol.volume < DesignProblem::volume(&model.reference));
    let e = model
        .output
        .dot(&solve_state(model, &sol.p, &problem.nominal_angle, 1e-12).unwrap());
    assert!((e - problem.target).abs() <= 1e-6 * problem.target, "E = {e}");
    assert!(problem.geometric_violation(&sol.p) <= 1e-8);
}
