use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use certrom::affine::theta::binomial;
use certrom::affine::{build_benchmark, AffineModel, BenchmarkConfig, MultiIndex, Var};
use certrom::config::RunConfig;
use certrom::design::DesignMode;
use certrom::fem::assembly::{assemble_stiffness, restrict_matrix, IDENTITY};
use certrom::fem::Mesh;
use certrom::pod::{compute_pod, RankSelection, SnapshotSet};
use certrom::robust::{
    dual_norm, linear_worst_case, linear_worst_case_point, solve_trust_region_subproblem, trs_kkt_residual, NormKind,
    QuadraticWorstCaseModel, UncertaintySet,
};
use certrom::sensitivity::{solve_state, FactorizedOperator};

fn small() -> &'static (BenchmarkConfig, AffineModel, Mesh) {
    static MODEL: OnceLock<(BenchmarkConfig, AffineModel, Mesh)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = BenchmarkConfig::default().with_level(1);
        let (m, mesh) = build_benchmark(&cfg).unwrap();
        (cfg, m, mesh)
    })
}

fn design() -> impl Strategy<Value = Vec<f64>> {
    (0.5..28.0f64, 0.5..12.0f64, 2.0..15.0f64)
        .prop_filter("admissible", |(_, h, z)| h + z <= 16.5)
        .prop_map(|(a, b, c)| vec![a, b, c])
}

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        (&m + m.transpose()) * 0.5
    })
}

fn trs_instance() -> impl Strategy<Value = (QuadraticWorstCaseModel, Vec<f64>)> {
    (1usize..=4).prop_flat_map(|n| {
        (
            -2.0..2.0f64,
            prop::collection::vec(-2.0..2.0f64, n),
            symmetric(n),
            prop::collection::vec(0.1..5.0f64, n),
        )
            .prop_map(|(value, g, hess, d)| {
                (
                    QuadraticWorstCaseModel {
                        value,
                        grad: DVector::from_vec(g),
                        hess,
                    },
                    d,
                )
            })
    })
}

fn w_norm(model: &AffineModel, v: &DVector<f64>) -> f64 {
    v.dot(&model.w.mul_vec(v)).max(0.0).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn affine_operator_matches_mapped_assembly(p in design()) {
        let (cfg, model, mesh) = small();
        let phys = cfg.physical_mesh(mesh, &p).unwrap();
        let direct = restrict_matrix(&assemble_stiffness(&phys, |_| IDENTITY).unwrap(), &phys);
        let affine = model.eval_operator(&p).unwrap();
        let diff = affine.linear_combination(1.0, &direct, -1.0).unwrap();
        prop_assert!(diff.frobenius_norm() <= 1e-10 * direct.frobenius_norm());
        prop_assert!(affine.asymmetry() <= 1e-12 * affine.frobenius_norm());
    }

    #[test]
    fn output_is_linear_in_the_load(p in design(), a in 0.0..360.0f64, b in 0.0..360.0f64) {
        let (_, model, _) = small();
        let op = FactorizedOperator::new(model, &p, 1e-12).unwrap();
        let ua = op.solve(&model.eval_rhs(&p, &[a]).unwrap()).unwrap();
        let ub = op.solve(&model.eval_rhs(&p, &[b]).unwrap()).unwrap();
        let both = op.solve(&(model.eval_rhs(&p, &[a]).unwrap() + model.eval_rhs(&p, &[b]).unwrap())).unwrap();
        let scale = w_norm(model, &ua) + w_norm(model, &ub);
        prop_assert!(w_norm(model, &(both - ua - ub)) <= 1e-10 * scale);
    }

    #[test]
    fn first_sensitivity_is_a_central_difference_limit(p in design(), phi in 0.0..360.0f64, i in 0usize..3) {
        let (cfg, model, _) = small();
        let mut p = p;
        for (k, x) in p.iter_mut().enumerate() {
            *x = x.clamp(cfg.lower[k] + 0.01, cfg.upper[k] - 0.01);
        }
        prop_assume!(p[1] + p[2] <= 16.49);
        let alpha = model.index(Var::Design(i), 1);
        let op = FactorizedOperator::new(model, &p, 1e-12).unwrap();
        let (bundle, _) = op.bundle(model, &[phi], std::slice::from_ref(&alpha)).unwrap();
        let exact = bundle.get(&alpha).unwrap();
        let err = |h: f64| {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += h;
            b[i] -= h;
            let d = (solve_state(model, &a, &[phi], 1e-12).unwrap() - solve_state(model, &b, &[phi], 1e-12).unwrap()) / (2.0 * h);
            w_norm(model, &(d - exact)) / w_norm(model, exact)
        };
        let (e1, e2) = (err(0.008), err(0.004));
        prop_assert!(e1 <= 1e-4);
        prop_assert!(e2 <= 1e-12 || (e1 / e2).log2() >= 1.8, "ratio {}", e1 / e2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lower_set_and_binomials(d in prop::collection::vec(0u8..=2, 3), u in 0u8..=2) {
        let mut alpha = MultiIndex::zero(3, 1);
        for (i, &k) in d.iter().enumerate() {
            for _ in 0..k {
                alpha = alpha.with(Var::Design(i));
            }
        }
        for _ in 0..u {
            alpha = alpha.with(Var::Uncertain(0));
        }
        let lower = alpha.lower();
        let expected: usize = d.iter().chain(std::iter::once(&u)).map(|&k| k as usize + 1).product();
        prop_assert_eq!(lower.len(), expected);
        prop_assert_eq!(lower.first().unwrap(), &MultiIndex::zero(3, 1));
        prop_assert_eq!(lower.last().unwrap(), &alpha);
        // Σ_β C(α, β) = 2^|α|
        let total: f64 = lower.iter().map(|b| alpha.binomial(b)).sum();
        prop_assert_eq!(total, 2f64.powi(alpha.order() as i32));
        for b in &lower {
            prop_assert_eq!(alpha.minus(b).order() + b.order(), alpha.order());
        }
    }

    #[test]
    fn pascal_rule(n in 1u32..30, k in 1u32..30) {
        prop_assume!(k <= n);
        let lhs = binomial(n, k);
        let rhs = binomial(n - 1, k - 1) + binomial(n - 1, k);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs);
    }

    #[test]
    fn trs_solution_is_globally_optimal((model, d) in trs_instance(), probes in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 16)) {
        let sol = solve_trust_region_subproblem(&model, &d);
        let scale = 1.0 + model.grad.norm() + model.hess.norm();
        prop_assert!(trs_kkt_residual(&model, &d, &sol) <= 1e-8 * scale);
        prop_assert!(sol.lambda >= 0.0);
        let n = d.len();
        let r: f64 = sol.delta.iter().zip(&d).map(|(x, d)| (x / d).powi(2)).sum::<f64>().sqrt();
        prop_assert!(r <= 1.0 + 1e-10);
        prop_assert!((model.eval(&sol.delta) - sol.value).abs() <= 1e-10 * (1.0 + sol.value.abs()));
        for probe in probes {
            let v = DVector::from_fn(n, |i, _| probe[i]);
            let len: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            let delta = DVector::from_fn(n, |i, _| v[i] / len * d[i]);
            prop_assert!(model.eval(&delta) <= sol.value + 1e-10 * scale);
        }
    }

    #[test]
    fn linear_worst_case_is_attained_and_maximal(
        n in 1usize..=3,
        raw in prop::collection::vec((-3.0..3.0f64, 0.1..4.0f64), 3),
        inf in any::<bool>(),
        probes in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 16),
    ) {
        let norm = if inf { NormKind::Inf } else { NormKind::Two };
        let grad: Vec<f64> = raw[..n].iter().map(|r| r.0).collect();
        let scaling: Vec<f64> = raw[..n].iter().map(|r| r.1).collect();
        let set = UncertaintySet::new(vec![10.0; n], scaling.clone(), norm).unwrap();
        let lin = |phi: &[f64]| 1.0 + grad.iter().zip(phi).map(|(g, x)| g * (x - 10.0)).sum::<f64>();
        let best = linear_worst_case(1.0, &grad, &set);
        let arg = linear_worst_case_point(&grad, &set);
        prop_assert!(set.scaled_distance(&arg) <= 1.0 + 1e-12);
        prop_assert!((lin(&arg) - best).abs() <= 1e-12 * (1.0 + best.abs()));
        prop_assert!((best - 1.0 - dual_norm(&grad, &scaling, norm)).abs() <= 1e-14 * (1.0 + best.abs()));
        for probe in probes {
            let mut phi: Vec<f64> = (0..n).map(|j| 10.0 + probe[j] * scaling[j]).collect();
            let s = set.scaled_distance(&phi);
            if s > 1.0 {
                phi.iter_mut().for_each(|x| *x = 10.0 + (*x - 10.0) / s);
            }
            prop_assert!(lin(&phi) <= best + 1e-12 * (1.0 + best.abs()));
        }
    }

    #[test]
    fn config_round_trips(
        seed in any::<u64>(),
        level in 1u32..=5,
        rho in 1.0..1e3f64,
        mode in prop::sample::select(DesignMode::ALL.to_vec()),
        phi in 60.0..120.0f64,
        d in 0.5..10.0f64,
        tol in 1e-8..1e-2f64,
    ) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.geometry.mesh_level = level;
        cfg.optimization.rho = rho;
        cfg.optimization.mode = mode;
        cfg.optimization.tol = tol;
        cfg.uncertainty.nominal = vec![phi];
        cfg.uncertainty.scaling = vec![d];
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pod_error_identity(points in prop::collection::vec(design(), 2..6), phi in 0.0..360.0f64) {
        let (_, model, _) = small();
        let mut set = SnapshotSet::new();
        for p in &points {
            let idx = [model.zero_index(), model.index(Var::Design(0), 1), model.index(Var::Uncertain(0), 1)];
            let (b, _) = FactorizedOperator::new(model, p, 1e-12).unwrap().bundle(model, &[phi], &idx).unwrap();
            set.push_bundle(&b).unwrap();
        }
        let pod = compute_pod(&set, &model.w, RankSelection::Full).unwrap();
        let total: f64 = pod.eigenvalues().iter().sum();
        for ell in 1..=pod.rank() {
            let psi = pod.psi().columns(0, ell).into_owned();
            let wpsi = DMatrix::from_columns(&(0..ell).map(|k| model.w.mul_vec(&psi.column(k).into_owned())).collect::<Vec<_>>());
            let lhs: f64 = set.columns().iter().zip(set.weights()).map(|(u, &b)| {
                let r = u - &psi * (wpsi.transpose() * u);
                b * w_norm(model, &r).powi(2)
            }).sum();
            let rhs: f64 = pod.eigenvalues()[ell..].iter().sum();
            prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs + 1e-13 * total, "ell {}: {} vs {}", ell, lhs, rhs);
        }
        // W-orthonormal basis
        let gram = pod.psi().transpose() * DMatrix::from_columns(&(0..pod.len()).map(|k| model.w.mul_vec(&pod.psi().column(k).into_owned())).collect::<Vec<_>>());
        prop_assert!((gram - DMatrix::identity(pod.len(), pod.len())).amax() <= 1e-9);
    }
}
