use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};

use certrom::affine::{build_benchmark, BenchmarkConfig, Var};
use certrom::design::{snapshot_indices, DesignMode};
use certrom::fem::SparseCholesky;
use certrom::pod::{compute_pod, project_affine, RankSelection, ReducedSolver, SnapshotSet};
use certrom::robust::{solve_trust_region_subproblem, QuadraticWorstCaseModel};
use certrom::sensitivity::FactorizedOperator;

fn full_order(c: &mut Criterion) {
    let mut group = c.benchmark_group("full_order");
    group.sample_size(20);
    for level in [2u32, 3] {
        let (model, _) = build_benchmark(&BenchmarkConfig::default().with_level(level)).unwrap();
        let p = [12.0, 5.0, 6.0];
        group.bench_with_input(BenchmarkId::new("affine_assembly", level), &p, |b, p| {
            b.iter(|| model.eval_operator(black_box(p)).unwrap())
        });
        let k = model.eval_operator(&p).unwrap();
        group.bench_with_input(BenchmarkId::new("cholesky", level), &k, |b, k| {
            b.iter(|| SparseCholesky::factor(black_box(k)).unwrap())
        });
        let idx = snapshot_indices(&model, DesignMode::RobustQuadratic);
        group.bench_with_input(BenchmarkId::new("sensitivity_bundle", level), &p, |b, p| {
            b.iter(|| {
                let op = FactorizedOperator::new(&model, black_box(p), 1e-10).unwrap();
                op.bundle(&model, &[85.0], &idx).unwrap()
            })
        });
    }
    group.finish();
}

fn reduced_order(c: &mut Criterion) {
    let (model, _) = build_benchmark(&BenchmarkConfig::default()).unwrap();
    let idx = snapshot_indices(&model, DesignMode::RobustQuadratic);
    let mut set = SnapshotSet::new();
    for p in [[19.0, 7.0, 7.0], [12.0, 5.0, 6.0], [10.0, 5.5, 5.0]] {
        let (b, _) = FactorizedOperator::new(&model, &p, 1e-10)
            .unwrap()
            .bundle(&model, &[85.0], &idx)
            .unwrap();
        set.push_bundle(&b).unwrap();
    }
    let basis = project_affine(&model, &compute_pod(&set, &model.w, RankSelection::Full).unwrap()).unwrap();
    let quad = [
        model.zero_index(),
        model.index(Var::Uncertain(0), 2).with(Var::Design(0)),
        model.index(Var::Uncertain(0), 2).with(Var::Design(1)),
        model.index(Var::Uncertain(0), 2).with(Var::Design(2)),
    ];
    let mut group = c.benchmark_group("reduced_order");
    group.bench_function(BenchmarkId::new("pod", set.len()), |b| {
        b.iter(|| compute_pod(black_box(&set), &model.w, RankSelection::Full).unwrap())
    });
    group.bench_function(BenchmarkId::new("state", basis.len()), |b| {
        b.iter(|| {
            let s = ReducedSolver::new(&basis, black_box(&[11.0, 5.2, 5.5])).unwrap();
            s.bundle(&[85.0], &quad[..1]).unwrap()
        })
    });
    group.bench_function(BenchmarkId::new("quadratic_bundle", basis.len()), |b| {
        b.iter(|| {
            let s = ReducedSolver::new(&basis, black_box(&[11.0, 5.2, 5.5])).unwrap();
            s.bundle(&[85.0], &quad).unwrap()
        })
    });
    group.finish();
}

fn trust_region(c: &mut Criterion) {
    let mut group = c.benchmark_group("trust_region");
    for n in [1usize, 2, 8] {
        let hess = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let model = QuadraticWorstCaseModel {
            value: 0.3,
            grad: DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin()),
            hess: (&hess + hess.transpose()) * 0.5,
        };
        let d = vec![2.5; n];
        group.bench_with_input(BenchmarkId::from_parameter(n), &model, |b, m| {
            b.iter(|| solve_trust_region_subproblem(black_box(m), &d))
        });
    }
    group.finish();
}

criterion_group!(benches, full_order, reduced_order, trust_region);
criterion_main!(benches);
