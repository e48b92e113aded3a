//! Offline error study: true reduced-basis errors against certified bounds
//! over a test set, for a sweep of basis sizes.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::affine::{AffineModel, MultiIndex, Var};
use crate::certification::Certifier;
use crate::error::{Error, Result};
use crate::fem::SparseMatrix;
use crate::pod::{compute_pod_with_factor, project_affine, RankSelection, SnapshotSet};
use crate::sensitivity::{FactorizedOperator, SensitivityBundle};

/// Derivative orders reported: state, design gradient, second angle
/// derivative.
pub const ORDERS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub ell: usize,
    pub max_error: [f64; ORDERS],
    pub max_bound: [f64; ORDERS],
    pub min_effectivity: [f64; ORDERS],
    pub max_effectivity: [f64; ORDERS],
    /// Test evaluations where a bound fell below the true error.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStudy {
    pub rows: Vec<StudyRow>,
    pub snapshots: usize,
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
}

impl ErrorStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ell");
        for name in ["max_error", "max_bound", "min_effectivity", "max_effectivity"] {
            for k in 0..ORDERS {
                let _ = write!(s, ",{name}_{k}");
            }
        }
        s.push_str(",violations\n");
        for r in &self.rows {
            let _ = write!(s, "{}", r.ell);
            for arr in [&r.max_error, &r.max_bound, &r.min_effectivity, &r.max_effectivity] {
                for v in arr.iter() {
                    let _ = write!(s, ",{v:.14e}");
                }
            }
            let _ = writeln!(s, ",{}", r.violations);
        }
        s
    }

    pub fn total_violations(&self) -> usize {
        self.rows.iter().map(|r| r.violations).sum()
    }
}

/// Tensor grid of the given axes.
pub fn tensor_grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![vec![]], |acc, axis| {
        acc.into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect()
    })
}

pub fn benchmark_training_grid() -> Vec<Vec<f64>> {
    tensor_grid(&[vec![1.0, 10.5, 20.0], vec![1.0, 3.0, 5.0], vec![5.0, 7.0, 10.0]])
}

pub fn benchmark_test_grid() -> Vec<Vec<f64>> {
    tensor_grid(&[vec![5.75, 15.25], vec![2.0, 4.0], vec![6.0, 8.5]])
}

fn w_norm(w: &SparseMatrix, e: &DVector<f64>) -> f64 {
    e.dot(&w.mul_vec(e)).max(0.0).sqrt()
}

/// Studied multi-indices grouped by order.
fn study_indices(model: &AffineModel) -> [Vec<MultiIndex>; ORDERS] {
    [
        vec![model.zero_index()],
        (0..model.n_design).map(|i| model.index(Var::Design(i), 1)).collect(),
        (0..model.n_uncertain)
            .map(|j| model.index(Var::Uncertain(j), 2))
            .collect(),
    ]
}

/// State and design sensitivities at every training point.
pub fn training_snapshots(model: &AffineModel, train: &[Vec<f64>], phi: &[f64], tol: f64) -> Result<SnapshotSet> {
    let mut set = SnapshotSet::new();
    let idx = study_indices(model)[..2].concat();
    for p in train {
        let (bundle, _) = FactorizedOperator::new(model, p, tol)?.bundle(model, phi, &idx)?;
        set.push_bundle(&bundle)?;
    }
    Ok(set)
}

/// Sweeps `ells` (every size up to the rank when empty).
pub fn run_error_study(
    model: &AffineModel,
    certifier: &Certifier,
    train: &[Vec<f64>],
    test: &[Vec<f64>],
    phi: &[f64],
    ells: &[usize],
    tol: f64,
) -> Result<ErrorStudy> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptySnapshots);
    }
    let snapshots = training_snapshots(model, train, phi, tol)?;
    let full = compute_pod_with_factor(&snapshots, certifier.w_factor(), RankSelection::Full)?;
    let groups = study_indices(model);
    let all: Vec<MultiIndex> = groups.concat();
    let truth: Vec<SensitivityBundle> = test
        .iter()
        .map(|p| {
            FactorizedOperator::new(model, p, tol)?
                .bundle(model, phi, &all)
                .map(|b| b.0)
        })
        .collect::<Result<_>>()?;

    let sizes: Vec<usize> = if ells.is_empty() {
        (1..=full.len()).collect()
    } else {
        ells.iter().copied().filter(|&l| l >= 1 && l <= full.len()).collect()
    };
    let mut rows = Vec::with_capacity(sizes.len());
    for ell in sizes {
        let basis = project_affine(model, &full.truncated(ell)?)?;
        let mut row = StudyRow {
            ell,
            max_error: [0.0; ORDERS],
            max_bound: [0.0; ORDERS],
            min_effectivity: [f64::INFINITY; ORDERS],
            max_effectivity: [0.0; ORDERS],
            violations: 0,
        };
        for (p, exact) in test.iter().zip(&truth) {
            let cert = certifier.certify(model, &basis, p, phi, &all)?;
            for (k, group) in groups.iter().enumerate() {
                for alpha in group {
                    let err = w_norm(
                        certifier.w(),
                        &(exact.get(alpha)? - basis.lift(&cert.coefficients[alpha])),
                    );
                    let bound = cert.get(alpha)?;
                    row.max_error[k] = row.max_error[k].max(err);
                    row.max_bound[k] = row.max_bound[k].max(bound);
                    if bound < err {
                        row.violations += 1;
                    }
                    if err > 0.0 {
                        let eff = bound / err;
                        row.min_effectivity[k] = row.min_effectivity[k].min(eff);
                        row.max_effectivity[k] = row.max_effectivity[k].max(eff);
                    }
                }
            }
        }
        rows.push(row);
    }
    Ok(ErrorStudy {
        rows,
        snapshots: snapshots.len(),
        rank: full.len(),
        eigenvalues: full.eigenvalues().to_vec(),
    })
}
