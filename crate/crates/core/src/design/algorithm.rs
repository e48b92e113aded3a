//! Goal-oriented loop: optimise on a POD model, check the result with one
//! full solve, enrich the snapshots there and repeat until reduced and full
//! outputs agree.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::affine::{AffineModel, MultiIndex, Var};
use crate::certification::Certifier;
use crate::error::Result;
use crate::pod::{compute_pod_with_factor, project_affine, PodBasis, RankSelection, ReducedSolver, SnapshotSet};
use crate::sensitivity::FactorizedOperator;

use super::{optimize_design, DesignMode, DesignOptions, DesignProblem, OutputBackend, RomBackend};

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOptions {
    /// Stop once `|E_rom − E_full| ≤ tol` at the new design.
    pub tol: f64,
    pub max_outer: usize,
    pub rank: RankSelection,
    pub solve_tol: f64,
    pub design: DesignOptions,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_outer: 4,
            rank: RankSelection::Full,
            solve_tol: 1e-10,
            design: DesignOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopRow {
    pub iter: usize,
    pub p: Vec<f64>,
    pub e_full: f64,
    pub e_rom: f64,
    pub volume: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    pub delta_u: f64,
    pub ell: usize,
}

impl LoopRow {
    pub fn discrepancy(&self) -> f64 {
        (self.e_rom - self.e_full).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoopTrace {
    pub rows: Vec<LoopRow>,
    pub full_solves: usize,
    pub reduced_solves: usize,
    pub converged: bool,
}

impl LoopTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,p1,p2,p3,e_full,e_rom,discrepancy,volume,inner_iterations,delta_u,ell\n");
        for r in &self.rows {
            let _ = write!(s, "{}", r.iter);
            for v in r.p.iter().chain([r.e_full, r.e_rom, r.discrepancy(), r.volume].iter()) {
                let _ = write!(s, ",{v:.14e}");
            }
            let _ = writeln!(s, ",{},{:.14e},{}", r.inner_iterations, r.delta_u, r.ell);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct LoopResult {
    pub x: DVector<f64>,
    pub p: Vec<f64>,
    pub trace: LoopTrace,
    pub basis: PodBasis,
    pub snapshots: usize,
}

/// Snapshots collected per full solve: the state, its design gradient, and
/// the `φ` derivatives a robust mode relies on.
pub fn snapshot_indices(model: &AffineModel, mode: DesignMode) -> Vec<MultiIndex> {
    let zero = model.zero_index();
    let mut out = vec![zero.clone()];
    out.extend((0..model.n_design).map(|i| model.index(Var::Design(i), 1)));
    match mode {
        DesignMode::Nominal => {}
        DesignMode::RobustLinear => out.extend((0..model.n_uncertain).map(|j| model.index(Var::Uncertain(j), 1))),
        DesignMode::RobustQuadratic => {
            for j in 0..model.n_uncertain {
                out.push(model.index(Var::Uncertain(j), 1));
                for k in j..model.n_uncertain {
                    out.push(model.index(Var::Uncertain(j), 1).with(Var::Uncertain(k)));
                }
            }
        }
    }
    out
}

pub fn run_algorithm1(
    model: &AffineModel,
    certifier: &Certifier,
    problem: &DesignProblem,
    x0: &DVector<f64>,
    opts: &LoopOptions,
) -> Result<LoopResult> {
    let np = problem.n_design();
    let angle = problem.evaluation_angle();
    let indices = snapshot_indices(model, problem.mode);
    let mut trace = LoopTrace::default();
    let mut snapshots = SnapshotSet::new();

    let full = |p: &[f64], trace: &mut LoopTrace| -> Result<(f64, crate::sensitivity::SensitivityBundle)> {
        let op = FactorizedOperator::new(model, p, opts.solve_tol)?;
        let (bundle, n) = op.bundle(model, &angle, &indices)?;
        trace.full_solves += n;
        Ok((model.output.dot(bundle.state()?), bundle))
    };

    let p0: Vec<f64> = x0.iter().take(np).copied().collect();
    let (_, bundle) = full(&p0, &mut trace)?;
    snapshots.push_bundle(&bundle)?;
    let mut x = x0.clone();
    let mut basis = None;

    for iter in 1..=opts.max_outer.max(1) {
        let pod = compute_pod_with_factor(&snapshots, certifier.w_factor(), opts.rank)?;
        let b = project_affine(model, &pod)?;
        let sol = match optimize_design(problem, RomBackend::new(&b), &x, &opts.design) {
            Ok(s) => s,
            Err(_) => {
                let mut relaxed = opts.design.clone();
                relaxed.sqp.kkt_tol *= 100.0;
                relaxed.mpec.sqp.kkt_tol *= 100.0;
                optimize_design(problem, RomBackend::new(&b), &x, &relaxed)?
            }
        };
        trace.reduced_solves += sol.backend.solves();
        let p = sol.p.clone();

        let solver = ReducedSolver::new(&b, &p)?;
        let (coeffs, n) = solver.bundle(&angle, &[model.zero_index()])?;
        trace.reduced_solves += n;
        let e_rom = b.reduced()?.output.dot(&coeffs[&model.zero_index()]);
        let (e_full, bundle) = full(&p, &mut trace)?;
        let delta_u = certifier.state_error_bound(model, &b, &p, &angle)?;

        trace.rows.push(LoopRow {
            iter,
            p: p.clone(),
            e_full,
            e_rom,
            volume: DesignProblem::volume(&p),
            inner_iterations: sol.iterations,
            inner_converged: sol.converged,
            delta_u,
            ell: b.len(),
        });
        x = sol.x;
        basis = Some(b);
        if (e_rom - e_full).abs() <= opts.tol {
            trace.converged = true;
            break;
        }
        snapshots.push_bundle(&bundle)?;
    }

    let p = x.iter().take(np).copied().collect();
    Ok(LoopResult {
        x,
        p,
        trace,
        basis: basis.expect("at least one outer iteration"),
        snapshots: snapshots.len(),
    })
}
