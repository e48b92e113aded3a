//! Magnet design problems on the benchmark and the goal-oriented loop.
//!
//! Decision vector `x = (p₁, p₂, p₃, ξ)`, objective `p₁p₂ + ρξ` and the
//! inequalities, in this order:
//!
//! 1. `p₂ + p₃ − 15 ≤ 0`
//! 2. `3p₁ − 2p₃ − 50 ≤ 0`
//! 3. `E_d − E(p, φ) − ξ ≤ 0`
//! 4. `1 − p₁ ≤ 0`, `1 − p₂ ≤ 0`, `5 − p₃ ≤ 0`
//! 5. `−ξ ≤ 0`
//! 6. `p₃ − 14 ≤ 0` (finite upper bounds only)

pub mod algorithm;
pub mod backend;
pub mod study;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affine::AffineModel;
use crate::error::{Error, Result};
use crate::robust::{
    build_linear_robust_nlp, build_quadratic_robust_mpec, solve_mpec, DerivativeLevel, FunctionData, MpecOptions,
    NominalNlp, NormKind, UncertainEval, UncertainProblem, UncertaintySet,
};
use crate::sensitivity::solve_state;
use crate::sqp::{solve_sqp, SqpOptions, SqpStatus};

pub use algorithm::{run_algorithm1, snapshot_indices, LoopOptions, LoopResult, LoopRow, LoopTrace};
pub use backend::{output_indices, solves_per_evaluation, FullBackend, OutputBackend, OutputData, RomBackend};
pub use study::{benchmark_test_grid, benchmark_training_grid, run_error_study, tensor_grid, ErrorStudy, StudyRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignMode {
    #[serde(rename = "nominal")]
    Nominal,
    #[serde(rename = "robust-lin")]
    RobustLinear,
    #[serde(rename = "robust-quad")]
    RobustQuadratic,
}

impl DesignMode {
    pub const ALL: [DesignMode; 3] = [
        DesignMode::Nominal,
        DesignMode::RobustLinear,
        DesignMode::RobustQuadratic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DesignMode::Nominal => "nominal",
            DesignMode::RobustLinear => "robust-lin",
            DesignMode::RobustQuadratic => "robust-quad",
        }
    }

    /// Derivatives in `φ` the mode needs from the output.
    pub fn level(&self) -> DerivativeLevel {
        match self {
            DesignMode::Nominal => DerivativeLevel::Nominal,
            DesignMode::RobustLinear => DerivativeLevel::Linear,
            DesignMode::RobustQuadratic => DerivativeLevel::Quadratic,
        }
    }
}

impl fmt::Display for DesignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(DesignMode::Nominal),
            "robust-lin" | "robust-linear" => Ok(DesignMode::RobustLinear),
            "robust-quad" | "robust-quadratic" => Ok(DesignMode::RobustQuadratic),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected nominal, robust-lin or robust-quad)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignProblem {
    pub rho: f64,
    /// Target output `E_d`.
    pub target: f64,
    pub lower: Vec<f64>,
    /// `f64::INFINITY` marks an absent bound.
    pub upper: Vec<f64>,
    pub linear: Vec<(Vec<f64>, f64)>,
    pub mode: DesignMode,
    /// Angle of the nominal problem.
    pub nominal_angle: Vec<f64>,
    /// Nominal value and scaling of the uncertainty set; the norm follows
    /// the mode (`k = ∞` linear, `k = 2` quadratic).
    pub uncertainty: UncertaintySet,
}

impl DesignProblem {
    /// Benchmark problem with `E_d = E(p̄, 90°)` from a full solve.
    pub fn benchmark(model: &AffineModel, mode: DesignMode, rho: f64, tol: f64) -> Result<Self> {
        let u = solve_state(model, &model.reference, &[90.0], tol)?;
        let target = model.output.dot(&u);
        Self::new(target, mode, rho, vec![85.0], vec![5.0])
    }

    pub fn new(target: f64, mode: DesignMode, rho: f64, phi_hat: Vec<f64>, scaling: Vec<f64>) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::Config(format!("penalty weight rho = {rho} must be positive")));
        }
        let norm = match mode {
            DesignMode::RobustQuadratic => NormKind::Two,
            _ => NormKind::Inf,
        };
        Ok(Self {
            rho,
            target,
            lower: vec![1.0, 1.0, 5.0],
            upper: vec![f64::INFINITY, f64::INFINITY, 14.0],
            linear: vec![(vec![0.0, 1.0, 1.0], 15.0), (vec![3.0, 0.0, -2.0], 50.0)],
            mode,
            nominal_angle: vec![90.0],
            uncertainty: UncertaintySet::new(phi_hat, scaling, norm)?,
        })
    }

    pub fn with_mode(&self, mode: DesignMode) -> Result<Self> {
        Self::new(
            self.target,
            mode,
            self.rho,
            self.uncertainty.nominal.clone(),
            self.uncertainty.scaling.clone(),
        )
        .map(|p| Self {
            nominal_angle: self.nominal_angle.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            linear: self.linear.clone(),
            ..p
        })
    }

    pub fn n_design(&self) -> usize {
        self.lower.len()
    }

    /// Angle at which the loop compares reduced and full outputs.
    pub fn evaluation_angle(&self) -> Vec<f64> {
        match self.mode {
            DesignMode::Nominal => self.nominal_angle.clone(),
            _ => self.uncertainty.nominal.clone(),
        }
    }

    pub fn num_inequalities(&self) -> usize {
        self.linear.len() + 1 + self.lower.len() + 1 + self.upper.iter().filter(|u| u.is_finite()).count()
    }

    /// Index (1-based, 0 = objective) of the output constraint.
    pub fn output_constraint(&self) -> usize {
        self.linear.len() + 1
    }

    /// Largest violation of the deterministic constraints at `p`.
    pub fn geometric_violation(&self, p: &[f64]) -> f64 {
        let mut v = 0.0f64;
        for (a, b) in &self.linear {
            v = v.max(a.iter().zip(p).map(|(a, x)| a * x).sum::<f64>() - b);
        }
        for i in 0..p.len() {
            v = v.max(self.lower[i] - p[i]).max(p[i] - self.upper[i]);
        }
        v.max(0.0)
    }

    pub fn volume(p: &[f64]) -> f64 {
        p[0] * p[1]
    }
}

/// The design problem evaluated through a backend.
pub struct DesignNlp<B> {
    pub problem: DesignProblem,
    pub backend: B,
}

pub fn build_design_nlp<B: OutputBackend>(problem: DesignProblem, backend: B) -> DesignNlp<B> {
    DesignNlp { problem, backend }
}

impl<B: OutputBackend> UncertainProblem for DesignNlp<B> {
    fn dim(&self) -> usize {
        self.problem.n_design() + 1
    }

    fn num_inequalities(&self) -> usize {
        self.problem.num_inequalities()
    }

    fn n_uncertain(&self) -> usize {
        self.problem.uncertainty.dim()
    }

    fn uncertain_functions(&self) -> Vec<usize> {
        vec![self.problem.output_constraint()]
    }

    fn evaluate(&mut self, x: &DVector<f64>, phi: &[f64], level: DerivativeLevel) -> Result<UncertainEval> {
        let np = self.problem.n_design();
        let nphi = self.n_uncertain();
        let n = np + 1;
        let p: Vec<f64> = x.iter().take(np).copied().collect();
        let xi = x[np];
        let pr = &self.problem;
        let e = |v: usize| {
            let mut g = DVector::zeros(n);
            g[v] = 1.0;
            g
        };
        let out = self.backend.output(&p, phi, level)?;

        let mut fns = Vec::with_capacity(pr.num_inequalities() + 1);
        let mut g0 = DVector::zeros(n);
        g0[0] = p[1];
        g0[1] = p[0];
        g0[np] = pr.rho;
        fns.push(FunctionData::certain(DesignProblem::volume(&p) + pr.rho * xi, g0, nphi));
        for (a, b) in &pr.linear {
            let mut g = DVector::zeros(n);
            g.rows_mut(0, np).copy_from(&DVector::from_column_slice(a));
            fns.push(FunctionData::certain(
                a.iter().zip(&p).map(|(a, x)| a * x).sum::<f64>() - b,
                g,
                nphi,
            ));
        }
        let mut grad_x = DVector::zeros(n);
        grad_x.rows_mut(0, np).copy_from(&(-&out.grad_p));
        grad_x[np] = -1.0;
        let mut grad_phi_x = DMatrix::zeros(nphi, n);
        grad_phi_x.view_mut((0, 0), (nphi, np)).copy_from(&(-&out.grad_phi_p));
        let mut hess_phi_x: Vec<DMatrix<f64>> = out.hess_phi_p.iter().map(|h| -h).collect();
        hess_phi_x.push(DMatrix::zeros(nphi, nphi));
        fns.push(FunctionData {
            value: pr.target - out.value - xi,
            grad_x,
            grad_phi: -&out.grad_phi,
            grad_phi_x,
            hess_phi: -&out.hess_phi,
            hess_phi_x,
        });
        for i in 0..np {
            fns.push(FunctionData::certain(pr.lower[i] - p[i], -e(i), nphi));
        }
        fns.push(FunctionData::certain(-xi, -e(np), nphi));
        for i in 0..np {
            if pr.upper[i].is_finite() {
                fns.push(FunctionData::certain(p[i] - pr.upper[i], e(i), nphi));
            }
        }
        Ok(UncertainEval { functions: fns })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    pub sqp: SqpOptions,
    pub mpec: MpecOptions,
}

impl Default for DesignOptions {
    fn default() -> Self {
        let sqp = SqpOptions {
            max_iter: 200,
            kkt_tol: 1e-8,
            ..SqpOptions::default()
        };
        Self {
            mpec: MpecOptions {
                sqp: sqp.clone(),
                ..MpecOptions::default()
            },
            sqp,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DesignSolution<B> {
    pub x: DVector<f64>,
    pub p: Vec<f64>,
    pub xi: f64,
    pub objective: f64,
    pub volume: f64,
    pub violation: f64,
    pub kkt: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub status: String,
    pub history_csv: String,
    /// Inner `(δ, λ)` and complementarity residual of the quadratic mode.
    pub inner: Option<(Vec<(DVector<f64>, f64)>, f64)>,
    pub backend: B,
}

/// Solves the design problem in the given mode from `x0 = (p, ξ)`.
pub fn optimize_design<B: OutputBackend>(
    problem: &DesignProblem,
    backend: B,
    x0: &DVector<f64>,
    opts: &DesignOptions,
) -> Result<DesignSolution<B>> {
    let np = problem.n_design();
    let nlp = build_design_nlp(problem.clone(), backend);
    let pack = |z: &DVector<f64>, r: &crate::sqp::OptResult, iterations: usize, converged: bool, status: String| {
        let x = z.rows(0, np + 1).into_owned();
        let p: Vec<f64> = x.iter().take(np).copied().collect();
        (
            x.clone(),
            p.clone(),
            x[np],
            r.objective,
            r.violation,
            r.kkt,
            iterations,
            r.evaluations,
            converged,
            status,
            r.history_csv(),
        )
    };
    let (tuple, inner, backend) = match problem.mode {
        DesignMode::Nominal => {
            let mut w = NominalNlp {
                base: nlp,
                phi: problem.nominal_angle.clone(),
            };
            let r = solve_sqp(&mut w, x0, &opts.sqp)?;
            (
                pack(&r.x, &r, r.iterations, r.converged(), r.status.as_str().into()),
                None,
                w.base.backend,
            )
        }
        DesignMode::RobustLinear => {
            let mut w = build_linear_robust_nlp(nlp, problem.uncertainty.with_norm(NormKind::Inf))?;
            let z0 = w.initial_point(x0)?;
            let r = solve_sqp(&mut w, &z0, &opts.sqp)?;
            (
                pack(&r.x, &r, r.iterations, r.converged(), r.status.as_str().into()),
                None,
                w.base.backend,
            )
        }
        DesignMode::RobustQuadratic => {
            let mut w = build_quadratic_robust_mpec(nlp, problem.uncertainty.with_norm(NormKind::Two))?;
            let r = solve_mpec(&mut w, x0, &opts.mpec)?;
            let status = if r.converged {
                SqpStatus::Converged.as_str().to_string()
            } else {
                format!(
                    "continuation stopped at tau = {:e}",
                    r.steps.last().map_or(f64::NAN, |s| s.tau)
                )
            };
            let t = pack(&r.z, &r.result, r.iterations, r.converged, status);
            (t, Some((r.inner.clone(), r.complementarity)), w.base.backend)
        }
    };
    let (x, p, xi, objective, violation, kkt, iterations, evaluations, converged, status, history_csv) = tuple;
    Ok(DesignSolution {
        volume: DesignProblem::volume(&p),
        x,
        p,
        xi,
        objective,
        violation,
        kkt,
        iterations,
        evaluations,
        converged,
        status,
        history_csv,
        inner,
        backend,
    })
}

/// `(p̄, 0)`.
pub fn initial_point(model: &AffineModel) -> DVector<f64> {
    let mut x = DVector::zeros(model.n_design + 1);
    x.rows_mut(0, model.n_design)
        .copy_from(&DVector::from_column_slice(&model.reference));
    x
}

/// Checks that a design is an admissible geometry of the model.
pub fn check_design(model: &AffineModel, p: &[f64]) -> Result<()> {
    model.check_parameter(p)
}

/// `E(p, φ)` for a fixed design as a function of the angle alone: one
/// solve per load term, after which any `φ` costs a handful of flops.
#[derive(Debug, Clone)]
pub struct OutputOracle {
    p: Vec<f64>,
    thetas: Vec<crate::affine::ThetaFunction>,
    values: Vec<f64>,
}

impl OutputOracle {
    pub fn new(model: &AffineModel, p: &[f64], tol: f64) -> Result<Self> {
        let op = crate::sensitivity::FactorizedOperator::new(model, p, tol)?;
        let values = model
            .load
            .components()
            .iter()
            .map(|f| op.solve(f).map(|u| model.output.dot(&u)))
            .collect::<Result<_>>()?;
        Ok(Self {
            p: p.to_vec(),
            thetas: model.load.thetas().to_vec(),
            values,
        })
    }

    pub fn eval(&self, phi: &[f64]) -> f64 {
        self.thetas
            .iter()
            .zip(&self.values)
            .map(|(t, v)| t.value(&self.p, phi) * v)
            .sum()
    }

    /// Smallest output over a grid of the set, i.e. the worst case of the
    /// constraint `E_d − E ≤ ξ`.
    pub fn worst_case(&self, set: &UncertaintySet, grid_points: usize) -> Result<crate::robust::GridMaximum> {
        let mut g = crate::robust::brute_force_worst_case(|phi| Ok(-self.eval(phi)), set, grid_points)?;
        g.value = -g.value;
        Ok(g)
    }
}
