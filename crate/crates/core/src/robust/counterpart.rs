//! Linear and quadratic approximations of the robust counterpart of a
//! problem whose objective and inequalities depend on uncertain `φ`.
//!
//! Function `0` is the objective and functions `1..=m` are the
//! inequalities `g_i ≤ 0`. Only functions listed as uncertain receive a
//! worst-case correction; for the others the correction is identically zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::trs::{solve_trust_region_subproblem, QuadraticWorstCaseModel};
use super::{NormKind, UncertaintySet};
use crate::error::{Error, Result};
use crate::sqp::{solve_sqp, NlpEval, NlpProblem, OptResult, SqpOptions};

/// How many `φ`-derivatives an evaluation has to provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivativeLevel {
    Nominal,
    Linear,
    Quadratic,
}

/// One function with its `x`- and `φ`-derivatives at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionData {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub grad_phi: DVector<f64>,
    /// `∂x ∂φ g`, rows indexed by `φ_j`.
    pub grad_phi_x: DMatrix<f64>,
    pub hess_phi: DMatrix<f64>,
    /// `∂x_k ∇²_φ g` for every `k`.
    pub hess_phi_x: Vec<DMatrix<f64>>,
}

impl FunctionData {
    /// A function that does not depend on `φ`.
    pub fn certain(value: f64, grad_x: DVector<f64>, n_uncertain: usize) -> Self {
        let n = grad_x.len();
        Self {
            value,
            grad_x,
            grad_phi: DVector::zeros(n_uncertain),
            grad_phi_x: DMatrix::zeros(n_uncertain, n),
            hess_phi: DMatrix::zeros(n_uncertain, n_uncertain),
            hess_phi_x: vec![DMatrix::zeros(n_uncertain, n_uncertain); n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertainEval {
    pub functions: Vec<FunctionData>,
}

pub trait UncertainProblem {
    fn dim(&self) -> usize;
    fn num_inequalities(&self) -> usize;
    fn n_uncertain(&self) -> usize;
    /// Indices (0 = objective) of the functions that depend on `φ`.
    fn uncertain_functions(&self) -> Vec<usize>;
    fn evaluate(&mut self, x: &DVector<f64>, phi: &[f64], level: DerivativeLevel) -> Result<UncertainEval>;
}

fn pack(functions: &[FunctionData], n: usize, extra: usize) -> NlpEval {
    let m = functions.len() - 1;
    let total = n + extra;
    let mut grad = DVector::zeros(total);
    grad.rows_mut(0, n).copy_from(&functions[0].grad_x);
    let mut j_in = DMatrix::zeros(m, total);
    let mut c_in = DVector::zeros(m);
    for i in 0..m {
        c_in[i] = functions[i + 1].value;
        j_in.view_mut((i, 0), (1, n))
            .copy_from(&functions[i + 1].grad_x.transpose());
    }
    NlpEval {
        f: functions[0].value,
        grad,
        c_in,
        j_in,
        c_eq: DVector::zeros(0),
        j_eq: DMatrix::zeros(0, total),
    }
}

/// The base problem at a fixed `φ`.
pub struct NominalNlp<P> {
    pub base: P,
    pub phi: Vec<f64>,
}

impl<P: UncertainProblem> NlpProblem for NominalNlp<P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn num_inequalities(&self) -> usize {
        self.base.num_inequalities()
    }
    fn evaluate(&mut self, x: &DVector<f64>) -> Result<NlpEval> {
        let ev = self.base.evaluate(x, &self.phi, DerivativeLevel::Nominal)?;
        Ok(pack(&ev.functions, x.len(), 0))
    }
}

/// Linear robust counterpart. For `k = ∞` the 1-norm is written with one
/// slack per uncertain function and component, `−ζ_ij ≤ D_j ∂_{φj} g_i ≤ ζ_ij`;
/// for `k = 2` the Euclidean norm is used directly.
pub struct LinearRobustNlp<P> {
    pub base: P,
    pub set: UncertaintySet,
    uncertain: Vec<usize>,
}

pub fn build_linear_robust_nlp<P: UncertainProblem>(base: P, set: UncertaintySet) -> Result<LinearRobustNlp<P>> {
    if set.dim() != base.n_uncertain() {
        return Err(Error::DimensionMismatch(
            "uncertainty set and problem disagree in dimension".into(),
        ));
    }
    let uncertain = base.uncertain_functions();
    Ok(LinearRobustNlp { base, set, uncertain })
}

impl<P: UncertainProblem> LinearRobustNlp<P> {
    fn n_slack(&self) -> usize {
        match self.set.norm {
            NormKind::Inf => self.uncertain.len() * self.set.dim(),
            NormKind::Two => 0,
        }
    }

    /// Extends a base point with slacks equal to `|D ∇_φ g|`.
    pub fn initial_point(&mut self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        let n = x0.len();
        let mut z = DVector::zeros(n + self.n_slack());
        z.rows_mut(0, n).copy_from(x0);
        if self.set.norm == NormKind::Inf {
            let ev = self.base.evaluate(x0, &self.set.nominal, DerivativeLevel::Linear)?;
            let nphi = self.set.dim();
            for (k, &i) in self.uncertain.iter().enumerate() {
                for j in 0..nphi {
                    z[n + k * nphi + j] = (self.set.scaling[j] * ev.functions[i].grad_phi[j]).abs();
                }
            }
        }
        Ok(z)
    }

    pub fn base_point(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(0, self.base.dim()).into_owned()
    }
}

impl<P: UncertainProblem> NlpProblem for LinearRobustNlp<P> {
    fn dim(&self) -> usize {
        self.base.dim() + self.n_slack()
    }
    fn num_inequalities(&self) -> usize {
        self.base.num_inequalities() + 2 * self.n_slack()
    }
    fn evaluate(&mut self, z: &DVector<f64>) -> Result<NlpEval> {
        let n = self.base.dim();
        let x = z.rows(0, n).into_owned();
        let ev = self.base.evaluate(&x, &self.set.nominal, DerivativeLevel::Linear)?;
        let d = &self.set.scaling;
        let nphi = self.set.dim();
        let extra = self.n_slack();
        let mut out = pack(&ev.functions, n, extra);
        let m = self.base.num_inequalities();
        match self.set.norm {
            NormKind::Inf => {
                let mut c_in = DVector::zeros(m + 2 * extra);
                let mut j_in = DMatrix::zeros(m + 2 * extra, n + extra);
                c_in.rows_mut(0, m).copy_from(&out.c_in);
                j_in.view_mut((0, 0), (m, n + extra)).copy_from(&out.j_in);
                for (k, &i) in self.uncertain.iter().enumerate() {
                    let fd = &ev.functions[i];
                    for j in 0..nphi {
                        let s = n + k * nphi + j;
                        if i == 0 {
                            out.f += z[s];
                            out.grad[s] += 1.0;
                        } else {
                            c_in[i - 1] += z[s];
                            j_in[(i - 1, s)] += 1.0;
                        }
                        let row = m + 2 * (k * nphi + j);
                        let v = d[j] * fd.grad_phi[j];
                        let gx = fd.grad_phi_x.row(j) * d[j];
                        c_in[row] = v - z[s];
                        j_in.view_mut((row, 0), (1, n)).copy_from(&gx);
                        j_in[(row, s)] = -1.0;
                        c_in[row + 1] = -v - z[s];
                        j_in.view_mut((row + 1, 0), (1, n)).copy_from(&(-gx));
                        j_in[(row + 1, s)] = -1.0;
                    }
                }
                out.c_in = c_in;
                out.j_in = j_in;
            }
            NormKind::Two => {
                for &i in &self.uncertain {
                    let fd = &ev.functions[i];
                    let db: DVector<f64> = DVector::from_fn(nphi, |j, _| d[j] * fd.grad_phi[j]);
                    let norm = db.norm();
                    let mut g = DVector::zeros(n);
                    if norm > 0.0 {
                        for j in 0..nphi {
                            g += fd.grad_phi_x.row(j).transpose() * (d[j] * db[j] / norm);
                        }
                    }
                    if i == 0 {
                        out.f += norm;
                        let mut gr = out.grad.rows_mut(0, n);
                        gr += &g;
                    } else {
                        out.c_in[i - 1] += norm;
                        let mut row = out.j_in.view_mut((i - 1, 0), (1, n));
                        row += g.transpose();
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Quadratic robust counterpart as an MPEC in `(x, δ_u, λ_u)`, one inner
/// block per uncertain function `u`. Per block:
///
/// - model `g + bᵀδ + ½δᵀHδ` replaces the function,
/// - equality `−b − Hδ + λD⁻²δ = 0`,
/// - `‖D⁻¹δ‖² − 1 ≤ 0`, `−λ ≤ 0`,
/// - relaxed complementarity `λ(1 − ‖D⁻¹δ‖²) − τ ≤ 0`,
/// - semidefiniteness `λ_max(DHD) − λ ≤ 0`.
pub struct QuadraticMpec<P> {
    pub base: P,
    pub set: UncertaintySet,
    pub tau: f64,
    uncertain: Vec<usize>,
}

pub fn build_quadratic_robust_mpec<P: UncertainProblem>(base: P, set: UncertaintySet) -> Result<QuadraticMpec<P>> {
    if set.norm != NormKind::Two {
        return Err(Error::Config("the quadratic counterpart needs k = 2".into()));
    }
    if set.dim() != base.n_uncertain() {
        return Err(Error::DimensionMismatch(
            "uncertainty set and problem disagree in dimension".into(),
        ));
    }
    let uncertain = base.uncertain_functions();
    Ok(QuadraticMpec {
        base,
        set,
        tau: 1e-2,
        uncertain,
    })
}

/// `λ_max(DHD)` and its eigenvector.
fn top_eigen(h: &DMatrix<f64>, d: &[f64]) -> (f64, DVector<f64>) {
    let n = d.len();
    let a = DMatrix::from_fn(n, n, |i, j| d[i] * 0.5 * (h[(i, j)] + h[(j, i)]) * d[j]);
    let eig = SymmetricEigen::new(a);
    let k = eig.eigenvalues.imax();
    (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned())
}

impl<P: UncertainProblem> QuadraticMpec<P> {
    fn block(&self) -> usize {
        self.set.dim() + 1
    }

    /// Inner blocks `(δ_u, λ_u)` of a decision vector.
    pub fn inner(&self, z: &DVector<f64>) -> Vec<(DVector<f64>, f64)> {
        let (n, nphi) = (self.base.dim(), self.set.dim());
        (0..self.uncertain.len())
            .map(|k| {
                let s = n + k * self.block();
                (z.rows(s, nphi).into_owned(), z[s + nphi])
            })
            .collect()
    }

    pub fn uncertain(&self) -> &[usize] {
        &self.uncertain
    }

    pub fn base_point(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(0, self.base.dim()).into_owned()
    }

    /// Quadratic worst-case models of the uncertain functions at `x`.
    pub fn models(&mut self, x: &DVector<f64>) -> Result<Vec<QuadraticWorstCaseModel>> {
        let ev = self.base.evaluate(x, &self.set.nominal, DerivativeLevel::Quadratic)?;
        Ok(self
            .uncertain
            .iter()
            .map(|&i| QuadraticWorstCaseModel {
                value: ev.functions[i].value,
                grad: ev.functions[i].grad_phi.clone(),
                hess: ev.functions[i].hess_phi.clone(),
            })
            .collect())
    }

    /// Extends a base point with the exact inner solutions at `x0`.
    pub fn initial_point(&mut self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        let n = x0.len();
        let models = self.models(x0)?;
        let mut z = DVector::zeros(n + self.uncertain.len() * self.block());
        z.rows_mut(0, n).copy_from(x0);
        for (k, m) in models.iter().enumerate() {
            let s = solve_trust_region_subproblem(m, &self.set.scaling);
            let off = n + k * self.block();
            z.rows_mut(off, self.set.dim()).copy_from(&s.delta);
            z[off + self.set.dim()] = s.lambda;
        }
        Ok(z)
    }

    /// `max_u |λ_u (1 − ‖D⁻¹δ_u‖²)|`.
    pub fn complementarity(&self, z: &DVector<f64>) -> f64 {
        self.inner(z)
            .iter()
            .map(|(delta, lam)| (lam * (1.0 - self.scaled_norm2(delta))).abs())
            .fold(0.0, f64::max)
    }

    fn scaled_norm2(&self, delta: &DVector<f64>) -> f64 {
        delta.iter().zip(&self.set.scaling).map(|(x, d)| (x / d).powi(2)).sum()
    }
}

impl<P: UncertainProblem> NlpProblem for QuadraticMpec<P> {
    fn dim(&self) -> usize {
        self.base.dim() + self.uncertain.len() * self.block()
    }
    fn num_inequalities(&self) -> usize {
        self.base.num_inequalities() + 4 * self.uncertain.len()
    }
    fn num_equalities(&self) -> usize {
        self.uncertain.len() * self.set.dim()
    }
    fn evaluate(&mut self, z: &DVector<f64>) -> Result<NlpEval> {
        let n = self.base.dim();
        let nphi = self.set.dim();
        let x = z.rows(0, n).into_owned();
        let ev = self.base.evaluate(&x, &self.set.nominal, DerivativeLevel::Quadratic)?;
        let total = self.dim();
        let nu = self.uncertain.len();
        let m = self.base.num_inequalities();
        let base = pack(&ev.functions, n, total - n);
        let mut f = base.f;
        let mut grad = base.grad;
        let mut c_in = DVector::zeros(m + 4 * nu);
        let mut j_in = DMatrix::zeros(m + 4 * nu, total);
        c_in.rows_mut(0, m).copy_from(&base.c_in);
        j_in.view_mut((0, 0), (m, total)).copy_from(&base.j_in);
        let mut c_eq = DVector::zeros(nu * nphi);
        let mut j_eq = DMatrix::zeros(nu * nphi, total);
        let d = self.set.scaling.clone();
        let dinv2: Vec<f64> = d.iter().map(|v| 1.0 / (v * v)).collect();

        for (k, &i) in self.uncertain.iter().enumerate() {
            let fd = &ev.functions[i];
            let off = n + k * self.block();
            let delta = z.rows(off, nphi).into_owned();
            let lam = z[off + nphi];
            let hd = &fd.hess_phi * &delta;
            let q = fd.value + fd.grad_phi.dot(&delta) + 0.5 * delta.dot(&hd);
            let mut qx = fd.grad_x.clone() + fd.grad_phi_x.tr_mul(&delta);
            for (kk, hx) in fd.hess_phi_x.iter().enumerate() {
                qx[kk] += 0.5 * delta.dot(&(hx * &delta));
            }
            let qd = &fd.grad_phi + &hd;
            if i == 0 {
                f = q;
                grad.rows_mut(0, n).copy_from(&qx);
                grad.rows_mut(off, nphi).copy_from(&qd);
            } else {
                c_in[i - 1] = q;
                j_in.view_mut((i - 1, 0), (1, n)).copy_from(&qx.transpose());
                j_in.view_mut((i - 1, off), (1, nphi)).copy_from(&qd.transpose());
            }

            // stationarity of the inner problem
            for r in 0..nphi {
                let row = k * nphi + r;
                c_eq[row] = -fd.grad_phi[r] - hd[r] + lam * dinv2[r] * delta[r];
                for kk in 0..n {
                    j_eq[(row, kk)] = -fd.grad_phi_x[(r, kk)] - (fd.hess_phi_x[kk].row(r) * &delta)[0];
                }
                for c in 0..nphi {
                    j_eq[(row, off + c)] = -fd.hess_phi[(r, c)] + if r == c { lam * dinv2[r] } else { 0.0 };
                }
                j_eq[(row, off + nphi)] = dinv2[r] * delta[r];
            }

            let s2 = self.scaled_norm2(&delta);
            let ds2: Vec<f64> = (0..nphi).map(|r| 2.0 * dinv2[r] * delta[r]).collect();
            let row = m + 4 * k;
            c_in[row] = s2 - 1.0;
            for r in 0..nphi {
                j_in[(row, off + r)] = ds2[r];
            }
            c_in[row + 1] = -lam;
            j_in[(row + 1, off + nphi)] = -1.0;
            c_in[row + 2] = lam * (1.0 - s2) - self.tau;
            for r in 0..nphi {
                j_in[(row + 2, off + r)] = -lam * ds2[r];
            }
            j_in[(row + 2, off + nphi)] = 1.0 - s2;
            let (mu, v) = top_eigen(&fd.hess_phi, &d);
            c_in[row + 3] = mu - lam;
            let dv = DVector::from_fn(nphi, |r, _| d[r] * v[r]);
            for (kk, hx) in fd.hess_phi_x.iter().enumerate() {
                j_in[(row + 3, kk)] = dv.dot(&(hx * &dv));
            }
            j_in[(row + 3, off + nphi)] = -1.0;
        }
        Ok(NlpEval {
            f,
            grad,
            c_in,
            j_in,
            c_eq,
            j_eq,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpecOptions {
    /// Relaxation parameters, driven down in order.
    pub taus: Vec<f64>,
    pub sqp: SqpOptions,
    /// Tolerance factor for the single retry of a failed step.
    pub retry_relax: f64,
}

impl Default for MpecOptions {
    fn default() -> Self {
        Self {
            taus: vec![1e-2, 1e-4, 1e-6, 1e-8, 1e-10],
            sqp: SqpOptions::default(),
            retry_relax: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpecStep {
    pub tau: f64,
    pub converged: bool,
    pub iterations: usize,
    pub retried: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpecResult {
    pub z: DVector<f64>,
    pub x: DVector<f64>,
    pub inner: Vec<(DVector<f64>, f64)>,
    pub complementarity: f64,
    pub result: OptResult,
    pub steps: Vec<MpecStep>,
    pub iterations: usize,
    pub converged: bool,
}

/// `τ`-continuation: each step starts from the previous solution; a failed
/// step is retried once from there with a relaxed tolerance.
pub fn solve_mpec<P: UncertainProblem>(
    problem: &mut QuadraticMpec<P>,
    x0: &DVector<f64>,
    opts: &MpecOptions,
) -> Result<MpecResult> {
    if opts.taus.is_empty() {
        return Err(Error::Config("empty relaxation schedule".into()));
    }
    let mut z = problem.initial_point(x0)?;
    let mut steps = Vec::new();
    let mut last: Option<OptResult> = None;
    let mut iterations = 0;
    let mut converged = true;
    for &tau in &opts.taus {
        problem.tau = tau;
        let mut r = solve_sqp(problem, &z, &opts.sqp)?;
        let mut retried = false;
        iterations += r.iterations;
        if !r.converged() {
            retried = true;
            let relaxed = SqpOptions {
                kkt_tol: opts.sqp.kkt_tol * opts.retry_relax,
                ..opts.sqp.clone()
            };
            r = solve_sqp(problem, &z, &relaxed)?;
            iterations += r.iterations;
        }
        steps.push(MpecStep {
            tau,
            converged: r.converged(),
            iterations: r.iterations,
            retried,
        });
        if !r.converged() {
            converged = false;
            last = Some(r);
            break;
        }
        z = r.x.clone();
        last = Some(r);
    }
    let result = last.expect("at least one continuation step");
    let z = result.x.clone();
    Ok(MpecResult {
        x: problem.base_point(&z),
        inner: problem.inner(&z),
        complementarity: problem.complementarity(&z),
        z,
        result,
        steps,
        iterations,
        converged,
    })
}
