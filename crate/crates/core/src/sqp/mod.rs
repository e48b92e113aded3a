//! SQP with damped BFGS, an ℓ1 merit function and Armijo backtracking.

pub mod qp;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use qp::{solve_qp, solve_qp_ineq, QpSolution};

/// Values and first derivatives at one point. Inequalities use `c(x) ≤ 0`;
/// Jacobian rows are constraint gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpEval {
    pub f: f64,
    pub grad: DVector<f64>,
    pub c_in: DVector<f64>,
    pub j_in: DMatrix<f64>,
    pub c_eq: DVector<f64>,
    pub j_eq: DMatrix<f64>,
}

impl NlpEval {
    pub fn unconstrained(f: f64, grad: DVector<f64>) -> Self {
        let n = grad.len();
        Self {
            f,
            grad,
            c_in: DVector::zeros(0),
            j_in: DMatrix::zeros(0, n),
            c_eq: DVector::zeros(0),
            j_eq: DMatrix::zeros(0, n),
        }
    }

    /// ∞-norm of the positive parts of `c_in` and of `|c_eq|`.
    pub fn violation(&self) -> f64 {
        let a = self.c_in.iter().fold(0.0f64, |m, &v| m.max(v));
        self.c_eq.iter().fold(a, |m, &v| m.max(v.abs()))
    }

    fn violation_l1(&self) -> f64 {
        self.c_in.iter().map(|v| v.max(0.0)).sum::<f64>() + self.c_eq.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn lagrangian_gradient(&self, lam_in: &DVector<f64>, lam_eq: &DVector<f64>) -> DVector<f64> {
        &self.grad + self.j_in.tr_mul(lam_in) + self.j_eq.tr_mul(lam_eq)
    }
}

pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn num_inequalities(&self) -> usize;
    fn num_equalities(&self) -> usize {
        0
    }
    fn evaluate(&mut self, x: &DVector<f64>) -> Result<NlpEval>;
}

impl<P: NlpProblem + ?Sized> NlpProblem for &mut P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_inequalities(&self) -> usize {
        (**self).num_inequalities()
    }
    fn num_equalities(&self) -> usize {
        (**self).num_equalities()
    }
    fn evaluate(&mut self, x: &DVector<f64>) -> Result<NlpEval> {
        (**self).evaluate(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqpOptions {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub initial_penalty: f64,
    /// Powell damping threshold.
    pub damping: f64,
    /// Penalty weight of the elastic variables when a QP is infeasible.
    pub elastic_weight: f64,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            kkt_tol: 1e-8,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            initial_penalty: 1.0,
            damping: 0.2,
            elastic_weight: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    SmallStep,
}

impl SqpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SqpStatus::Converged => "converged",
            SqpStatus::MaxIterations => "max-iterations",
            SqpStatus::LineSearchFailed => "line-search-failed",
            SqpStatus::SmallStep => "small-step",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub violation: f64,
    pub kkt: f64,
    pub step: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub violation: f64,
    pub kkt: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: SqpStatus,
    pub lambda_in: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub history: Vec<IterRecord>,
    /// Final evaluation, kept so callers can recheck the reported numbers.
    pub last: NlpEval,
}

impl OptResult {
    pub fn converged(&self) -> bool {
        self.status == SqpStatus::Converged
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("iter,objective,violation,kkt,step,evaluations\n");
        for r in &self.history {
            writeln!(
                s,
                "{},{:.14e},{:.14e},{:.14e},{:.14e},{}",
                r.iter, r.objective, r.violation, r.kkt, r.step, r.evaluations
            )
            .unwrap();
        }
        s
    }
}

/// `max(‖∇L‖∞, violation, |λ_i c_i|, −λ_i)`.
pub fn kkt_residual(ev: &NlpEval, lam_in: &DVector<f64>, lam_eq: &DVector<f64>) -> f64 {
    let mut r = ev.lagrangian_gradient(lam_in, lam_eq).amax().max(ev.violation());
    for (l, c) in lam_in.iter().zip(ev.c_in.iter()) {
        r = r.max((l * c).abs()).max(-l);
    }
    r
}

struct Subproblem {
    d: DVector<f64>,
    lam_in: DVector<f64>,
    lam_eq: DVector<f64>,
    /// ℓ1 norm of the elastic relaxation; zero for a regular QP.
    elastic: f64,
}

fn solve_subproblem(
    b: &DMatrix<f64>,
    grad: &DVector<f64>,
    ev: &NlpEval,
    c_in: &DVector<f64>,
    c_eq: &DVector<f64>,
    weight: f64,
) -> Result<Subproblem> {
    match solve_qp(b, grad, &ev.j_eq, &(-c_eq), &ev.j_in, &(-c_in)) {
        Ok(s) => {
            return Ok(Subproblem {
                d: s.x,
                lam_in: s.lambda_in,
                lam_eq: s.lambda_eq,
                elastic: 0.0,
            })
        }
        Err(Error::QpInfeasible) => {}
        Err(e) => return Err(e),
    }
    // elastic mode: J_in d + c_in ≤ t, J_eq d + c_eq = s⁺ − s⁻, t, s± ≥ 0
    let n = grad.len();
    let (mi, me) = (ev.j_in.nrows(), ev.j_eq.nrows());
    let ne = mi + 2 * me;
    let dim = n + ne;
    let mut h = DMatrix::zeros(dim, dim);
    h.view_mut((0, 0), (n, n)).copy_from(b);
    let reg = 1e-8 * b.diagonal().amax().max(1.0);
    for k in n..dim {
        h[(k, k)] = reg;
    }
    let mut g = DVector::from_element(dim, weight);
    g.rows_mut(0, n).copy_from(grad);
    let mut a_in = DMatrix::zeros(mi + ne, dim);
    let mut b_in = DVector::zeros(mi + ne);
    for i in 0..mi {
        a_in.view_mut((i, 0), (1, n)).copy_from(&ev.j_in.row(i));
        a_in[(i, n + i)] = -1.0;
        b_in[i] = -c_in[i];
    }
    for k in 0..ne {
        a_in[(mi + k, n + k)] = -1.0;
    }
    let mut a_eq = DMatrix::zeros(me, dim);
    for i in 0..me {
        a_eq.view_mut((i, 0), (1, n)).copy_from(&ev.j_eq.row(i));
        a_eq[(i, n + mi + 2 * i)] = -1.0;
        a_eq[(i, n + mi + 2 * i + 1)] = 1.0;
    }
    let s = solve_qp(&h, &g, &a_eq, &(-c_eq), &a_in, &b_in)?;
    let elastic = s.x.rows(n, ne).iter().map(|v| v.max(0.0)).sum();
    Ok(Subproblem {
        d: s.x.rows(0, n).into_owned(),
        lam_in: s.lambda_in.rows(0, mi).into_owned(),
        lam_eq: s.lambda_eq,
        elastic,
    })
}

fn merit(ev: &NlpEval, mu: f64) -> f64 {
    ev.f + mu * ev.violation_l1()
}

/// Evaluation at a trial point; an inadmissible point has infinite merit.
fn try_evaluate<P: NlpProblem>(problem: &mut P, x: &DVector<f64>, count: &mut usize) -> Result<Option<NlpEval>> {
    *count += 1;
    match problem.evaluate(x) {
        Ok(ev) if ev.f.is_finite() => Ok(Some(ev)),
        Ok(_) | Err(Error::Inadmissible(_)) | Err(Error::NonPositiveTheta { .. }) => Ok(None),
        Err(e) => Err(Error::Evaluation {
            x: x.iter().copied().collect(),
            message: e.to_string(),
        }),
    }
}

fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, damping: f64) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-300) {
        return;
    }
    let sy = s.dot(y);
    let r = if sy >= damping * sbs {
        y.clone()
    } else {
        let theta = (1.0 - damping) * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    };
    let sr = s.dot(&r);
    if !(sr > 0.0) {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
    *b = (&*b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo >= 1e-8 && hi <= 1e8) {
        *b = DMatrix::identity(b.nrows(), b.ncols());
    }
}

/// Runs SQP from `x0`.
pub fn solve_sqp<P: NlpProblem>(problem: &mut P, x0: &DVector<f64>, opts: &SqpOptions) -> Result<OptResult> {
    let n = problem.dim();
    if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::DimensionMismatch(format!(
            "starting point of length {} for dimension {n}",
            x0.len()
        )));
    }
    let mut evaluations = 0;
    let mut x = x0.clone();
    let mut ev = match try_evaluate(problem, &x, &mut evaluations)? {
        Some(ev) => ev,
        None => {
            return Err(Error::Evaluation {
                x: x.iter().copied().collect(),
                message: "starting point cannot be evaluated".into(),
            })
        }
    };
    let mut b = DMatrix::identity(n, n);
    let mut fresh = true;
    let mut mu = opts.initial_penalty;
    let mut history = Vec::new();
    let mut iter = 0;
    loop {
        let sub = solve_subproblem(&b, &ev.grad, &ev, &ev.c_in, &ev.c_eq, opts.elastic_weight)?;
        let kkt = kkt_residual(&ev, &sub.lam_in, &sub.lam_eq);
        let mut record = IterRecord {
            iter,
            objective: ev.f,
            violation: ev.violation(),
            kkt,
            step: 0.0,
            evaluations,
        };
        let finish = |status, history: Vec<IterRecord>, x: DVector<f64>, ev: NlpEval, sub: Subproblem, evaluations| {
            Ok(OptResult {
                objective: ev.f,
                violation: ev.violation(),
                kkt,
                iterations: iter,
                evaluations,
                status,
                lambda_in: sub.lam_in,
                lambda_eq: sub.lam_eq,
                history,
                x,
                last: ev,
            })
        };
        if kkt <= opts.kkt_tol {
            history.push(record);
            return finish(SqpStatus::Converged, history, x, ev, sub, evaluations);
        }
        if iter >= opts.max_iter {
            history.push(record);
            return finish(SqpStatus::MaxIterations, history, x, ev, sub, evaluations);
        }
        if sub.d.amax() <= 1e-15 * (1.0 + x.amax()) {
            history.push(record);
            return finish(SqpStatus::SmallStep, history, x, ev, sub, evaluations);
        }

        let lam_max = sub
            .lam_in
            .amax()
            .max(if sub.lam_eq.is_empty() { 0.0 } else { sub.lam_eq.amax() });
        mu = mu.max(1.1 * lam_max + 1.0);
        let m0 = merit(&ev, mu);
        let mut slope = ev.grad.dot(&sub.d) - mu * (ev.violation_l1() - sub.elastic);
        if !(slope < 0.0) {
            slope = -sub.d.dot(&(&b * &sub.d));
        }

        // decreases below the rounding level of the merit cannot be resolved
        let noise = 10.0 * f64::EPSILON * m0.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted: Option<(DVector<f64>, NlpEval)> = None;
        for k in 0..=opts.max_backtracks {
            let trial = &x + &sub.d * t;
            if let Some(tev) = try_evaluate(problem, &trial, &mut evaluations)? {
                if merit(&tev, mu) <= m0 + opts.armijo_c1 * t * slope + noise {
                    accepted = Some((trial, tev));
                    break;
                }
                if k == 0 {
                    // second-order correction for the curvature of the constraints
                    let c_in = &tev.c_in - &ev.j_in * &sub.d;
                    let c_eq = &tev.c_eq - &ev.j_eq * &sub.d;
                    if let Ok(soc) = solve_subproblem(&b, &ev.grad, &ev, &c_in, &c_eq, opts.elastic_weight) {
                        let trial = &x + &soc.d;
                        if let Some(sev) = try_evaluate(problem, &trial, &mut evaluations)? {
                            if merit(&sev, mu) <= m0 + opts.armijo_c1 * slope + noise {
                                accepted = Some((trial, sev));
                                break;
                            }
                        }
                    }
                }
            }
            t *= opts.backtrack;
        }
        // a step lost in rounding is no progress either
        let accepted = accepted.filter(|(x_new, _)| (x_new - &x).amax() > 0.0);
        let Some((x_new, ev_new)) = accepted else {
            history.push(record);
            if !fresh {
                // retry once with the identity before giving up
                b = DMatrix::identity(n, n);
                fresh = true;
                iter += 1;
                continue;
            }
            return finish(SqpStatus::LineSearchFailed, history, x, ev, sub, evaluations);
        };
        fresh = false;
        let s = &x_new - &x;
        record.step = s.amax();
        history.push(record);
        let y = ev_new.lagrangian_gradient(&sub.lam_in, &sub.lam_eq) - ev.lagrangian_gradient(&sub.lam_in, &sub.lam_eq);
        bfgs_update(&mut b, &s, &y, opts.damping);
        x = x_new;
        ev = ev_new;
        iter += 1;
    }
}

/// Problem given by closures, handy for tests and small models.
pub struct FnProblem<F>
where
    F: FnMut(&DVector<f64>) -> Result<NlpEval>,
{
    pub dim: usize,
    pub n_in: usize,
    pub n_eq: usize,
    pub f: F,
}

impl<F> NlpProblem for FnProblem<F>
where
    F: FnMut(&DVector<f64>) -> Result<NlpEval>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn num_inequalities(&self) -> usize {
        self.n_in
    }
    fn num_equalities(&self) -> usize {
        self.n_eq
    }
    fn evaluate(&mut self, x: &DVector<f64>) -> Result<NlpEval> {
        (self.f)(x)
    }
}

/// Convex QP `½xᵀQx + cᵀx` with `Ax ≤ b` as an NLP.
pub struct QuadraticNlp {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl NlpProblem for QuadraticNlp {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn num_inequalities(&self) -> usize {
        self.b.len()
    }
    fn evaluate(&mut self, x: &DVector<f64>) -> Result<NlpEval> {
        let qx = &self.q * x;
        Ok(NlpEval {
            f: 0.5 * x.dot(&qx) + self.c.dot(x),
            grad: qx + &self.c,
            c_in: &self.a * x - &self.b,
            j_in: self.a.clone(),
            c_eq: DVector::zeros(0),
            j_eq: DMatrix::zeros(0, x.len()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_lower_bound() {
        // min x² s.t. 1 − x ≤ 0
        let mut p = FnProblem {
            dim: 1,
            n_in: 1,
            n_eq: 0,
            f: |x: &DVector<f64>| {
                Ok(NlpEval {
                    f: x[0] * x[0],
                    grad: DVector::from_vec(vec![2.0 * x[0]]),
                    c_in: DVector::from_vec(vec![1.0 - x[0]]),
                    j_in: DMatrix::from_row_slice(1, 1, &[-1.0]),
                    c_eq: DVector::zeros(0),
                    j_eq: DMatrix::zeros(0, 1),
                })
            },
        };
        let r = solve_sqp(&mut p, &DVector::from_vec(vec![3.0]), &SqpOptions::default()).unwrap();
        assert!(r.converged());
        assert!((r.x[0] - 1.0).abs() < 1e-10);
        assert!((r.objective - 1.0).abs() < 1e-9);
        assert!((r.lambda_in[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock_with_disc() {
        // min (1−x)² + 100(y−x²)² s.t. x² + y² ≤ 1.5
        let mut p = FnProblem {
            dim: 2,
            n_in: 1,
            n_eq: 0,
            f: |v: &DVector<f64>| {
                let (x, y) = (v[0], v[1]);
                Ok(NlpEval {
                    f: (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2),
                    grad: DVector::from_vec(vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)]),
                    c_in: DVector::from_vec(vec![x * x + y * y - 1.5]),
                    j_in: DMatrix::from_row_slice(1, 2, &[2.0 * x, 2.0 * y]),
                    c_eq: DVector::zeros(0),
                    j_eq: DMatrix::zeros(0, 2),
                })
            },
        };
        let r = solve_sqp(
            &mut p,
            &DVector::from_vec(vec![-1.0, 0.5]),
            &SqpOptions {
                max_iter: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.converged(), "{:?}", r.status);
        assert!(r.violation <= 1e-8);
        assert!(r.objective < 0.1);
    }

    #[test]
    fn equality_constrained_circle() {
        // min x + y s.t. x² + y² = 2  →  (−1, −1)
        let mut p = FnProblem {
            dim: 2,
            n_in: 0,
            n_eq: 1,
            f: |v: &DVector<f64>| {
                Ok(NlpEval {
                    f: v[0] + v[1],
                    grad: DVector::from_vec(vec![1.0, 1.0]),
                    c_in: DVector::zeros(0),
                    j_in: DMatrix::zeros(0, 2),
                    c_eq: DVector::from_vec(vec![v[0] * v[0] + v[1] * v[1] - 2.0]),
                    j_eq: DMatrix::from_row_slice(1, 2, &[2.0 * v[0], 2.0 * v[1]]),
                })
            },
        };
        let r = solve_sqp(&mut p, &DVector::from_vec(vec![-0.5, -1.5]), &SqpOptions::default()).unwrap();
        assert!(r.converged());
        assert!((r.x[0] + 1.0).abs() < 1e-8 && (r.x[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn reported_numbers_match_final_point() {
        let mut p = QuadraticNlp {
            q: DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]),
            c: DVector::from_vec(vec![-1.0, -2.0]),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: DVector::from_vec(vec![0.2]),
        };
        let r = solve_sqp(&mut p, &DVector::from_vec(vec![2.0, -3.0]), &SqpOptions::default()).unwrap();
        let ev = p.evaluate(&r.x).unwrap();
        assert_eq!(ev.violation(), r.violation);
        assert_eq!(kkt_residual(&ev, &r.lambda_in, &r.lambda_eq), r.kkt);
        assert!(r.history_csv().starts_with("iter,objective"));
    }
}
