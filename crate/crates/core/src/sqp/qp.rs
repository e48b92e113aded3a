//! Dense strictly convex QP by the dual active-set method of Goldfarb and
//! Idnani:
//!
//! `min ½xᵀHx + cᵀx  s.t.  A_eq x = b_eq,  A_in x ≤ b_in`.
//!
//! Multipliers follow `Hx + c + A_eqᵀν + A_inᵀλ = 0`, `λ ≥ 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub lambda_in: DVector<f64>,
    pub objective: f64,
    /// Indices of the inequalities active at the solution.
    pub active: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Eq(usize),
    In(usize),
}

struct Factor {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    iq: usize,
}

impl Factor {
    /// Givens-rotates `d = Jᵀn` so that only its first `iq + 1` entries are
    /// nonzero and appends the new column to `R`. Returns `false` when the
    /// constraint is linearly dependent on the active ones.
    fn add(&mut self, d: &mut DVector<f64>) -> bool {
        let n = self.n;
        for jj in (self.iq + 1..n).rev() {
            let (mut cc, mut ss) = (d[jj - 1], d[jj]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, jj - 1)] = a;
                self.j[(k, jj)] = xny * (t1 + a) - t2;
            }
        }
        let scale = (0..self.iq).fold(1.0f64, |m, i| m.max(self.r[(i, i)].abs()));
        if d[self.iq].abs() <= f64::EPSILON * scale * 10.0 {
            return false;
        }
        for i in 0..=self.iq {
            self.r[(i, self.iq)] = d[i];
        }
        self.iq += 1;
        true
    }

    /// Removes active column `qq` and restores the triangular form.
    fn drop(&mut self, qq: usize) {
        let n = self.n;
        for i in qq..self.iq - 1 {
            for k in 0..n {
                self.r[(k, i)] = self.r[(k, i + 1)];
            }
        }
        for k in 0..n {
            self.r[(k, self.iq - 1)] = 0.0;
        }
        self.iq -= 1;
        for jj in qq..self.iq {
            let (mut cc, mut ss) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = 0.0;
            if cc < 0.0 {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in jj + 1..self.iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                let a = t1 * cc + t2 * ss;
                self.r[(jj, k)] = a;
                self.r[(jj + 1, k)] = xny * (t1 + a) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, jj)] = a;
                self.j[(k, jj + 1)] = xny * (a + t1) - t2;
            }
        }
    }

    /// Primal direction `z` and dual direction `r` for normal `np`.
    fn directions(&self, np: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let d = self.j.tr_mul(np);
        let mut z = DVector::zeros(self.n);
        for jj in self.iq..self.n {
            z.axpy(d[jj], &self.j.column(jj), 1.0);
        }
        let mut r = DVector::zeros(self.iq);
        for i in (0..self.iq).rev() {
            let mut s = d[i];
            for k in i + 1..self.iq {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        (d, z, r)
    }
}

/// Solves the QP. Empty constraint blocks may be passed as `0 × n`
/// matrices. `H` must be symmetric positive definite.
pub fn solve_qp(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Result<QpSolution> {
    let n = h.nrows();
    if h.ncols() != n
        || c.len() != n
        || a_eq.ncols() != n
        || a_in.ncols() != n
        || a_eq.nrows() != b_eq.len()
        || a_in.nrows() != b_in.len()
    {
        return Err(Error::DimensionMismatch("inconsistent QP data".into()));
    }
    let chol = h.clone().cholesky().ok_or(Error::NotPositiveDefinite {
        pivot: 0,
        value: f64::NAN,
    })?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotPositiveDefinite {
            pivot: 0,
            value: f64::NAN,
        })?;
    let mut fac = Factor {
        n,
        j: l_inv.transpose(),
        r: DMatrix::zeros(n, n),
        iq: 0,
    };
    let mut x = -chol.solve(c);
    let mut active: Vec<Row> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let (me, mi) = (a_eq.nrows(), a_in.nrows());
    let row_eq = |i: usize| a_eq.row(i).transpose();
    let row_in = |i: usize| a_in.row(i).transpose();
    let mut iterations = 0;

    for i in 0..me {
        let np = row_eq(i);
        let s = np.dot(&x) - b_eq[i];
        let (mut d, z, r) = fac.directions(&np);
        let zn = z.dot(&np);
        if zn.abs() <= 1e-14 * np.norm_squared().max(1e-300) {
            // dependent equality: consistent or not
            if s.abs() <= 1e-9 * (1.0 + b_eq[i].abs()) {
                continue;
            }
            return Err(Error::QpInfeasible);
        }
        let t = -s / zn;
        x.axpy(t, &z, 1.0);
        for (uk, rk) in u.iter_mut().zip(r.iter()) {
            *uk -= t * rk;
        }
        u.push(t);
        active.push(Row::Eq(i));
        if !fac.add(&mut d) {
            return Err(Error::QpInfeasible);
        }
        iterations += 1;
    }

    let max_iter = 50 * (n + me + mi) + 100;
    loop {
        // most violated inequality
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..mi {
            if active.contains(&Row::In(i)) {
                continue;
            }
            let a = row_in(i);
            let s = b_in[i] - a.dot(&x);
            let tol = 1e-12 * (1.0 + b_in[i].abs() + a.abs().dot(&x.abs()));
            if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((i, s));
            }
        }
        let Some((p, _)) = worst else { break };
        let np = -row_in(p);
        let mut u_plus = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::NoConvergence {
                    iterations,
                    change: f64::NAN,
                });
            }
            let s_p = np.dot(&x) + b_in[p];
            let (mut d, z, r) = fac.directions(&np);
            // partial (dual) step length
            let mut t1 = f64::INFINITY;
            let mut l = None;
            for (k, row) in active.iter().enumerate() {
                if let Row::In(_) = row {
                    if r[k] > 0.0 {
                        let ratio = u[k] / r[k];
                        if ratio < t1 {
                            t1 = ratio;
                            l = Some(k);
                        }
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if z.norm() > 1e-14 * (1.0 + np.norm()) && zn > 0.0 {
                -s_p / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::QpInfeasible);
            }
            for (uk, rk) in u.iter_mut().zip(r.iter()) {
                *uk -= t * rk;
            }
            u_plus += t;
            if t2.is_infinite() {
                let k = l.expect("finite partial step");
                fac.drop(k);
                active.remove(k);
                u.remove(k);
                continue;
            }
            x.axpy(t, &z, 1.0);
            if t == t2 {
                if !fac.add(&mut d) {
                    return Err(Error::QpInfeasible);
                }
                active.push(Row::In(p));
                u.push(u_plus);
                break;
            }
            let k = l.expect("partial step");
            fac.drop(k);
            active.remove(k);
            u.remove(k);
        }
    }

    let mut lambda_eq = DVector::zeros(me);
    let mut lambda_in = DVector::zeros(mi);
    let mut act = Vec::new();
    for (row, &uk) in active.iter().zip(&u) {
        match *row {
            Row::Eq(i) => lambda_eq[i] = -uk,
            Row::In(i) => {
                lambda_in[i] = uk.max(0.0);
                act.push(i);
            }
        }
    }
    act.sort_unstable();
    let objective = 0.5 * x.dot(&(h * &x)) + c.dot(&x);
    Ok(QpSolution {
        x,
        lambda_eq,
        lambda_in,
        objective,
        active: act,
        iterations,
    })
}

/// Inequality-only convenience wrapper.
pub fn solve_qp_ineq(h: &DMatrix<f64>, c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<QpSolution> {
    let n = h.nrows();
    solve_qp(h, c, &DMatrix::zeros(0, n), &DVector::zeros(0), a, b)
}

/// Largest violation of the KKT conditions of a QP solution.
pub fn qp_kkt_residual(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    sol: &QpSolution,
) -> f64 {
    let grad = h * &sol.x + c + a_eq.tr_mul(&sol.lambda_eq) + a_in.tr_mul(&sol.lambda_in);
    let mut res = grad.amax();
    if a_eq.nrows() > 0 {
        res = res.max((a_eq * &sol.x - b_eq).amax());
    }
    for i in 0..a_in.nrows() {
        let s = a_in.row(i).dot(&sol.x.transpose()) - b_in[i];
        res = res
            .max(s.max(0.0))
            .max((sol.lambda_in[i] * s).abs())
            .max(-sol.lambda_in[i]);
    }
    res
}
