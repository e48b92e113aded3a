//! Global maximisation of a quadratic model over a scaled Euclidean ball:
//!
//! `max g + bᵀδ + ½δᵀHδ  s.t.  ‖D⁻¹δ‖₂ ≤ 1`.
//!
//! A global solution is characterised by `(−H + λD⁻²)δ = b`, `λ ≥ 0`,
//! `λ(‖D⁻¹δ‖ − 1) = 0` and `−H + λD⁻² ⪰ 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticWorstCaseModel {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl QuadraticWorstCaseModel {
    pub fn eval(&self, delta: &DVector<f64>) -> f64 {
        self.value + self.grad.dot(delta) + 0.5 * delta.dot(&(&self.hess * delta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrsSolution {
    pub delta: DVector<f64>,
    pub lambda: f64,
    pub value: f64,
}

/// Solves the subproblem. One dimension is handled in closed form; larger
/// problems use the eigendecomposition of `DHD` and a safeguarded Newton
/// iteration on the secular equation, with an eigenvector step in the
/// hard case.
pub fn solve_trust_region_subproblem(model: &QuadraticWorstCaseModel, d: &[f64]) -> TrsSolution {
    let n = model.grad.len();
    assert_eq!(d.len(), n);
    assert_eq!(model.hess.nrows(), n);
    if n == 1 {
        return scalar_case(model, d[0]);
    }
    let dm = DMatrix::from_diagonal(&DVector::from_column_slice(d));
    let a = &dm * &model.hess * &dm;
    let a = (&a + a.transpose()) * 0.5;
    let bt = &dm * &model.grad;
    let eig = SymmetricEigen::new(a);
    let (nu, q) = (eig.eigenvalues, eig.eigenvectors);
    let beta = q.tr_mul(&bt);
    let imax = nu.imax();
    let numax = nu[imax];
    let y_of = |lam: f64| -> DVector<f64> {
        let mut c = DVector::zeros(n);
        for i in 0..n {
            let den = lam - nu[i];
            c[i] = if den > 0.0 { beta[i] / den } else { 0.0 };
        }
        &q * c
    };
    let scale = beta.norm().max(nu.amax()).max(1e-300);
    let finish = |y: DVector<f64>, lam: f64| {
        let delta = &dm * y;
        TrsSolution {
            value: model.eval(&delta),
            delta,
            lambda: lam,
        }
    };

    // interior maximiser when the model is concave
    if numax < 0.0 {
        let y0 = y_of(0.0);
        if y0.norm() <= 1.0 {
            return finish(y0, 0.0);
        }
    }
    let lo0 = numax.max(0.0);
    // hard case: no gradient component along the top eigenspace
    let tol_comp = 1e-12 * scale;
    let top: Vec<usize> = (0..n).filter(|&i| (nu[i] - numax).abs() <= 1e-12 * scale).collect();
    if numax >= 0.0 && top.iter().all(|&i| beta[i].abs() <= tol_comp) {
        let mut c = DVector::zeros(n);
        for i in 0..n {
            if !top.contains(&i) {
                c[i] = beta[i] / (numax - nu[i]);
            }
        }
        let norm2 = c.norm_squared();
        if norm2 <= 1.0 {
            c[top[0]] = (1.0 - norm2).sqrt();
            return finish(&q * c, numax);
        }
    }
    // secular equation 1/‖y(λ)‖ − 1 = 0, increasing in λ on (lo0, ∞)
    let norm_at = |lam: f64| -> f64 {
        (0..n)
            .map(|i| {
                let den = lam - nu[i];
                (beta[i] / den).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut lo = lo0;
    let mut hi = lo0 + beta.norm() + 1e-300;
    let mut lam = hi;
    for _ in 0..200 {
        let nrm = norm_at(lam);
        let f = 1.0 / nrm - 1.0;
        if f.abs() <= 1e-15 {
            break;
        }
        if f < 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        // Newton on 1/‖y‖: derivative = Σ β²/(λ−ν)³ / ‖y‖³
        let dsum: f64 = (0..n).map(|i| beta[i] * beta[i] / (lam - nu[i]).powi(3)).sum();
        let df = dsum / nrm.powi(3);
        let mut next = lam - f / df;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - lam).abs() <= 1e-16 * lam.abs().max(1e-300) {
            lam = next;
            break;
        }
        lam = next;
    }
    finish(y_of(lam), lam)
}

fn scalar_case(model: &QuadraticWorstCaseModel, d: f64) -> TrsSolution {
    let (b, h) = (model.grad[0], model.hess[(0, 0)]);
    let mk = |delta: f64, lambda: f64| TrsSolution {
        delta: DVector::from_vec(vec![delta]),
        lambda,
        value: model.value + b * delta + 0.5 * h * delta * delta,
    };
    if h < 0.0 {
        let s = -b / h;
        if s.abs() <= d {
            return mk(s, 0.0);
        }
    }
    let (vp, vm) = (b * d + 0.5 * h * d * d, -b * d + 0.5 * h * d * d);
    let delta = if vp >= vm { d } else { -d };
    // (−h + λ/d²)δ = b
    let lambda = (d * d * (b / delta + h)).max(0.0);
    mk(delta, lambda)
}

/// Largest violation of the optimality conditions, including the
/// semidefiniteness of `−H + λD⁻²`.
pub fn trs_kkt_residual(model: &QuadraticWorstCaseModel, d: &[f64], sol: &TrsSolution) -> f64 {
    let n = d.len();
    let dinv2 = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / (d[i] * d[i]) } else { 0.0 });
    let shifted = -&model.hess + &dinv2 * sol.lambda;
    let stat = (&shifted * &sol.delta - &model.grad).amax();
    let r = sol
        .delta
        .iter()
        .zip(d)
        .map(|(x, d)| (x / d).powi(2))
        .sum::<f64>()
        .sqrt();
    let comp = (sol.lambda * (r - 1.0)).abs();
    let feas = (r - 1.0).max(0.0);
    let sym = (&shifted + shifted.transpose()) * 0.5;
    let emin = SymmetricEigen::new(sym).eigenvalues.min();
    stat.max(comp)
        .max(feas)
        .max((-emin).max(0.0))
        .max((-sol.lambda).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model1(b: f64, h: f64) -> QuadraticWorstCaseModel {
        QuadraticWorstCaseModel {
            value: 0.0,
            grad: DVector::from_vec(vec![b]),
            hess: DMatrix::from_row_slice(1, 1, &[h]),
        }
    }

    #[test]
    fn concave_interior() {
        let s = solve_trust_region_subproblem(&model1(1.0, -1.0), &[5.0]);
        assert_eq!(s.delta[0], 1.0);
        assert_eq!(s.lambda, 0.0);
        assert_eq!(s.value, 0.5);
    }

    #[test]
    fn convex_boundary() {
        let m = model1(2.0, 1.0);
        let s = solve_trust_region_subproblem(&m, &[1.0]);
        assert_eq!(s.delta[0], 1.0);
        assert_eq!(s.value, 2.5);
        assert_eq!(s.lambda, 3.0);
        assert!(trs_kkt_residual(&m, &[1.0], &s) < 1e-14);
    }

    #[test]
    fn two_dimensional_hard_case() {
        // H = diag(2, 1), b = (0, ½): top eigenvector orthogonal to b
        let m = QuadraticWorstCaseModel {
            value: 0.0,
            grad: DVector::from_vec(vec![0.0, 0.5]),
            hess: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])),
        };
        let s = solve_trust_region_subproblem(&m, &[1.0, 1.0]);
        assert!((s.lambda - 2.0).abs() < 1e-12);
        assert!(trs_kkt_residual(&m, &[1.0, 1.0], &s) < 1e-10);
        // δ = (±√(3/4), ½), value = ¾ + ¼ + ⅛
        assert!((s.value - 1.125).abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_regular_case() {
        let m = QuadraticWorstCaseModel {
            value: 1.0,
            grad: DVector::from_vec(vec![0.3, -0.7]),
            hess: DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, -1.0]),
        };
        let d = [2.0, 0.5];
        let s = solve_trust_region_subproblem(&m, &d);
        assert!(trs_kkt_residual(&m, &d, &s) < 1e-10);
    }
}
