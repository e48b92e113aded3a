//! Extreme eigenvalues of symmetric-definite pencils `A x = λ B x`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::cholesky::SparseCholesky;
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EigenEstimate {
    pub value: f64,
    /// `‖A x − θ B x‖_{B⁻¹} / ‖x‖_B`; some eigenvalue lies within this
    /// distance of `value`.
    pub residual: f64,
    pub vector: DVector<f64>,
    pub iterations: usize,
}

impl EigenEstimate {
    pub fn lower(&self) -> f64 {
        self.value - self.residual
    }
}

const BLOCK: usize = 8;
const MAX_ITER: usize = 1000;

/// Smallest eigenvalue of the pencil `(A, B)`, relative accuracy ~1e-10.
pub fn smallest_generalized_eigenvalue(a: &SparseMatrix, b: &SparseMatrix) -> Result<f64> {
    Ok(smallest_generalized_eigenpair(a, b)?.value)
}

/// Block inverse iteration with Rayleigh–Ritz projection.
pub fn smallest_generalized_eigenpair(a: &SparseMatrix, b: &SparseMatrix) -> Result<EigenEstimate> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "pencil {}x{} / {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let b_chol = SparseCholesky::factor(b)?;
    let shifted = shifted_factor(a, b)?;

    let m = BLOCK.min(n);
    let mut x = DMatrix::from_fn(n, m, |i, k| {
        if k == 0 {
            1.0
        } else {
            ((i + 1) as f64 * (k as f64 * 0.61803 + 0.3)).sin()
        }
    });
    let mut last = f64::NAN;
    for it in 1..=MAX_ITER {
        let bx = b.mul_dense(&x);
        let mut y = DMatrix::zeros(n, m);
        for k in 0..m {
            y.set_column(k, &shifted.solve(&bx.column(k).into_owned()));
        }
        let (theta, vecs) = rayleigh_ritz(a, b, &y)?;
        x = vecs;
        let x0 = x.column(0).into_owned();
        let r = a.mul_vec(&x0) - b.mul_vec(&x0) * theta[0];
        let res = r.dot(&b_chol.solve(&r)).max(0.0).sqrt();
        let scale = theta[0].abs().max(f64::MIN_POSITIVE);
        let gap = if theta.len() > 1 {
            theta[1] - theta[0]
        } else {
            f64::INFINITY
        };
        let quad = if gap > 0.0 { res * res / gap } else { f64::INFINITY };
        if res <= 1e-11 * scale || quad <= 1e-13 * scale || res == 0.0 {
            return Ok(EigenEstimate {
                value: theta[0],
                residual: res,
                vector: x0,
                iterations: it,
            });
        }
        last = res;
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        change: last,
    })
}

/// Factors `A − σB` with `σ = 0` when possible, otherwise with a negative
/// shift large enough to make it definite.
fn shifted_factor(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseCholesky> {
    if let Ok(c) = SparseCholesky::factor(a) {
        return Ok(c);
    }
    let n = a.nrows();
    let mut s = (0..n)
        .map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>() / b.get(i, i).max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max)
        .max(1.0);
    for _ in 0..60 {
        let shifted = a.linear_combination(1.0, b, s)?;
        if let Ok(c) = SparseCholesky::factor(&shifted) {
            return Ok(c);
        }
        s *= 4.0;
    }
    Err(Error::NotPositiveDefinite { pivot: 0, value: -s })
}

/// B-orthonormalises the span of `y` and returns sorted Ritz values and vectors.
fn rayleigh_ritz(a: &SparseMatrix, b: &SparseMatrix, y: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let g = y.transpose() * b.mul_dense(y);
    let g = (&g + g.transpose()) * 0.5;
    let eg = SymmetricEigen::new(g);
    let gmax = eg.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..eg.eigenvalues.len())
        .filter(|&k| eg.eigenvalues[k] > 1e-13 * gmax)
        .collect();
    if keep.is_empty() {
        return Err(Error::NoConvergence {
            iterations: 0,
            change: f64::NAN,
        });
    }
    let mut q = DMatrix::zeros(y.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let col = y * eg.eigenvectors.column(k) / eg.eigenvalues[k].sqrt();
        q.set_column(c, &col);
    }
    let h = q.transpose() * a.mul_dense(&q);
    let h = (&h + h.transpose()) * 0.5;
    let eh = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eh.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eh.eigenvalues[i].total_cmp(&eh.eigenvalues[j]));
    let theta = order.iter().map(|&k| eh.eigenvalues[k]).collect();
    let mut x = DMatrix::zeros(y.nrows(), y.ncols());
    for (c, &k) in order.iter().enumerate() {
        x.set_column(c, &(&q * eh.eigenvectors.column(k)));
    }
    // pad a rank-deficient block with perturbed copies
    for c in order.len()..y.ncols() {
        let mut v = x.column(c % order.len()).into_owned();
        for i in 0..v.len() {
            v[i] += 1e-3 * ((i * (c + 3)) as f64).cos();
        }
        x.set_column(c, &v);
    }
    Ok((theta, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn equal_and_scaled_pencils() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = SparseMatrix::from_dense(&random_spd(&mut rng, 12));
        let l = smallest_generalized_eigenvalue(&b, &b).unwrap();
        assert!((l - 1.0).abs() < 1e-10);
        let l2 = smallest_generalized_eigenvalue(&b.scaled(2.0), &b).unwrap();
        assert!((l2 - 2.0).abs() < 1e-10);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [5, 30, 100] {
            let a = random_spd(&mut rng, n);
            let b = random_spd(&mut rng, n);
            let lb = b.clone().cholesky().unwrap().l();
            let li = lb.clone().try_inverse().unwrap();
            let c = &li * &a * li.transpose();
            let oracle = SymmetricEigen::new((&c + c.transpose()) * 0.5).eigenvalues.min();
            let got =
                smallest_generalized_eigenpair(&SparseMatrix::from_dense(&a), &SparseMatrix::from_dense(&b)).unwrap();
            assert!(
                (got.value - oracle).abs() <= 1e-8 * oracle,
                "n={n}: {} vs {oracle}",
                got.value
            );
            assert!(got.lower() <= oracle * (1.0 + 1e-12));
        }
    }

    #[test]
    fn indefinite_a_uses_shift() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 1.0, 3.0]));
        let b = DMatrix::identity(3, 3);
        let l = smallest_generalized_eigenvalue(&SparseMatrix::from_dense(&a), &SparseMatrix::from_dense(&b)).unwrap();
        assert!((l + 2.0).abs() < 1e-10);
    }
}
