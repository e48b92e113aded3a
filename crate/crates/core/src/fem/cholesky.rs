//! Envelope Cholesky factorization with reverse Cuthill–McKee ordering.
//!
//! The permuted matrix `P A Pᵀ = L Lᵀ` is stored row by row, each row
//! holding the entries from its first structural nonzero up to the
//! diagonal. On FE meshes RCM keeps the envelope close to the mesh width.

use std::collections::VecDeque;

use nalgebra::DVector;

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// first column index stored for each row of `L`
    first: Vec<usize>,
    /// start offset of each row inside `data`
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "Cholesky of {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for (j, _) in a.row(old) {
                let nj = inv[j];
                if nj < first[new] {
                    first[new] = nj;
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; offset[n]];
        for (new, &old) in perm.iter().enumerate() {
            for (j, v) in a.row(old) {
                let nj = inv[j];
                if nj <= new {
                    data[offset[new] + nj - first[new]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = offset[i];
            for j in fi..i {
                let fj = first[j];
                let start = fi.max(fj);
                let row_j = offset[j];
                let li = &data[row_i + start - fi..row_i + j - fi];
                let lj = &data[row_j + start - fj..row_j + j - fj];
                let dot: f64 = li.iter().zip(lj).map(|(x, y)| x * y).sum();
                let diag_j = data[row_j + j - fj];
                data[row_i + j - fi] = (data[row_i + j - fi] - dot) / diag_j;
            }
            let sq: f64 = data[row_i..row_i + i - fi].iter().map(|x| x * x).sum();
            let d = data[row_i + i - fi] - sq;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: perm[i],
                    value: d,
                });
            }
            data[row_i + i - fi] = d.sqrt();
        }
        Ok(Self {
            n,
            perm,
            first,
            offset,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[self.offset[i] + j - self.first[i]]
    }

    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i] + i - fi];
            let dot: f64 = row.iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / self.l(i, i);
        }
    }

    fn backward(&self, y: &mut [f64]) {
        for i in (0..self.n).rev() {
            y[i] /= self.l(i, i);
            let xi = y[i];
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i] + i - fi];
            for (k, lk) in row.iter().enumerate() {
                y[fi + k] -= lk * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = DVector::zeros(self.n);
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// With `A = Bᵀ B` where `B = Lᵀ P`, returns `B u`.
    pub fn apply_factor(&self, u: &DVector<f64>) -> DVector<f64> {
        let pu: Vec<f64> = self.perm.iter().map(|&old| u[old]).collect();
        let mut out = DVector::zeros(self.n);
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..=i {
                out[j] += self.l(i, j) * pu[i];
            }
        }
        out
    }

    /// Inverse of [`Self::apply_factor`]: returns `B⁻¹ y`.
    pub fn solve_factor(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut z: Vec<f64> = y.iter().copied().collect();
        self.backward(&mut z);
        let mut x = DVector::zeros(self.n);
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = z[new];
        }
        x
    }
}

/// Reverse Cuthill–McKee ordering of the symmetric pattern of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .expect("unvisited node");
        let start = pseudo_peripheral(seed, &adj, &degree);
        let mut queue = VecDeque::new();
        queue.push_back(start);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> Vec<usize> {
    let mut level = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::new();
    level[start] = 0;
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    level
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(node, adj);
        let max_level = level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
        if max_level <= ecc && node != seed {
            break;
        }
        ecc = max_level;
        node = (0..adj.len())
            .filter(|&i| level[i] == max_level)
            .min_by_key(|&i| degree[i])
            .unwrap_or(node);
    }
    node
}

/// Relative residual `‖A x − b‖₂ / ‖b‖₂` (zero when `b = 0` and `x = 0`).
pub fn relative_residual(a: &SparseMatrix, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let r = a.mul_vec(x) - b;
    let nb = b.norm();
    if nb == 0.0 {
        r.norm()
    } else {
        r.norm() / nb
    }
}

/// Solves an SPD system, refining iteratively until the relative residual
/// drops below `tol`.
pub fn solve_sparse(a: &SparseMatrix, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for {}x{} matrix",
            b.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    let chol = SparseCholesky::factor(a)?;
    solve_with_factor(a, &chol, b, tol)
}

/// Same as [`solve_sparse`] with a precomputed factorization of `a`.
pub fn solve_with_factor(a: &SparseMatrix, chol: &SparseCholesky, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let mut x = chol.solve(b);
    let mut res = relative_residual(a, &x, b);
    for _ in 0..3 {
        if res <= tol {
            break;
        }
        let r = b - a.mul_vec(&x);
        x += chol.solve(&r);
        res = relative_residual(a, &x, b);
    }
    if res <= tol {
        Ok(x)
    } else {
        Err(Error::SolveTolerance { residual: res, tol })
    }
}
