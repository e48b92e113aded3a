//! W-weighted proper orthogonal decomposition and the projected
//! (reduced) affine system.
//!
//! With `W = Bᵀ B` (`B = Lᵀ P` from the sparse Cholesky factor) the POD
//! problem in the `W` inner product is the ordinary SVD of the weighted
//! snapshot matrix `Y = B U diag(√β)`: `ψ_i = B⁻¹ q_i` for the left singular
//! vectors `q_i`, and `λ_i = σ_i²`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::affine::{AdmissibleSet, AffineModel, MultiIndex, ThetaFunction};
use crate::error::{Error, Result};
use crate::fem::{SparseCholesky, SparseMatrix};
use crate::sensitivity::{recursion_terms, SensitivityBundle};

/// Eigenvalues below this fraction of the largest are treated as zero
/// (singular values below 1e-10 of the largest).
pub const RANK_CUTOFF: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotTag {
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
    pub index: MultiIndex,
}

#[derive(Debug, Clone, Default)]
pub struct SnapshotSet {
    columns: Vec<DVector<f64>>,
    weights: Vec<f64>,
    tags: Vec<SnapshotTag>,
}

impl SnapshotSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, u: DVector<f64>, beta: f64, tag: SnapshotTag) -> Result<()> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidCoefficient(format!("snapshot weight {beta}")));
        }
        if let Some(first) = self.columns.first() {
            if first.len() != u.len() {
                return Err(Error::DimensionMismatch(format!(
                    "snapshot of length {} in a set of length {}",
                    u.len(),
                    first.len()
                )));
            }
        }
        self.columns.push(u);
        self.weights.push(beta);
        self.tags.push(tag);
        Ok(())
    }

    /// Adds every vector of a bundle with unit weight.
    pub fn push_bundle(&mut self, bundle: &SensitivityBundle) -> Result<()> {
        for (idx, u) in &bundle.vectors {
            self.push(
                u.clone(),
                1.0,
                SnapshotTag {
                    p: bundle.p.clone(),
                    phi: bundle.phi.clone(),
                    index: idx.clone(),
                },
            )?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn columns(&self) -> &[DVector<f64>] {
        &self.columns
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tags(&self) -> &[SnapshotTag] {
        &self.tags
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankSelection {
    /// Numerical rank.
    Full,
    Fixed(usize),
    /// Smallest `ℓ` with relative tail energy `Σ_{i>ℓ} λ_i / Σ λ_i ≤ tol`.
    Energy(f64),
}

/// Reduced affine components `ψᵀ K_q ψ`, `ψᵀ f_q`, `ψᵀ 𝔼`, with the
/// coefficient functions needed to evaluate them online.
#[derive(Debug, Clone)]
pub struct ReducedComponents {
    pub stiffness_thetas: Vec<ThetaFunction>,
    pub stiffness: Vec<DMatrix<f64>>,
    pub load_thetas: Vec<ThetaFunction>,
    pub load: Vec<DVector<f64>>,
    pub output: DVector<f64>,
    pub admissible: AdmissibleSet,
    pub n_design: usize,
    pub n_uncertain: usize,
}

#[derive(Debug, Clone)]
pub struct PodBasis {
    psi: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    rank: usize,
    reduced: Option<ReducedComponents>,
}

pub fn compute_pod(snapshots: &SnapshotSet, w: &SparseMatrix, rank: RankSelection) -> Result<PodBasis> {
    let chol = SparseCholesky::factor(w)?;
    compute_pod_with_factor(snapshots, &chol, rank)
}

/// Same as [`compute_pod`] with a precomputed Cholesky factor of `W`.
pub fn compute_pod_with_factor(
    snapshots: &SnapshotSet,
    w_chol: &SparseCholesky,
    rank: RankSelection,
) -> Result<PodBasis> {
    let n = snapshots.len();
    if n == 0 {
        return Err(Error::EmptySnapshots);
    }
    let dim = snapshots.dim();
    if dim != w_chol.dim() {
        return Err(Error::DimensionMismatch(format!(
            "snapshots of length {dim} with a {}x{} weight matrix",
            w_chol.dim(),
            w_chol.dim()
        )));
    }
    let mut y = DMatrix::zeros(dim, n);
    for (j, (u, &b)) in snapshots.columns().iter().zip(snapshots.weights()).enumerate() {
        y.set_column(j, &(w_chol.apply_factor(u) * b.sqrt()));
    }
    let (q, r) = if dim >= n {
        let qr = y.qr();
        (qr.q(), qr.r())
    } else {
        (DMatrix::identity(dim, dim), y)
    };
    let svd = r.svd(true, false);
    let u_r = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| svd.singular_values[k].powi(2)).collect();
    let lambda1 = eigenvalues.first().copied().unwrap_or(0.0);
    let numerical_rank = eigenvalues
        .iter()
        .filter(|&&l| l > RANK_CUTOFF * lambda1 && l > 0.0)
        .count();
    if numerical_rank == 0 {
        return Err(Error::EmptySnapshots);
    }
    let ell = match rank {
        RankSelection::Full => numerical_rank,
        RankSelection::Fixed(l) if l == 0 || l > numerical_rank => {
            return Err(Error::RankExceeded {
                requested: l,
                rank: numerical_rank,
            })
        }
        RankSelection::Fixed(l) => l,
        RankSelection::Energy(tol) => {
            let total: f64 = eigenvalues.iter().sum();
            let mut l = numerical_rank;
            for k in 1..=numerical_rank {
                if eigenvalues[k..].iter().sum::<f64>() <= tol * total {
                    l = k;
                    break;
                }
            }
            l
        }
    };
    let mut psi = DMatrix::zeros(dim, ell);
    for (c, &k) in order.iter().take(ell).enumerate() {
        let qk = &q * u_r.column(k);
        psi.set_column(c, &w_chol.solve_factor(&qk));
    }
    Ok(PodBasis {
        psi,
        eigenvalues,
        rank: numerical_rank,
        reduced: None,
    })
}

impl PodBasis {
    pub fn len(&self) -> usize {
        self.psi.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Numerical rank of the snapshot set.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `Σ_{i>ℓ} λ_i`.
    pub fn tail_energy(&self, ell: usize) -> f64 {
        self.eigenvalues.iter().skip(ell).sum()
    }

    pub fn reduced(&self) -> Result<&ReducedComponents> {
        self.reduced
            .as_ref()
            .ok_or_else(|| Error::DimensionMismatch("basis has not been projected".into()))
    }

    /// The first `ell` basis functions; projected components are sliced too.
    pub fn truncated(&self, ell: usize) -> Result<PodBasis> {
        if ell == 0 || ell > self.len() {
            return Err(Error::RankExceeded {
                requested: ell,
                rank: self.len(),
            });
        }
        let reduced = self.reduced.as_ref().map(|r| ReducedComponents {
            stiffness: r
                .stiffness
                .iter()
                .map(|k| k.view((0, 0), (ell, ell)).into_owned())
                .collect(),
            load: r.load.iter().map(|f| f.rows(0, ell).into_owned()).collect(),
            output: r.output.rows(0, ell).into_owned(),
            ..r.clone()
        });
        Ok(PodBasis {
            psi: self.psi.columns(0, ell).into_owned(),
            eigenvalues: self.eigenvalues.clone(),
            rank: self.rank,
            reduced,
        })
    }

    /// `Σ_i c_i ψ_i`.
    pub fn lift(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.psi * coeffs
    }

    /// Eigenvalue spectrum as CSV (index, λ, cumulative energy fraction).
    pub fn spectrum_csv(&self) -> String {
        let total: f64 = self.eigenvalues.iter().sum();
        let mut s = String::from("index,lambda,cumulative_energy\n");
        let mut acc = 0.0;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            acc += l;
            writeln!(s, "{},{:.14e},{:.14e}", i + 1, l, acc / total).unwrap();
        }
        s
    }
}

/// Projects every affine component onto the basis.
pub fn project_affine(model: &AffineModel, basis: &PodBasis) -> Result<PodBasis> {
    if basis.dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "basis of length {} for a model with {} dofs",
            basis.dim(),
            model.dim()
        )));
    }
    let psi = &basis.psi;
    let psi_t = psi.transpose();
    let stiffness = model
        .stiffness
        .components()
        .iter()
        .map(|k| {
            let m = &psi_t * k.mul_dense(psi);
            (&m + m.transpose()) * 0.5
        })
        .collect();
    let load = model.load.components().iter().map(|f| &psi_t * f).collect();
    let reduced = ReducedComponents {
        stiffness_thetas: model.stiffness.thetas().to_vec(),
        stiffness,
        load_thetas: model.load.thetas().to_vec(),
        load,
        output: &psi_t * &model.output,
        admissible: model.admissible.clone(),
        n_design: model.n_design,
        n_uncertain: model.n_uncertain,
    };
    Ok(PodBasis {
        reduced: Some(reduced),
        ..basis.clone()
    })
}

impl ReducedComponents {
    pub fn dim(&self) -> usize {
        self.output.len()
    }

    pub fn zero_index(&self) -> MultiIndex {
        MultiIndex::zero(self.n_design, self.n_uncertain)
    }

    pub fn operator_weights(&self, p: &[f64], alpha: &MultiIndex) -> Result<Vec<f64>> {
        if alpha.uncertain_order() > 0 {
            return Ok(vec![0.0; self.stiffness.len()]);
        }
        let phi = vec![0.0; self.n_uncertain];
        self.stiffness_thetas
            .iter()
            .map(|t| t.derivative(alpha, p, &phi))
            .collect()
    }

    pub fn operator(&self, weights: &[f64]) -> DMatrix<f64> {
        let l = self.dim();
        let mut k = DMatrix::zeros(l, l);
        for (w, kq) in weights.iter().zip(&self.stiffness) {
            if *w != 0.0 {
                k += kq * *w;
            }
        }
        k
    }

    pub fn rhs(&self, p: &[f64], phi: &[f64], alpha: &MultiIndex) -> Result<DVector<f64>> {
        let mut f = DVector::zeros(self.dim());
        for (t, fq) in self.load_thetas.iter().zip(&self.load) {
            let w = t.derivative(alpha, p, phi)?;
            if w != 0.0 {
                f.axpy(w, fq, 1.0);
            }
        }
        Ok(f)
    }
}

/// Reduced operator at one design point, factorized once.
#[derive(Debug, Clone)]
pub struct ReducedSolver<'a> {
    reduced: &'a ReducedComponents,
    p: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> ReducedSolver<'a> {
    pub fn new(basis: &'a PodBasis, p: &[f64]) -> Result<Self> {
        let reduced = basis.reduced()?;
        reduced.admissible.check(p)?;
        let phi = vec![0.0; reduced.n_uncertain];
        let w: Vec<f64> = reduced.stiffness_thetas.iter().map(|t| t.value(p, &phi)).collect();
        if let Some((q, &v)) = w.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveTheta { index: q, value: v });
        }
        let k = reduced.operator(&w);
        let chol = k.cholesky().ok_or(Error::SingularReduced)?;
        Ok(Self {
            reduced,
            p: p.to_vec(),
            chol,
        })
    }

    pub fn components(&self) -> &ReducedComponents {
        self.reduced
    }

    pub fn solve_index(
        &self,
        phi: &[f64],
        alpha: &MultiIndex,
        lower: &BTreeMap<MultiIndex, DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let mut rhs = self.reduced.rhs(&self.p, phi, alpha)?;
        for (gamma, beta, c) in recursion_terms(alpha) {
            let w = self.reduced.operator_weights(&self.p, &gamma)?;
            if w.iter().all(|&x| x == 0.0) {
                continue;
            }
            let u = lower
                .get(&beta)
                .ok_or_else(|| Error::MissingSensitivity(beta.to_string()))?;
            rhs -= self.reduced.operator(&w) * u * c;
        }
        let x = self.chol.solve(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularReduced);
        }
        Ok(x)
    }

    /// Reduced coefficients for `indices` and every coupled lower index.
    pub fn bundle(&self, phi: &[f64], indices: &[MultiIndex]) -> Result<(BTreeMap<MultiIndex, DVector<f64>>, usize)> {
        let all = crate::sensitivity::closure(indices);
        let mut out = BTreeMap::new();
        for alpha in &all {
            let x = self.solve_index(phi, alpha, &out)?;
            out.insert(alpha.clone(), x);
        }
        Ok((out, all.len()))
    }
}

/// Reduced coefficients and the lifted FE vector of the state.
pub fn solve_reduced_state(basis: &PodBasis, p: &[f64], phi: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
    let solver = ReducedSolver::new(basis, p)?;
    let x = solver.solve_index(phi, &solver.components().zero_index(), &BTreeMap::new())?;
    let lifted = basis.lift(&x);
    Ok((x, lifted))
}

pub fn solve_reduced_sensitivity(
    basis: &PodBasis,
    p: &[f64],
    phi: &[f64],
    lower: &BTreeMap<MultiIndex, DVector<f64>>,
    alpha: &MultiIndex,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let solver = ReducedSolver::new(basis, p)?;
    let x = solver.solve_index(phi, alpha, lower)?;
    let lifted = basis.lift(&x);
    Ok((x, lifted))
}
