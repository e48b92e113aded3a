//! Full-order state and sensitivity solves.
//!
//! For a derivative multi-index `α` the sensitivity `u^α = ∂^α u` solves
//! `K(p) u^α = ∂^α f − Σ_{β<α} C(α,β) ∂^{α−β}K u^β`. The stiffness does
//! not depend on `φ`, so only `β` sharing the uncertain part of `α` enter.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::affine::{AffineModel, MultiIndex, Var};
use crate::error::{Error, Result};
use crate::fem::cholesky::{solve_with_factor, SparseCholesky};
use crate::fem::SparseMatrix;

/// Lower indices `β < α` whose term `∂^{α−β}K u^β` can be nonzero.
pub fn coupled_lower(alpha: &MultiIndex) -> Vec<MultiIndex> {
    alpha
        .lower()
        .into_iter()
        .filter(|b| b != alpha && b.uncertain == alpha.uncertain)
        .collect()
}

/// `(α − β, β, C(α,β))` for every coupled lower index `β`; shared by the
/// full and reduced solvers.
pub(crate) fn recursion_terms(alpha: &MultiIndex) -> Vec<(MultiIndex, MultiIndex, f64)> {
    coupled_lower(alpha)
        .into_iter()
        .map(|b| {
            let c = alpha.binomial(&b);
            (alpha.minus(&b), b, c)
        })
        .collect()
}

/// Sensitivities computed at one parameter point, keyed by multi-index.
#[derive(Debug, Clone)]
pub struct SensitivityBundle {
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
    pub vectors: BTreeMap<MultiIndex, DVector<f64>>,
}

impl SensitivityBundle {
    pub fn new(p: &[f64], phi: &[f64]) -> Self {
        Self {
            p: p.to_vec(),
            phi: phi.to_vec(),
            vectors: BTreeMap::new(),
        }
    }

    pub fn get(&self, alpha: &MultiIndex) -> Result<&DVector<f64>> {
        self.vectors
            .get(alpha)
            .ok_or_else(|| Error::MissingSensitivity(alpha.to_string()))
    }

    pub fn state(&self) -> Result<&DVector<f64>> {
        let zero = MultiIndex::zero(self.p.len(), self.phi.len());
        self.get(&zero)
    }

    pub fn insert(&mut self, alpha: MultiIndex, u: DVector<f64>) {
        self.vectors.insert(alpha, u);
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// `K(p)` factorized once and reused for every right-hand side at `p`.
#[derive(Debug, Clone)]
pub struct FactorizedOperator {
    p: Vec<f64>,
    k: SparseMatrix,
    chol: SparseCholesky,
    tol: f64,
}

impl FactorizedOperator {
    pub fn new(model: &AffineModel, p: &[f64], tol: f64) -> Result<Self> {
        let k = model.eval_operator(p)?;
        let chol = SparseCholesky::factor(&k)?;
        Ok(Self {
            p: p.to_vec(),
            k,
            chol,
            tol,
        })
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.k
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(DVector::zeros(rhs.len()));
        }
        solve_with_factor(&self.k, &self.chol, rhs, self.tol)
    }

    /// Right-hand side of the sensitivity system for `α`.
    pub fn sensitivity_rhs(
        &self,
        model: &AffineModel,
        phi: &[f64],
        alpha: &MultiIndex,
        lower: &BTreeMap<MultiIndex, DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let mut rhs = model.rhs_derivative(&self.p, phi, alpha)?;
        for (gamma, beta, c) in recursion_terms(alpha) {
            let w = model.operator_weights(&self.p, &gamma)?;
            if w.iter().all(|&x| x == 0.0) {
                continue;
            }
            let u = lower
                .get(&beta)
                .ok_or_else(|| Error::MissingSensitivity(beta.to_string()))?;
            let dk = model.stiffness.combine(&w);
            rhs -= dk.mul_vec(u) * c;
        }
        Ok(rhs)
    }

    pub fn solve_index(
        &self,
        model: &AffineModel,
        phi: &[f64],
        alpha: &MultiIndex,
        lower: &BTreeMap<MultiIndex, DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let rhs = self.sensitivity_rhs(model, phi, alpha, lower)?;
        self.solve(&rhs)
    }

    /// Solves for every index in `indices` (in graded order), adding any
    /// lower index the recursion needs. Returns the bundle and the number
    /// of linear solves performed.
    pub fn bundle(
        &self,
        model: &AffineModel,
        phi: &[f64],
        indices: &[MultiIndex],
    ) -> Result<(SensitivityBundle, usize)> {
        let all = closure(indices);
        let mut bundle = SensitivityBundle::new(&self.p, phi);
        for alpha in &all {
            let u = self.solve_index(model, phi, alpha, &bundle.vectors)?;
            bundle.insert(alpha.clone(), u);
        }
        Ok((bundle, all.len()))
    }
}

/// `indices` together with all lower indices coupled through the recursion,
/// sorted by order.
pub fn closure(indices: &[MultiIndex]) -> Vec<MultiIndex> {
    let mut all: Vec<MultiIndex> = Vec::new();
    let mut stack: Vec<MultiIndex> = indices.to_vec();
    while let Some(a) = stack.pop() {
        if all.contains(&a) {
            continue;
        }
        stack.extend(coupled_lower(&a));
        all.push(a);
    }
    all.sort_by_key(|m| (m.order(), m.clone()));
    all
}

pub fn solve_state(model: &AffineModel, p: &[f64], phi: &[f64], tol: f64) -> Result<DVector<f64>> {
    let op = FactorizedOperator::new(model, p, tol)?;
    op.solve_index(model, phi, &model.zero_index(), &BTreeMap::new())
}

/// One sensitivity solve with caller-supplied lower-order sensitivities.
pub fn solve_sensitivity(
    model: &AffineModel,
    p: &[f64],
    phi: &[f64],
    lower: &BTreeMap<MultiIndex, DVector<f64>>,
    alpha: &MultiIndex,
    tol: f64,
) -> Result<DVector<f64>> {
    let op = FactorizedOperator::new(model, p, tol)?;
    op.solve_index(model, phi, alpha, lower)
}

/// Output `E = 𝔼ᵀu` and its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDerivatives {
    pub value: f64,
    pub grad_p: Vec<f64>,
    pub grad_phi: Vec<f64>,
    pub hess_phi: Option<DMatrix<f64>>,
}

pub fn output_of(model: &AffineModel, bundle: &SensitivityBundle, alpha: &MultiIndex) -> Result<f64> {
    Ok(model.output.dot(bundle.get(alpha)?))
}

/// Value, design gradient and `φ`-gradient are required; the `φ`-Hessian
/// is filled when every second `φ` sensitivity is present.
pub fn output_and_gradients(model: &AffineModel, bundle: &SensitivityBundle) -> Result<OutputDerivatives> {
    let value = output_of(model, bundle, &model.zero_index())?;
    let grad_p = (0..model.n_design)
        .map(|i| output_of(model, bundle, &model.index(Var::Design(i), 1)))
        .collect::<Result<_>>()?;
    let grad_phi = (0..model.n_uncertain)
        .map(|j| output_of(model, bundle, &model.index(Var::Uncertain(j), 1)))
        .collect::<Result<_>>()?;
    let nu = model.n_uncertain;
    let mut hess = DMatrix::zeros(nu, nu);
    let mut complete = true;
    for j in 0..nu {
        for k in 0..nu {
            let idx = model.index(Var::Uncertain(j), 1).with(Var::Uncertain(k));
            match bundle.vectors.get(&idx) {
                Some(u) => hess[(j, k)] = model.output.dot(u),
                None => complete = false,
            }
        }
    }
    Ok(OutputDerivatives {
        value,
        grad_p,
        grad_phi,
        hess_phi: complete.then_some(hess),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{build_benchmark, BenchmarkConfig};

    fn model() -> AffineModel {
        build_benchmark(&BenchmarkConfig::default().with_level(1)).unwrap().0
    }

    #[test]
    fn order_zero_is_the_state() {
        let m = model();
        let p = [15.0, 5.0, 8.0];
        let u = solve_state(&m, &p, &[87.0], 1e-12).unwrap();
        let u0 = solve_sensitivity(&m, &p, &[87.0], &BTreeMap::new(), &m.zero_index(), 1e-12).unwrap();
        assert_eq!(u, u0);
    }

    #[test]
    fn missing_lower_order_is_reported() {
        let m = model();
        let a = m.index(Var::Design(0), 1);
        let err = solve_sensitivity(&m, &[15.0, 5.0, 8.0], &[87.0], &BTreeMap::new(), &a, 1e-12).unwrap_err();
        assert_eq!(err, Error::MissingSensitivity("u".into()));
    }

    #[test]
    fn closure_adds_coupled_lower_indices() {
        let m = model();
        let a = m
            .index(Var::Design(1), 1)
            .with(Var::Uncertain(0))
            .with(Var::Uncertain(0));
        let c = closure(std::slice::from_ref(&a));
        assert_eq!(c.len(), 2);
        assert_eq!(c[0], m.index(Var::Uncertain(0), 2));
        assert_eq!(c[1], a);
    }

    #[test]
    fn output_is_linear_in_the_state() {
        let m = model();
        let mut b = SensitivityBundle::new(&m.reference, &[90.0]);
        for idx in [m.zero_index(), m.index(Var::Uncertain(0), 1)] {
            b.insert(idx, DVector::zeros(m.dim()));
        }
        for i in 0..3 {
            b.insert(m.index(Var::Design(i), 1), DVector::zeros(m.dim()));
        }
        let o = output_and_gradients(&m, &b).unwrap();
        assert_eq!(o.value, 0.0);
        assert!(o.hess_phi.is_none());
        let op = FactorizedOperator::new(&m, &m.reference, 1e-12).unwrap();
        let (bundle, n) = op.bundle(&m, &[90.0], &[m.zero_index()]).unwrap();
        assert_eq!(n, 1);
        let u = bundle.state().unwrap();
        let doubled = m.output.dot(&(u * 2.0));
        assert!((doubled - 2.0 * m.output.dot(u)).abs() < 1e-12);
    }
}
