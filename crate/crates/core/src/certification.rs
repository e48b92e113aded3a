//! A-posteriori error bounds for reduced states and sensitivities.
//!
//! For a multi-index `α` with reduced approximation `u_ℓ^α`, the residual
//! `r_α = ∂^α f − Σ_{β<α} C(α,β) ∂^{α−β}K u_ℓ^β − K u_ℓ^α` gives
//! `‖u^α − u_ℓ^α‖_W ≤ Δ_α = (‖r_α‖' + Σ_{β<α} C(α,β) γ_{α−β} Δ_β) / α_LB(p)`.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::affine::{AffineModel, MultiIndex, Var};
use crate::error::{Error, Result};
use crate::fem::{smallest_generalized_eigenpair, SparseCholesky, SparseMatrix};
use crate::pod::{PodBasis, ReducedSolver};
use crate::sensitivity::recursion_terms;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConstants {
    /// Lower bound of the coercivity constant of `a(·,·;p̄)` in the W-norm.
    pub alpha_ref: f64,
    /// Upper bound of `Σ_q |a_q(u, v)|` relative to `‖u‖_W ‖v‖_W`.
    pub gamma_ref: f64,
}

/// Bounds at one parameter point, keyed by sensitivity multi-index.
#[derive(Debug, Clone)]
pub struct ErrorBound {
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
    pub alpha_lb: f64,
    pub residuals: BTreeMap<MultiIndex, f64>,
    pub bounds: BTreeMap<MultiIndex, f64>,
    /// Reduced coefficients of every certified index.
    pub coefficients: BTreeMap<MultiIndex, DVector<f64>>,
}

impl ErrorBound {
    pub fn get(&self, alpha: &MultiIndex) -> Result<f64> {
        self.bounds
            .get(alpha)
            .copied()
            .ok_or_else(|| Error::MissingSensitivity(alpha.to_string()))
    }

    /// `bound / true_error` for a known error.
    pub fn effectivity(&self, alpha: &MultiIndex, true_error: f64) -> Result<f64> {
        Ok(self.get(alpha)? / true_error)
    }
}

#[derive(Debug, Clone)]
pub struct Certifier {
    constants: StabilityConstants,
    w: SparseMatrix,
    w_chol: SparseCholesky,
    reference: Vec<f64>,
}

impl Certifier {
    /// Computes `α_ref` once from the pencil `(K(p̄), W)`. The eigenvalue
    /// estimate is lowered by its residual so that it stays a lower bound.
    /// `γ_ref = 1` because `W = K(p̄) + M` dominates every `K_q`.
    pub fn new(model: &AffineModel) -> Result<Self> {
        let k_ref = model.eval_operator(&model.reference)?;
        let est = smallest_generalized_eigenpair(&k_ref, &model.w)?;
        let alpha_ref = est.lower();
        if !(alpha_ref > 0.0) {
            return Err(Error::NotPositiveDefinite {
                pivot: 0,
                value: alpha_ref,
            });
        }
        Ok(Self {
            constants: StabilityConstants {
                alpha_ref,
                gamma_ref: 1.0,
            },
            w: model.w.clone(),
            w_chol: SparseCholesky::factor(&model.w)?,
            reference: model.reference.clone(),
        })
    }

    pub fn constants(&self) -> StabilityConstants {
        self.constants
    }

    pub fn w_factor(&self) -> &SparseCholesky {
        &self.w_chol
    }

    /// `α_LB(p)·α_ref` with `α_LB(p) = min_q Θ_q(p)/Θ_q(p̄)`.
    pub fn coercivity_lower_bound(&self, model: &AffineModel, p: &[f64]) -> Result<f64> {
        Ok(theta_ratio_extremes(model, p, &self.reference)?.0 * self.constants.alpha_ref)
    }

    /// Order 0: `max_q Θ_q(p)/Θ_q(p̄) · γ_ref`. Order `k ≥ 1` in direction
    /// `i`: `max_q |∂^k Θ_q / ∂p_i^k| · γ_ref`.
    pub fn continuity_upper_bound(&self, model: &AffineModel, p: &[f64], order: usize, i: usize) -> Result<f64> {
        if order == 0 {
            return Ok(theta_ratio_extremes(model, p, &self.reference)?.1 * self.constants.gamma_ref);
        }
        if order > 2 {
            return Err(Error::UnsupportedOrder(order));
        }
        self.continuity_of_derivative(model, p, &model.index(Var::Design(i), order as u8))
    }

    /// Continuity bound of `∂^γ a(·,·;p)` for a nonzero multi-index `γ`.
    pub fn continuity_of_derivative(&self, model: &AffineModel, p: &[f64], gamma: &MultiIndex) -> Result<f64> {
        let w = model.operator_weights(p, gamma)?;
        Ok(w.iter().fold(0.0f64, |m, x| m.max(x.abs())) * self.constants.gamma_ref)
    }

    /// `√(ρᵀ W⁻¹ ρ)`.
    pub fn residual_dual_norm(&self, residual: &DVector<f64>) -> f64 {
        residual_dual_norm_with(&self.w_chol, residual)
    }

    /// Full-order residual `r_α` of the reduced approximation.
    pub fn residual(
        &self,
        model: &AffineModel,
        basis: &PodBasis,
        p: &[f64],
        phi: &[f64],
        alpha: &MultiIndex,
        coefficients: &BTreeMap<MultiIndex, DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let mut rho = model.rhs_derivative(p, phi, alpha)?;
        let x = coefficients
            .get(alpha)
            .ok_or_else(|| Error::MissingSensitivity(alpha.to_string()))?;
        let k = model.eval_operator(p)?;
        rho -= k.mul_vec(&basis.lift(x));
        for (gamma, beta, c) in recursion_terms(alpha) {
            let w = model.operator_weights(p, &gamma)?;
            if w.iter().all(|&v| v == 0.0) {
                continue;
            }
            let xb = coefficients
                .get(&beta)
                .ok_or_else(|| Error::MissingSensitivity(beta.to_string()))?;
            rho -= model.stiffness.combine(&w).mul_vec(&basis.lift(xb)) * c;
        }
        Ok(rho)
    }

    /// Bounds for `indices` and every coupled lower index, in graded order.
    pub fn certify(
        &self,
        model: &AffineModel,
        basis: &PodBasis,
        p: &[f64],
        phi: &[f64],
        indices: &[MultiIndex],
    ) -> Result<ErrorBound> {
        let alpha_lb = self.coercivity_lower_bound(model, p)?;
        let solver = ReducedSolver::new(basis, p)?;
        let (coefficients, _) = solver.bundle(phi, indices)?;
        let mut residuals = BTreeMap::new();
        let mut bounds = BTreeMap::new();
        for alpha in coefficients.keys() {
            let r = self.residual_dual_norm(&self.residual(model, basis, p, phi, alpha, &coefficients)?);
            let mut coupling = 0.0;
            for (gamma, beta, c) in recursion_terms(alpha) {
                let g = self.continuity_of_derivative(model, p, &gamma)?;
                if g == 0.0 {
                    continue;
                }
                let db: f64 = bounds[&beta];
                coupling += c * g * db;
            }
            residuals.insert(alpha.clone(), r);
            bounds.insert(alpha.clone(), (r + coupling) / alpha_lb);
        }
        Ok(ErrorBound {
            p: p.to_vec(),
            phi: phi.to_vec(),
            alpha_lb,
            residuals,
            bounds,
            coefficients,
        })
    }

    /// `Δ_u = ‖r_u‖' / α_LB(p)`.
    pub fn state_error_bound(&self, model: &AffineModel, basis: &PodBasis, p: &[f64], phi: &[f64]) -> Result<f64> {
        let zero = model.zero_index();
        let alpha_lb = self.coercivity_lower_bound(model, p)?;
        let solver = ReducedSolver::new(basis, p)?;
        let (coefficients, _) = solver.bundle(phi, std::slice::from_ref(&zero))?;
        let r = self.residual_dual_norm(&self.residual(model, basis, p, phi, &zero, &coefficients)?);
        Ok(r / alpha_lb)
    }

    /// `Δ_{u¹,i} = (‖r_{u¹,i}‖' + γ_{p_i} Δ_u) / α_LB(p)`.
    pub fn sensitivity_error_bound(
        &self,
        model: &AffineModel,
        basis: &PodBasis,
        p: &[f64],
        phi: &[f64],
        i: usize,
    ) -> Result<f64> {
        let zero = model.zero_index();
        let first = model.index(Var::Design(i), 1);
        let alpha_lb = self.coercivity_lower_bound(model, p)?;
        let solver = ReducedSolver::new(basis, p)?;
        let (coefficients, _) = solver.bundle(phi, std::slice::from_ref(&first))?;
        let r0 = self.residual_dual_norm(&self.residual(model, basis, p, phi, &zero, &coefficients)?);
        let delta_u = r0 / alpha_lb;
        let r1 = self.residual_dual_norm(&self.residual(model, basis, p, phi, &first, &coefficients)?);
        let gamma = self.continuity_upper_bound(model, p, 1, i)?;
        Ok((r1 + gamma * delta_u) / alpha_lb)
    }

    /// Bound of order `n` along one variable (`n ≤ 2`).
    pub fn general_error_bound(
        &self,
        model: &AffineModel,
        basis: &PodBasis,
        p: &[f64],
        phi: &[f64],
        wrt: Var,
        n: usize,
    ) -> Result<f64> {
        if n > 2 {
            return Err(Error::UnsupportedOrder(n));
        }
        let alpha = model.index(wrt, n as u8);
        self.certify(model, basis, p, phi, std::slice::from_ref(&alpha))?
            .get(&alpha)
    }

    pub fn w(&self) -> &SparseMatrix {
        &self.w
    }
}

pub fn residual_dual_norm_with(w_chol: &SparseCholesky, residual: &DVector<f64>) -> f64 {
    if residual.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    residual.dot(&w_chol.solve(residual)).max(0.0).sqrt()
}

/// `√(ρᵀ W⁻¹ ρ)` for an explicit `W`.
pub fn residual_dual_norm(residual: &DVector<f64>, w: &SparseMatrix) -> Result<f64> {
    Ok(residual_dual_norm_with(&SparseCholesky::factor(w)?, residual))
}

/// `(min_q, max_q)` of `Θ_q(p)/Θ_q(p̄)`.
fn theta_ratio_extremes(model: &AffineModel, p: &[f64], reference: &[f64]) -> Result<(f64, f64)> {
    model.admissible.check(p)?;
    let phi = vec![0.0; model.n_uncertain];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (q, t) in model.stiffness.thetas().iter().enumerate() {
        let v = t.value(p, &phi);
        let r = t.value(reference, &phi);
        if !(v > 0.0) || !(r > 0.0) {
            return Err(Error::NonPositiveTheta {
                index: q,
                value: v.min(r),
            });
        }
        lo = lo.min(v / r);
        hi = hi.max(v / r);
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_norm_identity_weight() {
        let r = DVector::from_vec(vec![3.0, 4.0]);
        assert!((residual_dual_norm(&r, &SparseMatrix::identity(2)).unwrap() - 5.0).abs() < 1e-15);
        assert_eq!(
            residual_dual_norm(&DVector::zeros(2), &SparseMatrix::identity(2)).unwrap(),
            0.0
        );
    }
}
