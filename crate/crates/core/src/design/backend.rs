//! Output evaluation through full or reduced solves.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::affine::{AffineModel, MultiIndex, Var};
use crate::error::Result;
use crate::pod::{PodBasis, ReducedSolver};
use crate::robust::DerivativeLevel;
use crate::sensitivity::{closure, FactorizedOperator};

/// Output `E(p, φ)` and the derivatives a design mode asks for. Unused
/// entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputData {
    pub value: f64,
    pub grad_p: DVector<f64>,
    pub grad_phi: DVector<f64>,
    /// `∂²E/∂φ_j∂p_i` at `(j, i)`.
    pub grad_phi_p: DMatrix<f64>,
    pub hess_phi: DMatrix<f64>,
    /// `∂/∂p_i` of the `φ`-Hessian.
    pub hess_phi_p: Vec<DMatrix<f64>>,
}

pub trait OutputBackend {
    fn n_design(&self) -> usize;
    fn n_uncertain(&self) -> usize;
    fn output(&mut self, p: &[f64], phi: &[f64], level: DerivativeLevel) -> Result<OutputData>;
    /// Linear solves performed so far, one per sensitivity.
    fn solves(&self) -> usize;
}

/// Indices whose outputs `level` needs: value and design gradient, then
/// the `φ`-gradient and its design derivatives, then the `φ`-Hessian and
/// its design derivatives.
pub fn output_indices(n_design: usize, n_uncertain: usize, level: DerivativeLevel) -> Vec<MultiIndex> {
    let zero = MultiIndex::zero(n_design, n_uncertain);
    let p = |i| Var::Design(i);
    let f = |j| Var::Uncertain(j);
    let mut out = vec![zero.clone()];
    out.extend((0..n_design).map(|i| zero.with(p(i))));
    if level == DerivativeLevel::Nominal {
        return out;
    }
    for j in 0..n_uncertain {
        let a = zero.with(f(j));
        out.push(a.clone());
        out.extend((0..n_design).map(|i| a.with(p(i))));
    }
    if level == DerivativeLevel::Quadratic {
        for j in 0..n_uncertain {
            for k in j..n_uncertain {
                let a = zero.with(f(j)).with(f(k));
                out.push(a.clone());
                out.extend((0..n_design).map(|i| a.with(p(i))));
            }
        }
    }
    out
}

fn assemble(
    n_design: usize,
    n_uncertain: usize,
    level: DerivativeLevel,
    value: impl Fn(&MultiIndex) -> f64,
) -> OutputData {
    let (nd, nu) = (n_design, n_uncertain);
    let zero = MultiIndex::zero(nd, nu);
    let mut data = OutputData {
        value: value(&zero),
        grad_p: DVector::from_fn(nd, |i, _| value(&zero.with(Var::Design(i)))),
        grad_phi: DVector::zeros(nu),
        grad_phi_p: DMatrix::zeros(nu, nd),
        hess_phi: DMatrix::zeros(nu, nu),
        hess_phi_p: vec![DMatrix::zeros(nu, nu); nd],
    };
    if level == DerivativeLevel::Nominal {
        return data;
    }
    for j in 0..nu {
        let a = zero.with(Var::Uncertain(j));
        data.grad_phi[j] = value(&a);
        for i in 0..nd {
            data.grad_phi_p[(j, i)] = value(&a.with(Var::Design(i)));
        }
    }
    if level == DerivativeLevel::Quadratic {
        for j in 0..nu {
            for k in j..nu {
                let a = zero.with(Var::Uncertain(j)).with(Var::Uncertain(k));
                let v = value(&a);
                data.hess_phi[(j, k)] = v;
                data.hess_phi[(k, j)] = v;
                for i in 0..nd {
                    let w = value(&a.with(Var::Design(i)));
                    data.hess_phi_p[i][(j, k)] = w;
                    data.hess_phi_p[i][(k, j)] = w;
                }
            }
        }
    }
    data
}

/// Finite element solves with a fresh factorisation per design.
pub struct FullBackend<'a> {
    pub model: &'a AffineModel,
    pub tol: f64,
    solves: usize,
}

impl<'a> FullBackend<'a> {
    pub fn new(model: &'a AffineModel, tol: f64) -> Self {
        Self { model, tol, solves: 0 }
    }
}

impl OutputBackend for FullBackend<'_> {
    fn n_design(&self) -> usize {
        self.model.n_design
    }
    fn n_uncertain(&self) -> usize {
        self.model.n_uncertain
    }
    fn output(&mut self, p: &[f64], phi: &[f64], level: DerivativeLevel) -> Result<OutputData> {
        let op = FactorizedOperator::new(self.model, p, self.tol)?;
        let idx = output_indices(self.model.n_design, self.model.n_uncertain, level);
        let (bundle, n) = op.bundle(self.model, phi, &idx)?;
        self.solves += n;
        let out = &self.model.output;
        Ok(assemble(self.model.n_design, self.model.n_uncertain, level, |a| {
            bundle.vectors.get(a).map_or(0.0, |u| out.dot(u))
        }))
    }
    fn solves(&self) -> usize {
        self.solves
    }
}

/// Galerkin solves in a POD space.
pub struct RomBackend<'a> {
    pub basis: &'a PodBasis,
    solves: usize,
}

impl<'a> RomBackend<'a> {
    pub fn new(basis: &'a PodBasis) -> Self {
        Self { basis, solves: 0 }
    }

    /// Reduced coefficients of `indices` and their coupled lower indices.
    pub fn coefficients(
        &mut self,
        p: &[f64],
        phi: &[f64],
        indices: &[MultiIndex],
    ) -> Result<BTreeMap<MultiIndex, DVector<f64>>> {
        let (map, n) = ReducedSolver::new(self.basis, p)?.bundle(phi, indices)?;
        self.solves += n;
        Ok(map)
    }
}

impl OutputBackend for RomBackend<'_> {
    fn n_design(&self) -> usize {
        self.basis.reduced().map_or(0, |r| r.n_design)
    }
    fn n_uncertain(&self) -> usize {
        self.basis.reduced().map_or(0, |r| r.n_uncertain)
    }
    fn output(&mut self, p: &[f64], phi: &[f64], level: DerivativeLevel) -> Result<OutputData> {
        let red = self.basis.reduced()?;
        let (nd, nu) = (red.n_design, red.n_uncertain);
        let idx = output_indices(nd, nu, level);
        let map = self.coefficients(p, phi, &idx)?;
        let out = &self.basis.reduced()?.output;
        Ok(assemble(nd, nu, level, |a| map.get(a).map_or(0.0, |x| out.dot(x))))
    }
    fn solves(&self) -> usize {
        self.solves
    }
}

/// Number of solves one output evaluation costs at `level`.
pub fn solves_per_evaluation(n_design: usize, n_uncertain: usize, level: DerivativeLevel) -> usize {
    closure(&output_indices(n_design, n_uncertain, level)).len()
}
