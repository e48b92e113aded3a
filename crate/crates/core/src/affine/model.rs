//! Affinely decomposed operators, functionals and the full parametric model.

use std::fmt::Write as _;

use nalgebra::DVector;

use super::theta::{MultiIndex, ThetaFunction, Var};
use crate::error::{Error, Result};
use crate::fem::SparseMatrix;

/// Box bounds plus linear inequalities `a·p ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub linear: Vec<(Vec<f64>, f64)>,
}

impl AdmissibleSet {
    pub fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.lower.len() {
            return Err(Error::DimensionMismatch(format!(
                "design point of length {} (expected {})",
                p.len(),
                self.lower.len()
            )));
        }
        let mut violated = Vec::new();
        for (i, &x) in p.iter().enumerate() {
            if !x.is_finite() {
                violated.push(format!("p{} = {x} is not finite", i + 1));
            } else if x < self.lower[i] {
                violated.push(format!("p{} = {x} < {}", i + 1, self.lower[i]));
            } else if x > self.upper[i] {
                violated.push(format!("p{} = {x} > {}", i + 1, self.upper[i]));
            }
        }
        for (a, b) in &self.linear {
            let v: f64 = a.iter().zip(p).map(|(a, x)| a * x).sum();
            if v > *b {
                violated.push(format!("{a:?}·p = {v} > {b}"));
            }
        }
        if violated.is_empty() {
            Ok(())
        } else {
            Err(Error::Inadmissible(violated.join("; ")))
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.check(p).is_ok()
    }

    /// Tensor grid with `n` points per axis, restricted to the set.
    pub fn sample_grid(&self, n: usize) -> Vec<Vec<f64>> {
        let dim = self.lower.len();
        let mut pts = vec![Vec::new()];
        for i in 0..dim {
            let axis: Vec<f64> = (0..n)
                .map(|k| {
                    if n == 1 {
                        0.5 * (self.lower[i] + self.upper[i])
                    } else {
                        self.lower[i] + (self.upper[i] - self.lower[i]) * k as f64 / (n - 1) as f64
                    }
                })
                .collect();
            pts = pts
                .into_iter()
                .flat_map(|prefix: Vec<f64>| {
                    axis.iter().map(move |&x| {
                        let mut v = prefix.clone();
                        v.push(x);
                        v
                    })
                })
                .collect();
        }
        pts.into_iter().filter(|p| self.contains(p)).collect()
    }
}

/// `K(p) = Σ_q Θ_q(p) K_q`, with all components stored on one shared pattern.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    thetas: Vec<ThetaFunction>,
    components: Vec<SparseMatrix>,
    pattern: SparseMatrix,
    values: Vec<Vec<f64>>,
}

impl AffineOperator {
    pub fn new(terms: Vec<(ThetaFunction, SparseMatrix)>) -> Result<Self> {
        let Some(first) = terms.first() else {
            return Err(Error::DimensionMismatch("operator without terms".into()));
        };
        let (n, m) = (first.1.nrows(), first.1.ncols());
        let mut trip = Vec::new();
        for (_, k) in &terms {
            if k.nrows() != n || k.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "component {}x{} in a {n}x{m} operator",
                    k.nrows(),
                    k.ncols()
                )));
            }
            trip.extend(k.triplets().into_iter().map(|(i, j, _)| (i, j, 1.0)));
        }
        let pattern = SparseMatrix::from_triplets(n, m, &trip)?;
        let values = terms
            .iter()
            .map(|(_, k)| {
                let mut v = vec![0.0; pattern.nnz()];
                for (i, j, x) in k.triplets() {
                    v[pattern.position(i, j).expect("pattern covers component")] = x;
                }
                v
            })
            .collect();
        let (thetas, components) = terms.into_iter().unzip();
        Ok(Self {
            thetas,
            components,
            pattern,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pattern.nrows()
    }

    pub fn thetas(&self) -> &[ThetaFunction] {
        &self.thetas
    }

    pub fn components(&self) -> &[SparseMatrix] {
        &self.components
    }

    /// `Σ_q w_q K_q` for explicit weights.
    pub fn combine(&self, weights: &[f64]) -> SparseMatrix {
        assert_eq!(weights.len(), self.len());
        let mut v = vec![0.0; self.pattern.nnz()];
        for (w, vals) in weights.iter().zip(&self.values) {
            if *w != 0.0 {
                for (acc, x) in v.iter_mut().zip(vals) {
                    *acc += w * x;
                }
            }
        }
        self.pattern.with_values(v)
    }

    pub fn weights(&self, alpha: &MultiIndex, p: &[f64]) -> Result<Vec<f64>> {
        let phi = vec![0.0; alpha.uncertain.len()];
        self.thetas.iter().map(|t| t.derivative(alpha, p, &phi)).collect()
    }
}

/// `f(p, φ) = Σ_q Θ_q(p, φ) f_q`.
#[derive(Debug, Clone)]
pub struct AffineFunctional {
    thetas: Vec<ThetaFunction>,
    components: Vec<DVector<f64>>,
}

impl AffineFunctional {
    pub fn new(terms: Vec<(ThetaFunction, DVector<f64>)>) -> Result<Self> {
        if let Some(first) = terms.first() {
            let n = first.1.len();
            if terms.iter().any(|(_, f)| f.len() != n) {
                return Err(Error::DimensionMismatch("load components differ in length".into()));
            }
        }
        let (thetas, components) = terms.into_iter().unzip();
        Ok(Self { thetas, components })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[ThetaFunction] {
        &self.thetas
    }

    pub fn components(&self) -> &[DVector<f64>] {
        &self.components
    }

    pub fn weights(&self, alpha: &MultiIndex, p: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
        self.thetas.iter().map(|t| t.derivative(alpha, p, phi)).collect()
    }

    pub fn combine(&self, weights: &[f64], dim: usize) -> DVector<f64> {
        let mut f = DVector::zeros(dim);
        for (w, c) in weights.iter().zip(&self.components) {
            if *w != 0.0 {
                f.axpy(*w, c, 1.0);
            }
        }
        f
    }
}

/// Full-order parametric problem on the free degrees of freedom.
#[derive(Debug, Clone)]
pub struct AffineModel {
    pub stiffness: AffineOperator,
    pub load: AffineFunctional,
    /// Mass matrix at the reference parameter.
    pub mass: SparseMatrix,
    /// `W = K(p̄) + M`
    pub w: SparseMatrix,
    pub output: DVector<f64>,
    pub n_design: usize,
    pub n_uncertain: usize,
    pub reference: Vec<f64>,
    pub admissible: AdmissibleSet,
}

impl AffineModel {
    /// Assembles a model and checks the reference normalisation.
    pub fn new(
        stiffness: AffineOperator,
        load: AffineFunctional,
        mass: SparseMatrix,
        output: DVector<f64>,
        reference: Vec<f64>,
        n_uncertain: usize,
        admissible: AdmissibleSet,
    ) -> Result<Self> {
        let n = stiffness.dim();
        if mass.nrows() != n || output.len() != n || load.components().iter().any(|f| f.len() != n) {
            return Err(Error::DimensionMismatch("model components disagree in size".into()));
        }
        let zero_phi = vec![0.0; n_uncertain];
        for (q, t) in stiffness.thetas().iter().enumerate() {
            let v = t.value(&reference, &zero_phi);
            if (v - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidCoefficient(format!(
                    "stiffness coefficient {q} equals {v} at the reference parameter"
                )));
            }
        }
        admissible.check(&reference)?;
        let k_ref = stiffness.combine(&vec![1.0; stiffness.len()]);
        let w = k_ref.linear_combination(1.0, &mass, 1.0)?;
        Ok(Self {
            n_design: reference.len(),
            stiffness,
            load,
            mass,
            w,
            output,
            n_uncertain,
            reference,
            admissible,
        })
    }

    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    pub fn zero_index(&self) -> MultiIndex {
        MultiIndex::zero(self.n_design, self.n_uncertain)
    }

    pub fn index(&self, v: Var, order: u8) -> MultiIndex {
        MultiIndex::of(self.n_design, self.n_uncertain, v, order)
    }

    /// Admissibility and positivity of every stiffness coefficient.
    pub fn check_parameter(&self, p: &[f64]) -> Result<()> {
        self.admissible.check(p)?;
        let phi = vec![0.0; self.n_uncertain];
        for (q, t) in self.stiffness.thetas().iter().enumerate() {
            let v = t.value(p, &phi);
            if !(v > 0.0) {
                return Err(Error::NonPositiveTheta { index: q, value: v });
            }
        }
        Ok(())
    }

    pub fn check_uncertain(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.n_uncertain {
            return Err(Error::DimensionMismatch(format!(
                "uncertain point of length {} (expected {})",
                phi.len(),
                self.n_uncertain
            )));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::Inadmissible(format!("uncertain point {phi:?} is not finite")));
        }
        Ok(())
    }

    pub fn stiffness_weights(&self, p: &[f64]) -> Vec<f64> {
        let phi = vec![0.0; self.n_uncertain];
        self.stiffness.thetas().iter().map(|t| t.value(p, &phi)).collect()
    }

    pub fn eval_operator(&self, p: &[f64]) -> Result<SparseMatrix> {
        self.check_parameter(p)?;
        Ok(self.stiffness.combine(&self.stiffness_weights(p)))
    }

    /// `∂^order K / ∂p_i^order`.
    pub fn eval_operator_derivative(&self, p: &[f64], i: usize, order: usize) -> Result<SparseMatrix> {
        if order > 2 {
            return Err(Error::UnsupportedOrder(order));
        }
        if i >= self.n_design {
            return Err(Error::DimensionMismatch(format!("design index {i}")));
        }
        self.operator_derivative(p, &self.index(Var::Design(i), order as u8))
    }

    /// `∂^α K(p)`; zero whenever `α` involves an uncertain parameter.
    pub fn operator_derivative(&self, p: &[f64], alpha: &MultiIndex) -> Result<SparseMatrix> {
        self.admissible.check(p)?;
        if alpha.uncertain_order() > 0 {
            let n = self.dim();
            return Ok(SparseMatrix::zeros(n, n));
        }
        let w = self.stiffness.weights(alpha, p)?;
        Ok(self.stiffness.combine(&w))
    }

    /// Weights `∂^α Θ_q(p)` of the stiffness terms; all zero when `α`
    /// involves an uncertain parameter.
    pub fn operator_weights(&self, p: &[f64], alpha: &MultiIndex) -> Result<Vec<f64>> {
        if alpha.uncertain_order() > 0 {
            return Ok(vec![0.0; self.stiffness.len()]);
        }
        self.stiffness.weights(alpha, p)
    }

    pub fn load_weights(&self, p: &[f64], phi: &[f64], alpha: &MultiIndex) -> Result<Vec<f64>> {
        self.load.weights(alpha, p, phi)
    }

    pub fn eval_rhs(&self, p: &[f64], phi: &[f64]) -> Result<DVector<f64>> {
        self.rhs_derivative(p, phi, &self.zero_index())
    }

    pub fn eval_rhs_derivative(&self, p: &[f64], phi: &[f64], wrt: Var, order: usize) -> Result<DVector<f64>> {
        if order > 2 {
            return Err(Error::UnsupportedOrder(order));
        }
        self.rhs_derivative(p, phi, &self.index(wrt, order as u8))
    }

    pub fn rhs_derivative(&self, p: &[f64], phi: &[f64], alpha: &MultiIndex) -> Result<DVector<f64>> {
        self.admissible.check(p)?;
        self.check_uncertain(phi)?;
        let w = self.load.weights(alpha, p, phi)?;
        Ok(self.load.combine(&w, self.dim()))
    }

    /// Symbolic coefficients and sparse triplets of every component.
    pub fn export_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# dofs {}", self.dim()).unwrap();
        writeln!(s, "# reference {:?}", self.reference).unwrap();
        for (q, (t, k)) in self
            .stiffness
            .thetas()
            .iter()
            .zip(self.stiffness.components())
            .enumerate()
        {
            writeln!(s, "stiffness {q} theta {}", t.expr()).unwrap();
            writeln!(s, "triplets {}", k.nnz()).unwrap();
            for (i, j, v) in k.triplets() {
                writeln!(s, "{i} {j} {v:.17e}").unwrap();
            }
        }
        for (q, (t, f)) in self.load.thetas().iter().zip(self.load.components()).enumerate() {
            writeln!(s, "load {q} theta {}", t.expr()).unwrap();
            let nz: Vec<(usize, f64)> = f.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
            writeln!(s, "entries {}", nz.len()).unwrap();
            for (i, v) in nz {
                writeln!(s, "{i} {v:.17e}").unwrap();
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::theta::ThetaExpr;

    fn two_term_model() -> AffineModel {
        let k1 = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 1.0)]).unwrap();
        let k2 = SparseMatrix::from_triplets(2, 2, &[(0, 1, -0.5), (1, 0, -0.5), (1, 1, 1.0)]).unwrap();
        let t1 = ThetaFunction::new(ThetaExpr::affine(0.0, vec![1.0]), 1, 1);
        let t2 = ThetaFunction::new(
            ThetaExpr::mul(ThetaExpr::affine(0.0, vec![1.0]), ThetaExpr::affine(0.0, vec![1.0])),
            1,
            1,
        );
        let op = AffineOperator::new(vec![(t1, k1), (t2, k2)]).unwrap();
        let f = AffineFunctional::new(vec![(
            ThetaFunction::new(ThetaExpr::cos_deg(0), 1, 1),
            DVector::from_vec(vec![1.0, 1.0]),
        )])
        .unwrap();
        let admissible = AdmissibleSet {
            lower: vec![0.5],
            upper: vec![3.0],
            linear: vec![],
        };
        AffineModel::new(
            op,
            f,
            SparseMatrix::identity(2),
            DVector::from_vec(vec![0.5, 0.5]),
            vec![1.0],
            1,
            admissible,
        )
        .unwrap()
    }

    #[test]
    fn weighted_sum_and_derivatives() {
        let m = two_term_model();
        let k = m.eval_operator(&[2.0]).unwrap();
        assert_eq!(k.get(0, 0), 4.0);
        assert_eq!(k.get(1, 1), 2.0 + 4.0);
        assert_eq!(k.get(0, 1), -2.0);
        let d1 = m.eval_operator_derivative(&[2.0], 0, 1).unwrap();
        assert_eq!(d1.get(1, 1), 1.0 + 4.0);
        let d2 = m.eval_operator_derivative(&[2.0], 0, 2).unwrap();
        assert_eq!(d2.get(1, 1), 2.0);
        assert_eq!(d2.get(0, 0), 0.0);
        assert_eq!(
            m.eval_operator_derivative(&[2.0], 0, 3).unwrap_err(),
            Error::UnsupportedOrder(3)
        );
    }

    #[test]
    fn inadmissible_point_names_bound() {
        let m = two_term_model();
        match m.eval_operator(&[4.0]).unwrap_err() {
            Error::Inadmissible(msg) => assert!(msg.contains("p1 = 4 > 3")),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn reference_gives_unit_weights() {
        let m = two_term_model();
        assert_eq!(m.stiffness_weights(&[1.0]), vec![1.0, 1.0]);
        let w = m.w.to_dense();
        let k = m.eval_operator(&[1.0]).unwrap().to_dense() + nalgebra::DMatrix::identity(2, 2);
        assert_eq!(w, k);
    }

    #[test]
    fn rhs_at_ninety_degrees() {
        let m = two_term_model();
        let f = m.eval_rhs(&[1.0], &[90.0]).unwrap();
        assert!(f.norm() < 1e-15);
        let df = m.eval_rhs_derivative(&[1.0], &[90.0], Var::Uncertain(0), 1).unwrap();
        assert!((df[0] + std::f64::consts::PI / 180.0).abs() < 1e-16);
    }

    #[test]
    fn export_lists_every_term() {
        let text = two_term_model().export_text();
        assert_eq!(text.matches("stiffness ").count(), 2);
        assert!(text.contains("load 0 theta cos("));
    }
}
