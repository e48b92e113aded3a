//! Worst-case analysis over scaled norm balls of the uncertain parameters.

pub mod counterpart;
pub mod trs;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use counterpart::{
    build_linear_robust_nlp, build_quadratic_robust_mpec, solve_mpec, DerivativeLevel, FunctionData, LinearRobustNlp,
    MpecOptions, MpecResult, MpecStep, NominalNlp, QuadraticMpec, UncertainEval, UncertainProblem,
};
pub use trs::{solve_trust_region_subproblem, trs_kkt_residual, QuadraticWorstCaseModel, TrsSolution};

/// Norm index `k` of the uncertainty set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl NormKind {
    /// Accepts `2` and `∞`; anything else is rejected.
    pub fn from_index(k: f64) -> Result<Self> {
        if k == 2.0 {
            Ok(NormKind::Two)
        } else if k == f64::INFINITY {
            Ok(NormKind::Inf)
        } else {
            Err(Error::Config(format!(
                "norm index k = {k} is not supported (use 2 or inf)"
            )))
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::Two => "2",
            NormKind::Inf => "inf",
        })
    }
}

impl FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "2" | "two" => Ok(NormKind::Two),
            "inf" | "infinity" | "∞" => Ok(NormKind::Inf),
            other => Err(Error::Config(format!("unknown norm index {other:?}"))),
        }
    }
}

/// `U_k = {φ : ‖D⁻¹(φ − φ̂)‖_k ≤ 1}` with diagonal `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    pub nominal: Vec<f64>,
    pub scaling: Vec<f64>,
    pub norm: NormKind,
}

impl UncertaintySet {
    pub fn new(nominal: Vec<f64>, scaling: Vec<f64>, norm: NormKind) -> Result<Self> {
        if nominal.len() != scaling.len() || nominal.is_empty() {
            return Err(Error::DimensionMismatch(
                "nominal value and scaling differ in length".into(),
            ));
        }
        if scaling.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Config(format!("scaling {scaling:?} must be positive")));
        }
        Ok(Self { nominal, scaling, norm })
    }

    pub fn dim(&self) -> usize {
        self.nominal.len()
    }

    /// `‖D⁻¹(φ − φ̂)‖_k`.
    pub fn scaled_distance(&self, phi: &[f64]) -> f64 {
        let it = phi
            .iter()
            .zip(&self.nominal)
            .zip(&self.scaling)
            .map(|((p, n), d)| (p - n) / d);
        match self.norm {
            NormKind::Two => it.map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::Inf => it.fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn contains(&self, phi: &[f64]) -> bool {
        phi.len() == self.dim() && self.scaled_distance(phi) <= 1.0 + 1e-12
    }

    /// Same set with a different norm index.
    pub fn with_norm(&self, norm: NormKind) -> Self {
        Self { norm, ..self.clone() }
    }
}

/// `‖Dv‖_{k*}` with `k* = k/(k−1)`, so `k = ∞` gives the 1-norm.
pub fn dual_norm(v: &[f64], d: &[f64], k: NormKind) -> f64 {
    let it = v.iter().zip(d).map(|(v, d)| v * d);
    match k {
        NormKind::Two => it.map(|x| x * x).sum::<f64>().sqrt(),
        NormKind::Inf => it.map(f64::abs).sum(),
    }
}

/// Maximum of `value + grad·(φ − φ̂)` over the set.
pub fn linear_worst_case(value: f64, grad_phi: &[f64], set: &UncertaintySet) -> f64 {
    value + dual_norm(grad_phi, &set.scaling, set.norm)
}

/// Maximiser of a linear model over the set.
pub fn linear_worst_case_point(grad_phi: &[f64], set: &UncertaintySet) -> Vec<f64> {
    let n = set.dim();
    let dn = dual_norm(grad_phi, &set.scaling, NormKind::Two);
    (0..n)
        .map(|j| {
            let d = set.scaling[j];
            let step = match set.norm {
                NormKind::Inf => d * sign(grad_phi[j]),
                NormKind::Two if dn > 0.0 => d * d * grad_phi[j] / dn,
                NormKind::Two => 0.0,
            };
            set.nominal[j] + step
        })
        .collect()
}

fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMaximum {
    pub value: f64,
    pub argmax: Vec<f64>,
    /// Largest spacing between neighbouring grid points, in units of `φ`.
    pub resolution: f64,
    pub points: usize,
}

/// Points of a uniform grid covering the set. One dimension: `n` points
/// including both ends. Two dimensions: an `n × n` tensor grid of the
/// bounding box restricted to the set, plus `4n` boundary points when
/// `k = 2`.
pub fn uncertainty_grid(set: &UncertaintySet, n: usize) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = n.max(2);
    let axis = |j: usize| -> Vec<f64> {
        (0..n)
            .map(|i| set.nominal[j] + set.scaling[j] * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
            .collect()
    };
    match set.dim() {
        1 => Ok((
            axis(0).into_iter().map(|x| vec![x]).collect(),
            2.0 * set.scaling[0] / (n - 1) as f64,
        )),
        2 => {
            let (a0, a1) = (axis(0), axis(1));
            let mut pts = Vec::with_capacity(n * n);
            for &x in &a0 {
                for &y in &a1 {
                    let p = vec![x, y];
                    if set.contains(&p) {
                        pts.push(p);
                    }
                }
            }
            let h = 2.0 * set.scaling[0].max(set.scaling[1]) / (n - 1) as f64;
            if set.norm == NormKind::Two {
                let m = 4 * n;
                for i in 0..m {
                    let t = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                    pts.push(vec![
                        set.nominal[0] + set.scaling[0] * t.cos(),
                        set.nominal[1] + set.scaling[1] * t.sin(),
                    ]);
                }
            }
            Ok((pts, h))
        }
        d => Err(Error::DimensionMismatch(format!(
            "grid search supports one or two uncertain parameters, not {d}"
        ))),
    }
}

/// Maximum of `eval` over a uniform grid of the set.
pub fn brute_force_worst_case<F>(mut eval: F, set: &UncertaintySet, grid_points: usize) -> Result<GridMaximum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let (pts, resolution) = uncertainty_grid(set, grid_points)?;
    let mut best = GridMaximum {
        value: f64::NEG_INFINITY,
        argmax: set.nominal.clone(),
        resolution,
        points: pts.len(),
    };
    for p in pts {
        let v = eval(&p)?;
        if v > best.value {
            best.value = v;
            best.argmax = p;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_norm_examples() {
        assert_eq!(dual_norm(&[3.0, -4.0], &[1.0, 1.0], NormKind::Two), 5.0);
        assert_eq!(dual_norm(&[2.0], &[5.0], NormKind::Inf), 10.0);
        assert_eq!(dual_norm(&[1.0, 1.0], &[2.0, 3.0], NormKind::Inf), 5.0);
        assert!(NormKind::from_index(3.0).is_err());
        assert_eq!("inf".parse::<NormKind>().unwrap(), NormKind::Inf);
    }

    #[test]
    fn linear_worst_case_examples() {
        let set = UncertaintySet::new(vec![85.0], vec![5.0], NormKind::Inf).unwrap();
        assert_eq!(linear_worst_case(2.0, &[0.0], &set), 2.0);
        assert!((linear_worst_case(2.0, &[0.1], &set) - 2.5).abs() < 1e-15);
        assert_eq!(linear_worst_case_point(&[-0.1], &set), vec![80.0]);
    }

    #[test]
    fn grid_includes_vertices() {
        let set = UncertaintySet::new(vec![0.0, 0.0], vec![1.0, 2.0], NormKind::Inf).unwrap();
        let r = brute_force_worst_case(|p| Ok(p[0] + p[1]), &set, 11).unwrap();
        assert_eq!(r.value, 3.0);
        assert_eq!(r.argmax, vec![1.0, 2.0]);
        let c = brute_force_worst_case(|_| Ok(7.0), &set.with_norm(NormKind::Two), 5).unwrap();
        assert_eq!(c.value, 7.0);
    }

    #[test]
    fn invalid_scaling_rejected() {
        assert!(UncertaintySet::new(vec![0.0], vec![0.0], NormKind::Two).is_err());
    }
}
