//! Symbolic coefficient functions with exact derivatives.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Differentiation variable: a design parameter `p_i` or an uncertain
/// parameter `φ_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Design(usize),
    Uncertain(usize),
}

/// Small expression tree over `p` (affine leaves) and `φ` (trigonometric leaves).
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaExpr {
    Const(f64),
    /// `offset + Σ_i coeffs[i]·p_i`
    Affine {
        offset: f64,
        coeffs: Vec<f64>,
    },
    /// `cos(scale·φ_var)`
    Cos {
        var: usize,
        scale: f64,
    },
    /// `sin(scale·φ_var)`
    Sin {
        var: usize,
        scale: f64,
    },
    Add(Box<ThetaExpr>, Box<ThetaExpr>),
    Mul(Box<ThetaExpr>, Box<ThetaExpr>),
    Div(Box<ThetaExpr>, Box<ThetaExpr>),
    Neg(Box<ThetaExpr>),
}

use ThetaExpr::*;

impl ThetaExpr {
    pub fn constant(c: f64) -> Self {
        Const(c)
    }

    pub fn affine(offset: f64, coeffs: Vec<f64>) -> Self {
        if coeffs.iter().all(|&c| c == 0.0) {
            Const(offset)
        } else {
            Affine { offset, coeffs }
        }
    }

    /// `cos(φ_j)` with `φ_j` in degrees.
    pub fn cos_deg(var: usize) -> Self {
        Cos {
            var,
            scale: std::f64::consts::PI / 180.0,
        }
    }

    pub fn sin_deg(var: usize) -> Self {
        Sin {
            var,
            scale: std::f64::consts::PI / 180.0,
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn add(a: Self, b: Self) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Const(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => match (a, b) {
                (Affine { offset: o1, coeffs: c1 }, Affine { offset: o2, coeffs: c2 }) => {
                    let n = c1.len().max(c2.len());
                    let c = (0..n)
                        .map(|i| c1.get(i).copied().unwrap_or(0.0) + c2.get(i).copied().unwrap_or(0.0))
                        .collect();
                    Self::affine(o1 + o2, c)
                }
                (a, b) => Add(Box::new(a), Box::new(b)),
            },
        }
    }

    pub fn sub(a: Self, b: Self) -> Self {
        Self::add(a, Self::neg(b))
    }

    pub fn neg(a: Self) -> Self {
        match a {
            Const(c) => Const(-c),
            Affine { offset, coeffs } => Affine {
                offset: -offset,
                coeffs: coeffs.into_iter().map(|c| -c).collect(),
            },
            Neg(inner) => *inner,
            other => Neg(Box::new(other)),
        }
    }

    pub fn mul(a: Self, b: Self) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Const(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Const(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            (Some(x), _) if x == -1.0 => Self::neg(b),
            (_, Some(y)) if y == -1.0 => Self::neg(a),
            (Some(x), _) => scale(b, x),
            (_, Some(y)) => scale(a, y),
            _ => Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Self, b: Self) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Const(x / y),
            (Some(x), _) if x == 0.0 => Const(0.0),
            (_, Some(y)) => Self::mul(a, Const(1.0 / y)),
            _ => Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn eval(&self, p: &[f64], phi: &[f64]) -> f64 {
        match self {
            Const(c) => *c,
            Affine { offset, coeffs } => offset + coeffs.iter().zip(p).map(|(c, x)| c * x).sum::<f64>(),
            Cos { var, scale } => (scale * phi[*var]).cos(),
            Sin { var, scale } => (scale * phi[*var]).sin(),
            Add(a, b) => a.eval(p, phi) + b.eval(p, phi),
            Mul(a, b) => a.eval(p, phi) * b.eval(p, phi),
            Div(a, b) => a.eval(p, phi) / b.eval(p, phi),
            Neg(a) => -a.eval(p, phi),
        }
    }

    pub fn diff(&self, v: Var) -> Self {
        match (self, v) {
            (Const(_), _) => Const(0.0),
            (Affine { coeffs, .. }, Var::Design(i)) => Const(coeffs.get(i).copied().unwrap_or(0.0)),
            (Affine { .. }, Var::Uncertain(_)) => Const(0.0),
            (Cos { var, scale }, Var::Uncertain(j)) if *var == j => scale_expr(
                Self::neg(Sin {
                    var: *var,
                    scale: *scale,
                }),
                *scale,
            ),
            (Sin { var, scale }, Var::Uncertain(j)) if *var == j => scale_expr(
                Cos {
                    var: *var,
                    scale: *scale,
                },
                *scale,
            ),
            (Cos { .. } | Sin { .. }, _) => Const(0.0),
            (Add(a, b), _) => Self::add(a.diff(v), b.diff(v)),
            (Mul(a, b), _) => Self::add(Self::mul(a.diff(v), (**b).clone()), Self::mul((**a).clone(), b.diff(v))),
            (Div(a, b), _) => {
                let da = a.diff(v);
                let db = b.diff(v);
                // (a/b)' = a'/b − a b' / b²
                let first = Self::div(da, (**b).clone());
                let second = Self::div(Self::mul((**a).clone(), db), Self::mul((**b).clone(), (**b).clone()));
                Self::sub(first, second)
            }
            (Neg(a), _) => Self::neg(a.diff(v)),
        }
    }

    /// Whether the expression depends on any uncertain parameter.
    pub fn depends_on_uncertain(&self) -> bool {
        match self {
            Const(_) | Affine { .. } => false,
            Cos { .. } | Sin { .. } => true,
            Add(a, b) | Mul(a, b) | Div(a, b) => a.depends_on_uncertain() || b.depends_on_uncertain(),
            Neg(a) => a.depends_on_uncertain(),
        }
    }
}

fn scale(e: ThetaExpr, s: f64) -> ThetaExpr {
    match e {
        Affine { offset, coeffs } => Affine {
            offset: offset * s,
            coeffs: coeffs.into_iter().map(|c| c * s).collect(),
        },
        Neg(inner) => scale(*inner, -s),
        Mul(a, b) if a.as_const().is_some() => ThetaExpr::mul(Const(a.as_const().unwrap() * s), *b),
        other => Mul(Box::new(Const(s)), Box::new(other)),
    }
}

fn scale_expr(e: ThetaExpr, s: f64) -> ThetaExpr {
    ThetaExpr::mul(Const(s), e)
}

impl fmt::Display for ThetaExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const(c) => write!(f, "{c}"),
            Affine { offset, coeffs } => {
                write!(f, "({offset}")?;
                for (i, c) in coeffs.iter().enumerate() {
                    if *c != 0.0 {
                        write!(f, " + {c}*p{}", i + 1)?;
                    }
                }
                write!(f, ")")
            }
            Cos { var, scale } => write!(f, "cos({scale}*phi{})", var + 1),
            Sin { var, scale } => write!(f, "sin({scale}*phi{})", var + 1),
            Add(a, b) => write!(f, "({a} + {b})"),
            Mul(a, b) => write!(f, "{a}*{b}"),
            Div(a, b) => write!(f, "{a}/{b}"),
            Neg(a) => write!(f, "-({a})"),
        }
    }
}

/// Derivative multi-index: orders per design and per uncertain parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    pub design: Vec<u8>,
    pub uncertain: Vec<u8>,
}

impl MultiIndex {
    pub fn zero(n_design: usize, n_uncertain: usize) -> Self {
        Self {
            design: vec![0; n_design],
            uncertain: vec![0; n_uncertain],
        }
    }

    pub fn of(n_design: usize, n_uncertain: usize, v: Var, order: u8) -> Self {
        let mut m = Self::zero(n_design, n_uncertain);
        match v {
            Var::Design(i) => m.design[i] = order,
            Var::Uncertain(j) => m.uncertain[j] = order,
        }
        m
    }

    /// `self` raised by one order in `v`.
    pub fn with(&self, v: Var) -> Self {
        let mut m = self.clone();
        match v {
            Var::Design(i) => m.design[i] += 1,
            Var::Uncertain(j) => m.uncertain[j] += 1,
        }
        m
    }

    pub fn order(&self) -> usize {
        self.design_order() + self.uncertain_order()
    }

    pub fn design_order(&self) -> usize {
        self.design.iter().map(|&d| d as usize).sum()
    }

    pub fn uncertain_order(&self) -> usize {
        self.uncertain.iter().map(|&d| d as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.order() == 0
    }

    fn entries(&self) -> impl Iterator<Item = u8> + '_ {
        self.design.iter().chain(&self.uncertain).copied()
    }

    fn from_entries(&self, e: &[u8]) -> Self {
        let nd = self.design.len();
        Self {
            design: e[..nd].to_vec(),
            uncertain: e[nd..].to_vec(),
        }
    }

    /// Every `β ≤ α` componentwise, including `α` itself, in graded order.
    pub fn lower(&self) -> Vec<MultiIndex> {
        let caps: Vec<u8> = self.entries().collect();
        let mut out = vec![Vec::new()];
        for &c in &caps {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<u8>| {
                    (0..=c).map(move |k| {
                        let mut v = prefix.clone();
                        v.push(k);
                        v
                    })
                })
                .collect();
        }
        let mut idx: Vec<MultiIndex> = out.iter().map(|e| self.from_entries(e)).collect();
        idx.sort_by_key(|m| (m.order(), m.clone()));
        idx
    }

    /// `α − β`, assuming `β ≤ α`.
    pub fn minus(&self, beta: &MultiIndex) -> MultiIndex {
        let e: Vec<u8> = self.entries().zip(beta.entries()).map(|(a, b)| a - b).collect();
        self.from_entries(&e)
    }

    /// `Π_k C(α_k, β_k)`.
    pub fn binomial(&self, beta: &MultiIndex) -> f64 {
        self.entries()
            .zip(beta.entries())
            .map(|(a, b)| binomial(a as u32, b as u32))
            .product()
    }

    /// The variables in `self`, one entry per order, e.g. `∂²/∂p₁∂φ` → `[p₁, φ]`.
    pub fn variables(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for (i, &d) in self.design.iter().enumerate() {
            v.extend(std::iter::repeat_n(Var::Design(i), d as usize));
        }
        for (j, &d) in self.uncertain.iter().enumerate() {
            v.extend(std::iter::repeat_n(Var::Uncertain(j), d as usize));
        }
        v
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "u");
        }
        write!(f, "u_")?;
        for v in self.variables() {
            match v {
                Var::Design(i) => write!(f, "p{}", i + 1)?,
                Var::Uncertain(j) => write!(f, "phi{}", j + 1)?,
            }
        }
        Ok(())
    }
}

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Highest supported derivative order per parameter group.
pub const MAX_DESIGN_ORDER: usize = 2;
pub const MAX_UNCERTAIN_ORDER: usize = 2;

/// A coefficient function with its derivative table precomputed.
#[derive(Debug, Clone)]
pub struct ThetaFunction {
    expr: ThetaExpr,
    table: HashMap<MultiIndex, ThetaExpr>,
}

impl ThetaFunction {
    pub fn new(expr: ThetaExpr, n_design: usize, n_uncertain: usize) -> Self {
        let mut table = HashMap::new();
        let zero = MultiIndex::zero(n_design, n_uncertain);
        let mut frontier = vec![(zero.clone(), expr.clone())];
        table.insert(zero, expr.clone());
        while let Some((idx, e)) = frontier.pop() {
            let vars = (0..n_design)
                .map(Var::Design)
                .chain((0..n_uncertain).map(Var::Uncertain));
            for v in vars {
                let next = idx.with(v);
                if next.design_order() > MAX_DESIGN_ORDER
                    || next.uncertain_order() > MAX_UNCERTAIN_ORDER
                    || table.contains_key(&next)
                {
                    continue;
                }
                let d = e.diff(v);
                table.insert(next.clone(), d.clone());
                frontier.push((next, d));
            }
        }
        Self { expr, table }
    }

    pub fn expr(&self) -> &ThetaExpr {
        &self.expr
    }

    pub fn value(&self, p: &[f64], phi: &[f64]) -> f64 {
        self.expr.eval(p, phi)
    }

    pub fn derivative(&self, alpha: &MultiIndex, p: &[f64], phi: &[f64]) -> Result<f64> {
        match self.table.get(alpha) {
            Some(e) => Ok(e.eval(p, phi)),
            None => Err(Error::UnsupportedOrder(alpha.order())),
        }
    }

    pub fn derivative_expr(&self, alpha: &MultiIndex) -> Option<&ThetaExpr> {
        self.table.get(alpha)
    }

    /// Whether `∂^α Θ` vanishes identically.
    pub fn derivative_is_zero(&self, alpha: &MultiIndex) -> bool {
        self.table.get(alpha).is_some_and(ThetaExpr::is_zero)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn quadratic_derivatives() {
        let p1 = ThetaExpr::affine(0.0, vec![1.0]);
        let e = ThetaExpr::mul(p1.clone(), p1);
        let t = ThetaFunction::new(e, 1, 0);
        let d1 = MultiIndex::of(1, 0, Var::Design(0), 1);
        let d2 = MultiIndex::of(1, 0, Var::Design(0), 2);
        assert_eq!(t.derivative(&d1, &[3.0], &[]).unwrap(), 6.0);
        assert_eq!(t.derivative(&d2, &[3.0], &[]).unwrap(), 2.0);
        let d3 = MultiIndex::of(1, 0, Var::Design(0), 3);
        assert_eq!(t.derivative(&d3, &[3.0], &[]), Err(Error::UnsupportedOrder(3)));
    }

    #[test]
    fn degree_trig_derivatives() {
        let t = ThetaFunction::new(ThetaExpr::cos_deg(0), 0, 1);
        let d1 = MultiIndex::of(0, 1, Var::Uncertain(0), 1);
        let v = t.derivative(&d1, &[], &[90.0]).unwrap();
        assert!((v + std::f64::consts::PI / 180.0).abs() < 1e-16);
        let d2 = MultiIndex::of(0, 1, Var::Uncertain(0), 2);
        let h = 1e-3;
        let fd2 = (t.value(&[], &[84.0 + h]) - 2.0 * t.value(&[], &[84.0]) + t.value(&[], &[84.0 - h])) / (h * h);
        assert!((t.derivative(&d2, &[], &[84.0]).unwrap() - fd2).abs() < 1e-8);
    }

    #[test]
    fn ratio_derivatives_match_fd() {
        // (1 + 0.5 p2) / (2 − 0.25 p1)
        let e = ThetaExpr::div(
            ThetaExpr::affine(1.0, vec![0.0, 0.5]),
            ThetaExpr::affine(2.0, vec![-0.25, 0.0]),
        );
        let t = ThetaFunction::new(e, 2, 0);
        let p = [1.3, 0.7];
        let d1 = MultiIndex::of(2, 0, Var::Design(0), 1);
        let num = fd(|x| t.value(&[x, p[1]], &[]), p[0], 1e-5);
        assert!((t.derivative(&d1, &p, &[]).unwrap() - num).abs() < 1e-8);
        let mixed = MultiIndex::of(2, 0, Var::Design(0), 1).with(Var::Design(1));
        let num = fd(
            |y| {
                let g = |x: f64| t.value(&[x, y], &[]);
                fd(g, p[0], 1e-4)
            },
            p[1],
            1e-4,
        );
        assert!((t.derivative(&mixed, &p, &[]).unwrap() - num).abs() < 1e-6);
    }

    #[test]
    fn multi_index_algebra() {
        let a = MultiIndex {
            design: vec![1, 0],
            uncertain: vec![2],
        };
        let lower = a.lower();
        assert_eq!(lower.len(), 6);
        assert!(lower[0].is_zero());
        assert_eq!(lower.last().unwrap(), &a);
        let b = MultiIndex {
            design: vec![0, 0],
            uncertain: vec![1],
        };
        assert_eq!(a.binomial(&b), 2.0);
        assert_eq!(a.minus(&b).uncertain, vec![1]);
        assert_eq!(a.to_string(), "u_p1phi1phi1");
        assert_eq!(binomial(4, 2), 6.0);
    }

    #[test]
    fn display_is_readable() {
        let e = ThetaExpr::mul(ThetaExpr::affine(0.0, vec![0.0, 1.0 / 7.0]), ThetaExpr::sin_deg(0));
        assert!(e.to_string().contains("sin("));
    }
}
