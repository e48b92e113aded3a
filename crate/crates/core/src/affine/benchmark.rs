//! Magnet-block benchmark: a rectangular box with an inner magnet whose
//! width, height and lift are the design parameters.
//!
//! The grid lines `x = 0, a, b, W` and `y = 0, p₃, p₃ + p₂, H` with
//! `a = (W − p₁)/2`, `b = (W + p₁)/2` cut the box into nine rectangles.
//! Each rectangle is mapped affinely from its reference position with a
//! diagonal Jacobian `diag(s_x, s_y)`, so its Laplacian pulls back to the
//! coefficient `diag(s_y/s_x, s_x/s_y)`. The centre rectangle is the magnet.

use serde::{Deserialize, Serialize};

use super::model::{AdmissibleSet, AffineFunctional, AffineModel, AffineOperator};
use super::theta::{ThetaExpr, ThetaFunction};
use crate::error::{Error, Result};
use crate::fem::assembly::{
    assemble_gradient_load, assemble_mass, assemble_subdomain_stiffness, restrict_matrix, restrict_vector,
    strip_mean_functional,
};
use crate::fem::mesh::{Mesh, Point};

pub const MAGNET_LABEL: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub width: f64,
    pub height: f64,
    /// Reference magnet `(width, height, lift)`.
    pub reference: [f64; 3],
    /// Refinement level; each level halves the element size.
    pub mesh_level: u32,
    /// Elements per unit length on level 1.
    pub density: f64,
    /// Magnetisation strength scaling the load.
    pub magnet_strength: f64,
    /// Observation strip `[y0, y1]` in reference coordinates.
    pub strip: [f64; 2],
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    /// Minimal distance between magnet top and the upper wall.
    pub top_margin: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            width: 32.0,
            height: 18.0,
            reference: [19.0, 7.0, 7.0],
            mesh_level: 3,
            density: 0.7,
            magnet_strength: 62.067_414_818_334_9,
            strip: [15.5, 16.5],
            lower: [0.5, 0.5, 2.0],
            upper: [28.0, 12.0, 15.0],
            top_margin: 1.5,
        }
    }
}

impl BenchmarkConfig {
    pub fn with_level(mut self, level: u32) -> Self {
        self.mesh_level = level;
        self
    }

    pub fn admissible(&self) -> AdmissibleSet {
        AdmissibleSet {
            lower: self.lower.to_vec(),
            upper: self.upper.to_vec(),
            linear: vec![(vec![0.0, 1.0, 1.0], self.height - self.top_margin)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h, z] = self.reference;
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Config("box dimensions must be positive".into()));
        }
        if !(w > 0.0 && w < self.width && h > 0.0 && z > 0.0 && h + z < self.height) {
            return Err(Error::Config(format!(
                "reference magnet {:?} does not fit into the {}x{} box",
                self.reference, self.width, self.height
            )));
        }
        if self.lower.iter().any(|&l| !(l > 0.0)) || self.upper[0] >= self.width {
            return Err(Error::Config("design bounds leave the box".into()));
        }
        if self.upper[2] + self.lower[1] > self.height - self.top_margin || self.top_margin <= 0.0 {
            return Err(Error::Config("design bounds leave no room above the magnet".into()));
        }
        if !(self.strip[1] > self.strip[0] && self.strip[0] > h + z && self.strip[1] < self.height) {
            return Err(Error::Config(format!(
                "observation strip {:?} must lie above the reference magnet",
                self.strip
            )));
        }
        if !(self.density > 0.0) || self.mesh_level == 0 || self.mesh_level > 8 {
            return Err(Error::Config("mesh resolution out of range".into()));
        }
        self.admissible().check(&self.reference).map_err(|e| match e {
            Error::Inadmissible(m) => Error::Config(format!("reference magnet is not admissible: {m}")),
            other => other,
        })
    }

    fn x_lines(&self, p: &[f64]) -> [f64; 4] {
        let a = 0.5 * (self.width - p[0]);
        [0.0, a, a + p[0], self.width]
    }

    fn y_lines(&self, p: &[f64]) -> [f64; 4] {
        [0.0, p[2], p[2] + p[1], self.height]
    }

    /// Piecewise-affine map from the reference box onto the box at `p`.
    pub fn map(&self, p: &[f64]) -> impl Fn(Point) -> Point {
        let (rx, ry) = (self.x_lines(&self.reference), self.y_lines(&self.reference));
        let (px, py) = (self.x_lines(p), self.y_lines(p));
        move |q: Point| [interp(&rx, &px, q[0]), interp(&ry, &py, q[1])]
    }

    /// Jacobian scalings `(s_x, s_y)` of rectangle `label` at `p`.
    pub fn scalings(&self, p: &[f64], label: usize) -> (f64, f64) {
        let (i, j) = ((label - 1) % 3, (label - 1) / 3);
        let (rx, ry) = (self.x_lines(&self.reference), self.y_lines(&self.reference));
        let (px, py) = (self.x_lines(p), self.y_lines(p));
        (
            (px[i + 1] - px[i]) / (rx[i + 1] - rx[i]),
            (py[j + 1] - py[j]) / (ry[j + 1] - ry[j]),
        )
    }

    pub fn reference_mesh(&self) -> Result<Mesh> {
        let xs = self.x_lines(&self.reference);
        let ys = self.y_lines(&self.reference);
        let factor = 1usize << (self.mesh_level - 1);
        let div = |lines: &[f64; 4]| -> Vec<usize> {
            lines
                .windows(2)
                .map(|w| ((w[1] - w[0]) * self.density).ceil().max(1.0) as usize * factor)
                .collect()
        };
        Mesh::structured(&xs, &ys, &div(&xs), &div(&ys))
    }

    /// Reference mesh moved to the geometry at `p`.
    pub fn physical_mesh(&self, mesh: &Mesh, p: &[f64]) -> Result<Mesh> {
        mesh.mapped(self.map(p))
    }
}

fn interp(from: &[f64; 4], to: &[f64; 4], x: f64) -> f64 {
    let k = if x <= from[1] {
        0
    } else if x <= from[2] {
        1
    } else {
        2
    };
    to[k] + (x - from[k]) * (to[k + 1] - to[k]) / (from[k + 1] - from[k])
}

/// Affine expression of the `k`-th cell width (`axis = 0`) or height
/// (`axis = 1`) divided by its reference value.
fn cell_scale(cfg: &BenchmarkConfig, axis: usize, k: usize) -> ThetaExpr {
    let r = cfg.reference;
    let (offset, coeffs, reference) = match (axis, k) {
        (0, 0) | (0, 2) => (0.5 * cfg.width, vec![-0.5, 0.0, 0.0], 0.5 * (cfg.width - r[0])),
        (0, _) => (0.0, vec![1.0, 0.0, 0.0], r[0]),
        (_, 0) => (0.0, vec![0.0, 0.0, 1.0], r[2]),
        (_, 1) => (0.0, vec![0.0, 1.0, 0.0], r[1]),
        _ => (cfg.height, vec![0.0, -1.0, -1.0], cfg.height - r[1] - r[2]),
    };
    ThetaExpr::affine(offset / reference, coeffs.into_iter().map(|c| c / reference).collect())
}

/// Builds the benchmark model and its reference mesh.
pub fn build_benchmark(cfg: &BenchmarkConfig) -> Result<(AffineModel, Mesh)> {
    cfg.validate()?;
    let mesh = cfg.reference_mesh()?;
    let (nd, nu) = (3, 1);

    let mut terms = Vec::new();
    for label in 1..=9 {
        let (i, j) = ((label - 1) % 3, (label - 1) / 3);
        let sx = cell_scale(cfg, 0, i);
        let sy = cell_scale(cfg, 1, j);
        let kxx = assemble_subdomain_stiffness(&mesh, label, [[1.0, 0.0], [0.0, 0.0]])?;
        let kyy = assemble_subdomain_stiffness(&mesh, label, [[0.0, 0.0], [0.0, 1.0]])?;
        terms.push((
            ThetaFunction::new(ThetaExpr::div(sy.clone(), sx.clone()), nd, nu),
            restrict_matrix(&kxx, &mesh),
        ));
        terms.push((
            ThetaFunction::new(ThetaExpr::div(sx, sy), nd, nu),
            restrict_matrix(&kyy, &mesh),
        ));
    }
    let stiffness = AffineOperator::new(terms)?;

    // m·∇v on the magnet pulls back to (cos φ · s_y ∂_ξ v̂ + sin φ · s_x ∂_η v̂)
    let m0 = cfg.magnet_strength;
    let fx = restrict_vector(&assemble_gradient_load(&mesh, MAGNET_LABEL, [m0, 0.0])?, &mesh);
    let fy = restrict_vector(&assemble_gradient_load(&mesh, MAGNET_LABEL, [0.0, m0])?, &mesh);
    let load = AffineFunctional::new(vec![
        (
            ThetaFunction::new(ThetaExpr::mul(cell_scale(cfg, 1, 1), ThetaExpr::cos_deg(0)), nd, nu),
            fx,
        ),
        (
            ThetaFunction::new(ThetaExpr::mul(cell_scale(cfg, 0, 1), ThetaExpr::sin_deg(0)), nd, nu),
            fy,
        ),
    ])?;

    let mass = restrict_matrix(&assemble_mass(&mesh)?, &mesh);
    let output = restrict_vector(&strip_mean_functional(&mesh, cfg.strip[0], cfg.strip[1])?, &mesh);
    let model = AffineModel::new(
        stiffness,
        load,
        mass,
        output,
        cfg.reference.to_vec(),
        nu,
        cfg.admissible(),
    )?;
    for p in cfg.admissible().sample_grid(9) {
        model.check_parameter(&p)?;
    }
    Ok((model, mesh))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_map_is_identity() {
        let cfg = BenchmarkConfig::default();
        let f = cfg.map(&cfg.reference);
        for q in [[0.0, 0.0], [3.0, 5.0], [20.0, 15.0], [32.0, 18.0]] {
            assert_eq!(f(q), q);
        }
        for label in 1..=9 {
            assert_eq!(cfg.scalings(&cfg.reference, label), (1.0, 1.0));
        }
    }

    #[test]
    fn piece_areas_sum_to_box() {
        let cfg = BenchmarkConfig::default();
        let mesh = cfg.clone().with_level(1).reference_mesh().unwrap();
        let p = [11.0, 3.5, 9.0];
        let mut total = 0.0;
        for t in 0..mesh.num_triangles() {
            let (sx, sy) = cfg.scalings(&p, mesh.labels()[t]);
            total += sx * sy * mesh.triangle_area(t);
        }
        assert!((total - 32.0 * 18.0).abs() < 1e-10);
    }

    #[test]
    fn level_one_size() {
        let cfg = BenchmarkConfig::default().with_level(1);
        let mesh = cfg.reference_mesh().unwrap();
        assert_eq!(mesh.num_free(), 23 * 12);
    }

    #[test]
    fn infeasible_reference_is_rejected() {
        let mut cfg = BenchmarkConfig::default();
        cfg.reference = [19.0, 7.0, 12.0];
        assert!(matches!(build_benchmark(&cfg), Err(Error::Config(_))));
    }
}
