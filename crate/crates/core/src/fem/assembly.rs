//! P1 element matrices and global assembly on node-indexed systems.

use nalgebra::DVector;

use super::mesh::{Mesh, Point};
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

pub type Coeff = [[f64; 2]; 2];

pub const IDENTITY: Coeff = [[1.0, 0.0], [0.0, 1.0]];

/// Gradients of the three barycentric basis functions and the area.
fn element_gradients(mesh: &Mesh, t: usize) -> Result<([[f64; 2]; 3], f64)> {
    let [a, b, c] = mesh.triangles()[t];
    let (p, q, r) = (mesh.nodes()[a], mesh.nodes()[b], mesh.nodes()[c]);
    let det = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
    let area = 0.5 * det;
    if !(area > 0.0) {
        return Err(Error::DegenerateTriangle { index: t, area });
    }
    let g = [
        [(q[1] - r[1]) / det, (r[0] - q[0]) / det],
        [(r[1] - p[1]) / det, (p[0] - r[0]) / det],
        [(p[1] - q[1]) / det, (q[0] - p[0]) / det],
    ];
    Ok((g, area))
}

fn check_label(mesh: &Mesh, label: usize) -> Result<()> {
    if mesh.has_label(label) {
        Ok(())
    } else {
        Err(Error::UnknownSubdomain(label))
    }
}

fn check_coeff(c: &Coeff) -> Result<()> {
    if c[0][1] != c[1][0] {
        return Err(Error::InvalidCoefficient(format!("not symmetric: {c:?}")));
    }
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    if c[0][0] < 0.0 || c[1][1] < 0.0 || det < -1e-14 * (c[0][0] * c[1][1]).abs().max(1.0) {
        return Err(Error::InvalidCoefficient(format!("not positive semidefinite: {c:?}")));
    }
    Ok(())
}

/// `∫_{Ω_label} (C ∇w)·∇v` over all mesh nodes.
pub fn assemble_subdomain_stiffness(mesh: &Mesh, label: usize, coeff: Coeff) -> Result<SparseMatrix> {
    check_label(mesh, label)?;
    check_coeff(&coeff)?;
    let mut trip = Vec::new();
    for t in 0..mesh.num_triangles() {
        if mesh.labels()[t] != label {
            continue;
        }
        let (g, area) = element_gradients(mesh, t)?;
        let tri = mesh.triangles()[t];
        for i in 0..3 {
            let cg = [
                coeff[0][0] * g[i][0] + coeff[0][1] * g[i][1],
                coeff[1][0] * g[i][0] + coeff[1][1] * g[i][1],
            ];
            for j in 0..3 {
                trip.push((tri[j], tri[i], area * (cg[0] * g[j][0] + cg[1] * g[j][1])));
            }
        }
    }
    let n = mesh.num_nodes();
    SparseMatrix::from_triplets(n, n, &trip)
}

/// `∫_{Ω_label} w v` over all mesh nodes.
pub fn assemble_subdomain_mass(mesh: &Mesh, label: usize) -> Result<SparseMatrix> {
    check_label(mesh, label)?;
    let mut trip = Vec::new();
    for t in 0..mesh.num_triangles() {
        if mesh.labels()[t] != label {
            continue;
        }
        let (_, area) = element_gradients(mesh, t)?;
        let tri = mesh.triangles()[t];
        for i in 0..3 {
            for j in 0..3 {
                let w = if i == j { 2.0 } else { 1.0 };
                trip.push((tri[i], tri[j], area * w / 12.0));
            }
        }
    }
    let n = mesh.num_nodes();
    SparseMatrix::from_triplets(n, n, &trip)
}

/// Stiffness over the whole mesh with a per-label coefficient.
pub fn assemble_stiffness(mesh: &Mesh, coeff: impl Fn(usize) -> Coeff) -> Result<SparseMatrix> {
    let n = mesh.num_nodes();
    let mut total = SparseMatrix::zeros(n, n);
    for label in distinct_labels(mesh) {
        let k = assemble_subdomain_stiffness(mesh, label, coeff(label))?;
        total = total.linear_combination(1.0, &k, 1.0)?;
    }
    Ok(total)
}

pub fn assemble_mass(mesh: &Mesh) -> Result<SparseMatrix> {
    let n = mesh.num_nodes();
    let mut total = SparseMatrix::zeros(n, n);
    for label in distinct_labels(mesh) {
        total = total.linear_combination(1.0, &assemble_subdomain_mass(mesh, label)?, 1.0)?;
    }
    Ok(total)
}

pub fn distinct_labels(mesh: &Mesh) -> Vec<usize> {
    let mut l = mesh.labels().to_vec();
    l.sort_unstable();
    l.dedup();
    l
}

/// `∫_{Ω_label} s v`.
pub fn assemble_source(mesh: &Mesh, label: usize, density: f64) -> Result<DVector<f64>> {
    check_label(mesh, label)?;
    let mut f = DVector::zeros(mesh.num_nodes());
    for t in 0..mesh.num_triangles() {
        if mesh.labels()[t] != label {
            continue;
        }
        let (_, area) = element_gradients(mesh, t)?;
        for &i in &mesh.triangles()[t] {
            f[i] += density * area / 3.0;
        }
    }
    Ok(f)
}

/// `∫_{Ω_label} d·∇v` for a constant direction `d`.
pub fn assemble_gradient_load(mesh: &Mesh, label: usize, dir: [f64; 2]) -> Result<DVector<f64>> {
    check_label(mesh, label)?;
    let mut f = DVector::zeros(mesh.num_nodes());
    for t in 0..mesh.num_triangles() {
        if mesh.labels()[t] != label {
            continue;
        }
        let (g, area) = element_gradients(mesh, t)?;
        for (k, &i) in mesh.triangles()[t].iter().enumerate() {
            f[i] += area * (dir[0] * g[k][0] + dir[1] * g[k][1]);
        }
    }
    Ok(f)
}

/// Vector `e` with `eᵀu` equal to the mean of `u` over the horizontal slab
/// `y0 ≤ y ≤ y1` (intersected with the mesh). Triangles are clipped
/// against the slab, so the integral is exact for P1 fields.
pub fn strip_mean_functional(mesh: &Mesh, y0: f64, y1: f64) -> Result<DVector<f64>> {
    if !(y1 > y0) {
        return Err(Error::InvalidMesh(format!("empty strip [{y0}, {y1}]")));
    }
    let mut e = DVector::zeros(mesh.num_nodes());
    let mut total = 0.0;
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let verts: Vec<Point> = tri.iter().map(|&i| mesh.nodes()[i]).collect();
        let poly = clip_half_plane(&verts, |p| p[1] - y0);
        let poly = clip_half_plane(&poly, |p| y1 - p[1]);
        let (area, centroid) = polygon_area_centroid(&poly);
        if area <= 0.0 {
            continue;
        }
        let (g, _) = element_gradients(mesh, t)?;
        let p0 = verts[0];
        // barycentric values at the centroid
        let l1 = g[1][0] * (centroid[0] - p0[0]) + g[1][1] * (centroid[1] - p0[1]);
        let l2 = g[2][0] * (centroid[0] - p0[0]) + g[2][1] * (centroid[1] - p0[1]);
        let lam = [1.0 - l1 - l2, l1, l2];
        for k in 0..3 {
            e[tri[k]] += area * lam[k];
        }
        total += area;
    }
    if total <= 0.0 {
        return Err(Error::InvalidMesh(format!("strip [{y0}, {y1}] misses the mesh")));
    }
    Ok(e / total)
}

/// Keeps the part of a convex polygon where `side(p) ≥ 0`.
fn clip_half_plane(poly: &[Point], side: impl Fn(Point) -> f64) -> Vec<Point> {
    let mut out = Vec::new();
    let n = poly.len();
    for k in 0..n {
        let (a, b) = (poly[k], poly[(k + 1) % n]);
        let (sa, sb) = (side(a), side(b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa >= 0.0) != (sb >= 0.0) {
            let s = sa / (sa - sb);
            out.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
        }
    }
    out
}

fn polygon_area_centroid(poly: &[Point]) -> (f64, Point) {
    if poly.len() < 3 {
        return (0.0, [0.0, 0.0]);
    }
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        let cross = p[0] * q[1] - q[0] * p[1];
        a2 += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    if a2 <= 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    (0.5 * a2, [cx / (3.0 * a2), cy / (3.0 * a2)])
}

/// Eliminates the Dirichlet nodes of a node-indexed system (homogeneous data).
pub fn apply_dirichlet(matrix: &SparseMatrix, rhs: &DVector<f64>, mesh: &Mesh) -> Result<(SparseMatrix, DVector<f64>)> {
    let n = mesh.num_nodes();
    if matrix.nrows() != n || matrix.ncols() != n || rhs.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "system {}x{} with rhs {} on a mesh of {n} nodes",
            matrix.nrows(),
            matrix.ncols(),
            rhs.len()
        )));
    }
    Ok((restrict_matrix(matrix, mesh), restrict_vector(rhs, mesh)))
}

pub fn restrict_matrix(matrix: &SparseMatrix, mesh: &Mesh) -> SparseMatrix {
    matrix.submatrix(mesh.free_nodes())
}

pub fn restrict_vector(v: &DVector<f64>, mesh: &Mesh) -> DVector<f64> {
    DVector::from_iterator(mesh.num_free(), mesh.free_nodes().iter().map(|&i| v[i]))
}

/// Nodal field from free-DOF values, zero on the Dirichlet boundary.
pub fn extend_vector(u: &DVector<f64>, mesh: &Mesh) -> DVector<f64> {
    let mut full = DVector::zeros(mesh.num_nodes());
    for (k, &i) in mesh.free_nodes().iter().enumerate() {
        full[i] = u[k];
    }
    full
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::cholesky::solve_sparse;

    fn unit_square() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![1, 1],
        )
        .unwrap()
    }

    #[test]
    fn unit_square_stiffness() {
        let k = assemble_subdomain_stiffness(&unit_square(), 1, IDENTITY).unwrap();
        // right-angle corners 1 and 3 each belong to one triangle
        assert!((k.get(1, 1) - 1.0).abs() < 1e-15);
        assert!((k.get(3, 3) - 1.0).abs() < 1e-15);
        assert!((k.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((k.get(0, 1) + 0.5).abs() < 1e-15);
        assert_eq!(k.get(1, 3), 0.0);
        assert_eq!(k.asymmetry(), 0.0);
        let ones = DVector::from_element(4, 1.0);
        assert!(k.mul_vec(&ones).norm() < 1e-14);
    }

    #[test]
    fn zero_coefficient_gives_zero_matrix() {
        let k = assemble_subdomain_stiffness(&unit_square(), 1, [[0.0; 2]; 2]).unwrap();
        assert_eq!(k.nnz(), 0);
    }

    #[test]
    fn unknown_label_and_bad_coefficient() {
        assert_eq!(
            assemble_subdomain_mass(&unit_square(), 4).unwrap_err(),
            Error::UnknownSubdomain(4)
        );
        assert!(assemble_subdomain_stiffness(&unit_square(), 1, [[1.0, 0.5], [0.0, 1.0]]).is_err());
        assert!(assemble_subdomain_stiffness(&unit_square(), 1, [[-1.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn single_triangle_mass() {
        let m = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], vec![1]).unwrap();
        let mm = assemble_subdomain_mass(&m, 1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let w = if i == j { 2.0 } else { 1.0 };
                assert!((mm.get(i, j) - 0.5 / 12.0 * w).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn mass_row_sums_are_nodal_areas() {
        let m = Mesh::structured(&[0.0, 1.0, 2.5], &[0.0, 1.5], &[3, 2], &[4]).unwrap();
        let mm = assemble_mass(&m).unwrap();
        let ones = DVector::from_element(m.num_nodes(), 1.0);
        let rows = mm.mul_vec(&ones);
        assert!((rows.sum() - 3.75).abs() < 1e-13);
        let mut lumped = DVector::zeros(m.num_nodes());
        for t in 0..m.num_triangles() {
            for &i in &m.triangles()[t] {
                lumped[i] += m.triangle_area(t) / 3.0;
            }
        }
        assert!((rows - lumped).norm() < 1e-14);
    }

    #[test]
    fn mass_of_linear_field_converges() {
        // ∫_{[0,1]²} (1 + 2x − y)² = 8/3, P1 interpolation is exact for linears
        let exact = 8.0 / 3.0;
        for n in [2, 4, 8] {
            let m = Mesh::structured(&[0.0, 1.0], &[0.0, 1.0], &[n], &[n]).unwrap();
            let mm = assemble_mass(&m).unwrap();
            let u = DVector::from_iterator(m.num_nodes(), m.nodes().iter().map(|p| 1.0 + 2.0 * p[0] - p[1]));
            assert!((mm.bilinear(&u, &u) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn strip_poisson_converges_quadratically() {
        // −u_xx = 1 with the y-diffusion switched off decouples into 1D problems
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let m = Mesh::structured(&[0.0, 1.0], &[0.0, 1.0], &[n], &[n]).unwrap();
            let k = assemble_subdomain_stiffness(&m, 1, [[1.0, 0.0], [0.0, 0.0]]).unwrap();
            let f = assemble_source(&m, 1, 1.0).unwrap();
            let (kr, fr) = apply_dirichlet(&k, &f, &m).unwrap();
            let u = extend_vector(&solve_sparse(&kr, &fr, 1e-12).unwrap(), &m);
            let mut err = 0.0f64;
            for (i, p) in m.nodes().iter().enumerate() {
                if !m.boundary()[i] {
                    err = err.max((u[i] - p[0] * (1.0 - p[0]) / 2.0).abs());
                }
            }
            errs.push(err);
        }
        assert!(errs[2] < 1e-10 || errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn strip_functional_averages() {
        let m = Mesh::structured(&[0.0, 2.0], &[0.0, 3.0], &[3], &[5]).unwrap();
        let e = strip_mean_functional(&m, 1.1, 1.7).unwrap();
        let ones = DVector::from_element(m.num_nodes(), 1.0);
        assert!((e.dot(&ones) - 1.0).abs() < 1e-14);
        let y = DVector::from_iterator(m.num_nodes(), m.nodes().iter().map(|p| p[1]));
        assert!((e.dot(&y) - 1.4).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_on_all_boundary_mesh_is_empty() {
        let m = unit_square();
        let k = assemble_subdomain_stiffness(&m, 1, IDENTITY).unwrap();
        let (kr, fr) = apply_dirichlet(&k, &DVector::zeros(4), &m).unwrap();
        assert_eq!(kr.nrows(), 0);
        assert_eq!(fr.len(), 0);
    }
}
