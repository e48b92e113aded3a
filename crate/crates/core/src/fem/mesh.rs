//! Triangular meshes with subdomain labels and Dirichlet markers.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    labels: Vec<usize>,
    boundary: Vec<bool>,
    free: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
}

/// Signed area of the triangle `(a, b, c)`; positive for counter-clockwise order.
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Builds a mesh and marks every node on an edge owned by a single
    /// triangle as a Dirichlet node.
    pub fn new(nodes: Vec<Point>, triangles: Vec<[usize; 3]>, labels: Vec<usize>) -> Result<Self> {
        let boundary = outer_boundary(nodes.len(), &triangles)?;
        Self::with_boundary(nodes, triangles, labels, boundary)
    }

    /// Builds a mesh with explicit boundary flags. The flags must match the
    /// outer boundary of the triangulation exactly.
    pub fn with_boundary(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        labels: Vec<usize>,
        boundary: Vec<bool>,
    ) -> Result<Self> {
        if labels.len() != triangles.len() {
            return Err(Error::InvalidMesh(format!(
                "{} labels for {} triangles",
                labels.len(),
                triangles.len()
            )));
        }
        if boundary.len() != nodes.len() {
            return Err(Error::InvalidMesh(format!(
                "{} boundary flags for {} nodes",
                boundary.len(),
                nodes.len()
            )));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nodes.len()) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing node")));
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if !(area > 0.0) {
                return Err(Error::DegenerateTriangle { index: t, area });
            }
            if labels[t] == 0 {
                return Err(Error::InvalidMesh(format!("triangle {t} has label 0")));
            }
        }
        let expected = outer_boundary(nodes.len(), &triangles)?;
        if expected != boundary {
            return Err(Error::InvalidMesh(
                "boundary flags differ from the outer boundary".into(),
            ));
        }
        let mut free = Vec::new();
        let mut dof_of_node = vec![None; nodes.len()];
        for (i, &b) in boundary.iter().enumerate() {
            if !b {
                dof_of_node[i] = Some(free.len());
                free.push(i);
            }
        }
        Ok(Self {
            nodes,
            triangles,
            labels,
            boundary,
            free,
            dof_of_node,
        })
    }

    /// Tensor-product mesh of a rectangle split by the grid lines `xs`, `ys`.
    /// Cell `(i, j)` (column `i`, row `j`) is divided into `nx[i] × ny[j]`
    /// squares, each cut along an alternating diagonal, and labeled
    /// `1 + i + j·(xs.len() − 1)`.
    pub fn structured(xs: &[f64], ys: &[f64], nx: &[usize], ny: &[usize]) -> Result<Self> {
        if xs.len() != nx.len() + 1 || ys.len() != ny.len() + 1 || nx.is_empty() || ny.is_empty() {
            return Err(Error::InvalidMesh("grid lines and divisions disagree".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || ys.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMesh("grid lines must increase".into()));
        }
        if nx.iter().chain(ny).any(|&n| n == 0) {
            return Err(Error::InvalidMesh("zero divisions".into()));
        }
        let (gx, cell_x) = subdivide(xs, nx);
        let (gy, cell_y) = subdivide(ys, ny);
        let ncx = gx.len();
        let mut nodes = Vec::with_capacity(ncx * gy.len());
        for &y in &gy {
            for &x in &gx {
                nodes.push([x, y]);
            }
        }
        let id = |i: usize, j: usize| j * ncx + i;
        let mut triangles = Vec::new();
        let mut labels = Vec::new();
        for j in 0..gy.len() - 1 {
            for i in 0..ncx - 1 {
                let label = 1 + cell_x[i] + cell_y[j] * nx.len();
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                if (i + j) % 2 == 0 {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                } else {
                    triangles.push([a, b, d]);
                    triangles.push([b, c, d]);
                }
                labels.push(label);
                labels.push(label);
            }
        }
        Self::new(nodes, triangles, labels)
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Node indices of the free (non-Dirichlet) degrees of freedom.
    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn has_label(&self, label: usize) -> bool {
        self.labels.contains(&label)
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Same connectivity with every node moved by `map`.
    pub fn mapped(&self, map: impl Fn(Point) -> Point) -> Result<Self> {
        let nodes = self.nodes.iter().map(|&x| map(x)).collect();
        Self::with_boundary(
            nodes,
            self.triangles.clone(),
            self.labels.clone(),
            self.boundary.clone(),
        )
    }

    /// Longest edge length.
    pub fn max_edge(&self) -> f64 {
        let mut h = 0.0f64;
        for tri in &self.triangles {
            for k in 0..3 {
                let (p, q) = (self.nodes[tri[k]], self.nodes[tri[(k + 1) % 3]]);
                h = h.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        h
    }
}

fn subdivide(lines: &[f64], n: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut pts = vec![lines[0]];
    let mut cell = Vec::new();
    for (c, (w, &k)) in lines.windows(2).zip(n).enumerate() {
        for s in 1..=k {
            pts.push(if s == k {
                w[1]
            } else {
                w[0] + (w[1] - w[0]) * s as f64 / k as f64
            });
            cell.push(c);
        }
    }
    (pts, cell)
}

fn outer_boundary(num_nodes: usize, triangles: &[[usize; 3]]) -> Result<Vec<bool>> {
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut flags = vec![false; num_nodes];
    for ((a, b), count) in edges {
        match count {
            1 => {
                flags[a] = true;
                flags[b] = true;
            }
            2 => {}
            _ => {
                return Err(Error::InvalidMesh(format!(
                    "edge ({a}, {b}) shared by {count} triangles"
                )))
            }
        }
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_has_no_free_nodes() {
        let m = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![1, 1],
        )
        .unwrap();
        assert_eq!(m.num_free(), 0);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clockwise_triangle_is_rejected() {
        let err = Mesh::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], vec![[0, 1, 2]], vec![1]).unwrap_err();
        assert!(matches!(err, Error::DegenerateTriangle { index: 0, .. }));
    }

    #[test]
    fn structured_grid_counts() {
        let m = Mesh::structured(&[0.0, 1.0, 3.0], &[0.0, 2.0], &[2, 3], &[4]).unwrap();
        assert_eq!(m.num_nodes(), 6 * 5);
        assert_eq!(m.num_triangles(), 2 * 5 * 4);
        assert_eq!(m.num_free(), 4 * 3);
        assert!((m.total_area() - 6.0).abs() < 1e-12);
        assert_eq!(m.max_label(), 2);
    }

    #[test]
    fn wrong_boundary_flags_are_rejected() {
        let m = Mesh::structured(&[0.0, 1.0], &[0.0, 1.0], &[2], &[2]).unwrap();
        let mut flags = m.boundary().to_vec();
        flags[4] = true;
        assert!(Mesh::with_boundary(m.nodes().to_vec(), m.triangles().to_vec(), m.labels().to_vec(), flags).is_err());
    }
}
