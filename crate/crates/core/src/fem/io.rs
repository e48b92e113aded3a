//! Plain-text mesh format.
//!
//! ```text
//! nodes <N>
//! <index> <x> <y>
//! ...
//! triangles <T>
//! <index> <a> <b> <c> <label>
//! ...
//! ```
//! Dirichlet nodes are recomputed from the outer boundary on import.

use std::fmt::Write as _;

use super::mesh::{Mesh, Point};
use crate::error::{Error, Result};

pub fn write_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    writeln!(s, "nodes {}", mesh.num_nodes()).unwrap();
    for (i, p) in mesh.nodes().iter().enumerate() {
        writeln!(s, "{i} {:.17e} {:.17e}", p[0], p[1]).unwrap();
    }
    writeln!(s, "triangles {}", mesh.num_triangles()).unwrap();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        writeln!(s, "{t} {} {} {} {}", tri[0], tri[1], tri[2], mesh.labels()[t]).unwrap();
    }
    s
}

pub fn read_mesh(text: &str) -> Result<Mesh> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let (line, first) = lines.first().copied().ok_or(Error::Parse {
        line: 0,
        message: "empty mesh file".into(),
    })?;
    let mut it = first.split_whitespace();
    if it.next() != Some("nodes") {
        return Err(Error::Parse {
            line,
            message: "expected 'nodes'".into(),
        });
    }
    let n: usize = parse(it.next(), line)?;
    let lines = &lines[1..];
    if lines.len() < n + 1 {
        return Err(Error::Parse {
            line: 0,
            message: "truncated node list".into(),
        });
    }
    let mut nodes: Vec<Point> = Vec::with_capacity(n);
    for (k, &(line, l)) in lines[..n].iter().enumerate() {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 || parse::<usize>(f.first().copied(), line)? != k {
            return Err(Error::Parse {
                line,
                message: "expected '<index> <x> <y>' in order".into(),
            });
        }
        nodes.push([parse(Some(f[1]), line)?, parse(Some(f[2]), line)?]);
    }
    let (line, l) = lines[n];
    let mut it = l.split_whitespace();
    if it.next() != Some("triangles") {
        return Err(Error::Parse {
            line,
            message: "expected 'triangles'".into(),
        });
    }
    let t: usize = parse(it.next(), line)?;
    let rest = &lines[n + 1..];
    if rest.len() != t {
        return Err(Error::Parse {
            line,
            message: format!("expected {t} triangles, found {}", rest.len()),
        });
    }
    let mut triangles = Vec::with_capacity(t);
    let mut labels = Vec::with_capacity(t);
    for (k, &(line, l)) in rest.iter().enumerate() {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 5 || parse::<usize>(f.first().copied(), line)? != k {
            return Err(Error::Parse {
                line,
                message: "expected '<index> <a> <b> <c> <label>' in order".into(),
            });
        }
        triangles.push([
            parse(Some(f[1]), line)?,
            parse(Some(f[2]), line)?,
            parse(Some(f[3]), line)?,
        ]);
        labels.push(parse(Some(f[4]), line)?);
    }
    Mesh::new(nodes, triangles, labels)
}

fn parse<T: std::str::FromStr>(field: Option<&str>, line: usize) -> Result<T> {
    let f = field.ok_or(Error::Parse {
        line,
        message: "missing field".into(),
    })?;
    f.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse '{f}'"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = Mesh::structured(&[0.0, 0.3, 1.0], &[0.0, 1.0 / 3.0], &[2, 1], &[3]).unwrap();
        let text = write_mesh(&m);
        assert_eq!(read_mesh(&text).unwrap(), m);
        assert_eq!(write_mesh(&read_mesh(&text).unwrap()), text);
    }

    #[test]
    fn bad_input_names_the_line() {
        let err = read_mesh("nodes 1\n0 0.0 zero\ntriangles 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
