//! The canonical UV sphere: a midpoint-subdivided icosahedron.

use std::collections::HashMap;

use super::vec3::{self, Vec3};
use crate::error::{Result, TuvfError};

pub const MAX_LEVEL: u32 = 6;

/// Vertex `i` is the correspondence anchor shared by every instance of a
/// category; the ordering is a pure function of `level`.
#[derive(Debug, Clone, PartialEq)]
pub struct UvSphere {
    pub level: u32,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Sorted neighbour lists.
    pub adjacency: Vec<Vec<usize>>,
}

pub fn vertex_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

/// Base icosahedron with poles on ±z and counter-clockwise (outward) faces.
fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let z = 1.0 / 5f64.sqrt();
    let r = 2.0 / 5f64.sqrt();
    let mut v = vec![[0.0, 0.0, 1.0]];
    for k in 0..5 {
        let a = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
        v.push([r * a.cos(), r * a.sin(), z]);
    }
    for k in 0..5 {
        let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 5.0;
        v.push([r * a.cos(), r * a.sin(), -z]);
    }
    v.push([0.0, 0.0, -1.0]);

    let mut f = Vec::with_capacity(20);
    for k in 0..5 {
        let (u0, u1) = (1 + k, 1 + (k + 1) % 5);
        let (l0, l1) = (6 + k, 6 + (k + 1) % 5);
        f.push([0, u0, u1]);
        f.push([u0, l0, u1]);
        f.push([u1, l0, l1]);
        f.push([11, l1, l0]);
    }
    (v, f)
}

pub fn build_icosphere(level: u32) -> Result<UvSphere> {
    if level > MAX_LEVEL {
        return Err(TuvfError::invalid(format!("icosphere level {level} outside 0..={MAX_LEVEL}")));
    }
    let (mut vertices, mut faces) = icosahedron();
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let m = vec3::normalize(vec3::scale(vec3::add(vertices[a], vertices[b]), 0.5));
                vertices.push(m);
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    let mut adjacency = vec![Vec::new(); vertices.len()];
    for &[a, b, c] in &faces {
        for (x, y) in [(a, b), (b, c), (c, a)] {
            adjacency[x].push(y);
            adjacency[y].push(x);
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }
    Ok(UvSphere {
        level,
        vertices,
        faces,
        adjacency,
    })
}

impl UvSphere {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, adj)| adj.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        vec3::flatten(&self.vertices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_counts() {
        assert_eq!(build_icosphere(0).unwrap().len(), 12);
        assert_eq!(build_icosphere(4).unwrap().len(), 2562);
        assert_eq!(build_icosphere(5).unwrap().len(), 10242);
        for l in 0..=5 {
            assert_eq!(build_icosphere(l).unwrap().len(), vertex_count(l));
        }
    }

    #[test]
    fn rejects_deep_levels() {
        assert!(build_icosphere(7).is_err());
    }

    #[test]
    fn unit_norm_and_outward_faces() {
        let s = build_icosphere(3).unwrap();
        for v in &s.vertices {
            assert!((vec3::norm(*v) - 1.0).abs() < 1e-12);
        }
        for &[a, b, c] in &s.faces {
            let n = vec3::cross(vec3::sub(s.vertices[b], s.vertices[a]), vec3::sub(s.vertices[c], s.vertices[a]));
            assert!(vec3::dot(n, s.vertices[a]) > 0.0);
        }
    }

    #[test]
    fn euler_characteristic() {
        let s = build_icosphere(2).unwrap();
        let e = s.edges().len();
        assert_eq!(s.len() as i64 - e as i64 + s.faces.len() as i64, 2);
    }

    #[test]
    fn poles_on_z() {
        let s = build_icosphere(1).unwrap();
        assert_eq!(s.vertices[0], [0.0, 0.0, 1.0]);
        assert_eq!(s.vertices[11], [0.0, 0.0, -1.0]);
    }
}
