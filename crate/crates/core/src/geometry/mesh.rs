use nalgebra::Isometry3;

use super::bvh::Aabb;
use crate::{Error, Point3, Result, Vec3};

/// Faces with twice-area below this are treated as degenerate.
const DEGENERATE_AREA2: f64 = 1e-20;

/// Indexed triangle mesh with per-vertex unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
}

impl TriMesh {
    /// Builds a mesh, dropping zero-area faces and computing area-weighted
    /// vertex normals.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let faces = clean_faces(&vertices, faces)?;
        let normals = area_weighted_normals(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            normals,
        })
    }

    /// Builds a mesh with caller-supplied vertex normals (renormalized).
    pub fn with_normals(
        vertices: Vec<Point3>,
        faces: Vec<[usize; 3]>,
        normals: Vec<Vec3>,
    ) -> Result<Self> {
        if normals.len() != vertices.len() {
            return Err(Error::Mesh(format!(
                "{} normals for {} vertices",
                normals.len(),
                vertices.len()
            )));
        }
        let faces = clean_faces(&vertices, faces)?;
        let normals = normals
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 && len.is_finite() {
                    n / len
                } else {
                    Vec3::z()
                }
            })
            .collect();
        Ok(Self {
            vertices,
            faces,
            normals,
        })
    }

    /// Same topology, new positions; normals recomputed.
    pub fn with_positions(&self, vertices: Vec<Point3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Mesh("vertex count changed".into()));
        }
        let normals = area_weighted_normals(&vertices, &self.faces);
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            normals,
        })
    }

    /// Builds without degenerate-face cleanup. Used where topology must be
    /// preserved exactly (posed bodies share the template's faces).
    pub(crate) fn from_parts_unchecked(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Self {
        let normals = area_weighted_normals(&vertices, &faces);
        Self {
            vertices,
            faces,
            normals,
        }
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized normal, twice the face area in length.
    #[inline]
    pub fn face_area_vector(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_area_vector(f).normalize()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_area_vector(f).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (self.vertices[a].coords, self.vertices[b].coords, self.vertices[c].coords);
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.vertices.len().max(1) as f64;
        Point3::from(self.vertices.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords) / n)
    }

    /// Count of directed half-edges without an opposite partner, plus
    /// half-edges that appear more than once.
    pub fn boundary_edge_count(&self) -> usize {
        use std::collections::HashMap;
        let mut half: HashMap<(usize, usize), usize> = HashMap::with_capacity(self.faces.len() * 3);
        for &[a, b, c] in &self.faces {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *half.entry((u, v)).or_insert(0) += 1;
            }
        }
        half.iter()
            .map(|(&(u, v), &n)| {
                let opposite = half.get(&(v, u)).copied().unwrap_or(0);
                if n == 1 && opposite == 1 {
                    0
                } else {
                    n
                }
            })
            .sum()
    }

    /// Closed, consistently oriented two-manifold edge structure.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.boundary_edge_count() == 0
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| iso * p).collect(),
            faces: self.faces.clone(),
            normals: self.normals.iter().map(|n| iso.rotation * n).collect(),
        }
    }

    pub fn translated(&self, t: &Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| p + t).collect(),
            faces: self.faces.clone(),
            normals: self.normals.clone(),
        }
    }

    /// Negated vertex normals, geometry untouched.
    pub fn with_flipped_normals(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
            normals: self.normals.iter().map(|n| -n).collect(),
        }
    }

    /// Sub-mesh made of the selected faces (vertices kept as-is).
    pub fn select_faces(&self, keep: impl Fn(usize) -> bool) -> Self {
        let faces: Vec<_> = (0..self.faces.len())
            .filter(|&f| keep(f))
            .map(|f| self.faces[f])
            .collect();
        Self {
            vertices: self.vertices.clone(),
            faces,
            normals: self.normals.clone(),
        }
    }
}

fn clean_faces(vertices: &[Point3], faces: Vec<[usize; 3]>) -> Result<Vec<[usize; 3]>> {
    let n = vertices.len();
    if let Some(p) = vertices.iter().position(|p| !p.coords.iter().all(|x| x.is_finite())) {
        return Err(Error::Mesh(format!("vertex {p} is not finite")));
    }
    let mut out = Vec::with_capacity(faces.len());
    let mut dropped = 0usize;
    for (i, f) in faces.into_iter().enumerate() {
        if f.iter().any(|&v| v >= n) {
            return Err(Error::Mesh(format!("face {i} indexes past {n} vertices")));
        }
        let [a, b, c] = f;
        let area2 = (vertices[b] - vertices[a])
            .cross(&(vertices[c] - vertices[a]))
            .norm_squared();
        if a == b || b == c || a == c || area2 <= DEGENERATE_AREA2 {
            dropped += 1;
            continue;
        }
        out.push(f);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} degenerate faces");
    }
    Ok(out)
}

fn area_weighted_normals(vertices: &[Point3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for &[a, b, c] in faces {
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        acc[a] += n;
        acc[b] += n;
        acc[c] += n;
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vec3::z()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;

    #[test]
    fn degenerate_faces_dropped() {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [0, 1, 3], [1, 1, 2]]).unwrap();
        assert_eq!(m.face_count(), 1);
    }

    #[test]
    fn out_of_range_index_rejected() {
        let v = vec![Point3::origin(); 3];
        assert!(TriMesh::new(v, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn unit_normals() {
        let m = primitives::icosphere(2, 1.0);
        for n in m.normals() {
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn box_is_watertight_with_positive_volume() {
        let m = primitives::cuboid(Point3::new(-1.0, -2.0, -0.5), Point3::new(1.0, 2.0, 0.5));
        assert!(m.is_watertight());
        assert!((m.signed_volume() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_has_boundary() {
        let m = primitives::icosphere(2, 1.0);
        let half = m.select_faces(|f| m.triangle(f).iter().map(|p| p.z).sum::<f64>() > 0.0);
        assert!(!half.is_watertight());
        assert!(half.boundary_edge_count() > 0);
    }
}
