//! Closed reference shapes used by tests, synthetic data and metrics checks.

use std::collections::HashMap;

use super::TriMesh;
use crate::{Point3, Vec3};

/// Icosahedral sphere centred at the origin; `20 * 4^subdivisions` faces.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let normals = verts.clone();
    let points = verts.iter().map(|v| Point3::from(v * radius)).collect();
    TriMesh::with_normals(points, faces, normals).expect("icosphere is valid")
}

/// Icosphere translated to `center`.
pub fn sphere_at(subdivisions: u32, radius: f64, center: Point3) -> TriMesh {
    icosphere(subdivisions, radius).translated(&center.coords)
}

/// Axis-aligned box with outward winding.
pub fn cuboid(min: Point3, max: Point3) -> TriMesh {
    let c = |i: usize| {
        Point3::new(
            if i & 1 == 0 { min.x } else { max.x },
            if i & 2 == 0 { min.y } else { max.y },
            if i & 4 == 0 { min.z } else { max.z },
        )
    };
    let vertices = (0..8).map(c).collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3], // z = min
        [4, 5, 6],
        [5, 7, 6], // z = max
        [0, 1, 4],
        [1, 5, 4], // y = min
        [2, 6, 3],
        [3, 6, 7], // y = max
        [0, 4, 2],
        [2, 4, 6], // x = min
        [1, 3, 5],
        [3, 7, 5], // x = max
    ];
    TriMesh::new(vertices, faces).expect("box is valid")
}

/// Upper half (z > 0 by face centroid) of an icosphere: an open shell.
pub fn hemisphere(subdivisions: u32, radius: f64) -> TriMesh {
    let s = icosphere(subdivisions, radius);
    s.select_faces(|f| s.triangle(f).iter().map(|p| p.z).sum::<f64>() > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        let s = icosphere(3, 1.0);
        assert_eq!(s.face_count(), 1280);
        assert_eq!(s.vertex_count(), 642);
        assert!(s.is_watertight());
        assert!(s.signed_volume() > 0.0);
    }

    #[test]
    fn icosphere_vertices_on_sphere() {
        let s = icosphere(2, 2.5);
        for p in s.vertices() {
            assert!((p.coords.norm() - 2.5).abs() < 1e-12);
        }
    }
}
