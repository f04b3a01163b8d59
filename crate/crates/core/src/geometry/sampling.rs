//! Area-uniform point sampling on triangle meshes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TriMesh;
use crate::{Error, Point3, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: Point3,
    pub face: usize,
    pub bary: [f64; 3],
}

/// `n` points distributed uniformly by area, deterministic per seed.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_surface_with(mesh, n, &mut rng)
}

pub fn sample_surface_with(mesh: &TriMesh, n: usize, rng: &mut impl Rng) -> Result<Vec<SurfaceSample>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut cumulative = Vec::with_capacity(mesh.face_count());
    let mut total = 0.0;
    for f in 0..mesh.face_count() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Mesh("mesh has zero surface area".into()));
    }
    Ok((0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let face = cumulative
                .partition_point(|&c| c <= r)
                .min(mesh.face_count() - 1);
            let s = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            let bary = [1.0 - s, s * (1.0 - r2), s * r2];
            let [a, b, c] = mesh.triangle(face);
            let point = Point3::from(a.coords * bary[0] + b.coords * bary[1] + c.coords * bary[2]);
            SurfaceSample { point, face, bary }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;

    #[test]
    fn points_lie_on_their_faces() {
        let m = primitives::icosphere(2, 1.0);
        for s in sample_surface(&m, 500, 3).unwrap() {
            let [a, b, c] = m.triangle(s.face);
            let n = m.face_normal(s.face);
            assert!((s.point - a).dot(&n).abs() < 1e-12);
            assert!(s.bary.iter().all(|&w| (-1e-12..=1.0 + 1e-12).contains(&w)));
            let _ = (b, c);
        }
    }

    #[test]
    fn area_proportional() {
        // a unit box: each axis pair of faces holds a third of the area
        let m = primitives::cuboid(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 2.0, 3.0));
        let samples = sample_surface(&m, 60_000, 1).unwrap();
        let on_x = samples
            .iter()
            .filter(|s| s.point.x.abs() < 1e-12 || (s.point.x - 1.0).abs() < 1e-12)
            .count() as f64;
        // x-faces hold 2 * 6 of the 22 area units
        let expected = 12.0 / 22.0;
        assert!((on_x / 60_000.0 - expected).abs() < 0.01);
    }

    #[test]
    fn deterministic_and_empty() {
        let m = primitives::icosphere(1, 1.0);
        assert_eq!(sample_surface(&m, 10, 5).unwrap(), sample_surface(&m, 10, 5).unwrap());
        let empty = m.select_faces(|_| false);
        assert!(matches!(sample_surface(&empty, 10, 5), Err(Error::EmptyMesh)));
    }
}
