//! Axis-aligned bounding-volume hierarchy over mesh faces.
//!
//! Besides boxes, every node carries the area-weighted normal sum and
//! area-weighted centroid of its faces, which lets winding-number queries
//! replace distant subtrees by a single dipole term.

use super::TriMesh;
use crate::{Point3, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Point3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// Expands every side by `fraction` of the largest extent.
    pub fn padded(&self, fraction: f64) -> Aabb {
        let pad = self.extent().max() * fraction;
        let d = Vec3::repeat(pad);
        Aabb {
            min: self.min - d,
            max: self.max + d,
        }
    }

    #[inline]
    pub fn distance_squared(&self, p: &Point3) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }
}

#[derive(Debug, Clone)]
pub(crate) enum NodeKind {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) bounds: Aabb,
    pub(crate) kind: NodeKind,
    /// Sum over faces of area * unit normal.
    pub(crate) area_normal: Vec3,
    /// Area-weighted face centroid.
    pub(crate) center: Point3,
    /// Max distance from `center` to a box corner.
    pub(crate) radius: f64,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    pub(crate) nodes: Vec<Node>,
    /// Face indices in leaf order.
    pub(crate) order: Vec<usize>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let n = mesh.face_count();
        let mut order: Vec<usize> = (0..n).collect();
        let centroids: Vec<Point3> = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                Point3::from((a.coords + b.coords + c.coords) / 3.0)
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        if n > 0 {
            build_node(mesh, &centroids, &mut order, 0, n, &mut nodes);
        }
        Self { nodes, order }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root_bounds(&self) -> Option<Aabb> {
        self.nodes.first().map(|n| n.bounds)
    }

    /// Checks that every face sits in exactly one leaf and that parent boxes
    /// contain their children.
    pub fn validate(&self, face_count: usize) -> bool {
        let mut seen = vec![0u32; face_count];
        for node in &self.nodes {
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.order[start..start + count] {
                        seen[f] += 1;
                    }
                }
                NodeKind::Inner { left, right } => {
                    if !node.bounds.contains_box(&self.nodes[left].bounds)
                        || !node.bounds.contains_box(&self.nodes[right].bounds)
                    {
                        return false;
                    }
                }
            }
        }
        seen.iter().all(|&c| c == 1)
    }
}

fn build_node(
    mesh: &TriMesh,
    centroids: &[Point3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let slice = &mut order[start..end];
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    let mut area_normal = Vec3::zeros();
    let mut weighted = Vec3::zeros();
    let mut area_sum = 0.0;
    for &f in slice.iter() {
        for p in mesh.triangle(f) {
            bounds.grow(&p);
        }
        cbounds.grow(&centroids[f]);
        let an = mesh.face_area_vector(f) * 0.5;
        let a = an.norm();
        area_normal += an;
        weighted += centroids[f].coords * a;
        area_sum += a;
    }
    let center = if area_sum > 0.0 {
        Point3::from(weighted / area_sum)
    } else {
        bounds.center()
    };
    let radius = (0..8)
        .map(|i| {
            let corner = Point3::new(
                if i & 1 == 0 { bounds.min.x } else { bounds.max.x },
                if i & 2 == 0 { bounds.min.y } else { bounds.max.y },
                if i & 4 == 0 { bounds.min.z } else { bounds.max.z },
            );
            (corner - center).norm()
        })
        .fold(0.0, f64::max);

    let idx = nodes.len();
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf {
            start,
            count: end - start,
        },
        area_normal,
        center,
        radius,
    });
    if end - start <= LEAF_SIZE {
        return idx;
    }
    let ext = cbounds.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    let left = build_node(mesh, centroids, order, start, start + mid, nodes);
    let right = build_node(mesh, centroids, order, start + mid, end, nodes);
    nodes[idx].kind = NodeKind::Inner { left, right };
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;

    #[test]
    fn structure_is_valid() {
        let m = primitives::icosphere(3, 1.0);
        let bvh = Bvh::build(&m);
        assert!(bvh.validate(m.face_count()));
    }

    #[test]
    fn empty_mesh_gives_empty_tree() {
        let m = TriMesh::new(vec![], vec![]).unwrap();
        assert!(Bvh::build(&m).is_empty());
    }

    #[test]
    fn root_area_normal_vanishes_for_closed_mesh() {
        let m = primitives::icosphere(2, 1.0);
        let bvh = Bvh::build(&m);
        assert!(bvh.nodes[0].area_normal.norm() < 1e-12);
    }
}
