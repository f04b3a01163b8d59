use std::f64::consts::PI;

use super::bvh::{Bvh, NodeKind};
use super::TriMesh;
use crate::{Error, Point3, Result, Vec3};

/// Subtrees whose centroid is farther than this many node radii from the
/// query contribute through their dipole term only.
const WINDING_FAR_FIELD: f64 = 2.5;

/// Closest point on a mesh surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub face: usize,
    /// Barycentric coordinates w.r.t. the face's three vertices.
    pub bary: [f64; 3],
    pub position: Point3,
    /// Unsigned distance from the query.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedDistance {
    /// Negative inside, positive outside. Unsigned when `sign_reliable` is false.
    pub value: f64,
    pub sign_reliable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalSample {
    pub normal: Vec3,
    /// Set when interpolated vertex normals cancelled and the face normal
    /// was used instead.
    pub fallback: bool,
}

/// Closest point on triangle `abc` to `p`, as barycentric coordinates.
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let u = 1.0 - v - w;
    if u < 0.0 {
        // rounding in the interior branch
        let s = v + w;
        return [0.0, v / s, w / s];
    }
    [u, v, w]
}

#[inline]
fn face_candidate(mesh: &TriMesh, f: usize, p: &Point3) -> (f64, [f64; 3], Point3) {
    let [a, b, c] = mesh.triangle(f);
    let bary = closest_point_on_triangle(p, &a, &b, &c);
    let q = Point3::from(a.coords * bary[0] + b.coords * bary[1] + c.coords * bary[2]);
    ((p - q).norm_squared(), bary, q)
}

/// Exhaustive scan over all faces. Ties go to the lowest face index.
pub fn closest_point_brute(mesh: &TriMesh, p: &Point3) -> Result<SurfacePoint> {
    let mut best: Option<(f64, usize, [f64; 3], Point3)> = None;
    for f in 0..mesh.face_count() {
        let (d2, bary, q) = face_candidate(mesh, f, p);
        if best.is_none_or(|(bd, bf, _, _)| (d2, f) < (bd, bf)) {
            best = Some((d2, f, bary, q));
        }
    }
    let (d2, face, bary, position) = best.ok_or(Error::EmptyMesh)?;
    Ok(SurfacePoint {
        face,
        bary,
        position,
        distance: d2.sqrt(),
    })
}

/// Signed solid angle subtended by triangle `abc` at `p`; positive when `p`
/// lies behind the face (the side opposite its winding normal).
#[inline]
pub fn triangle_solid_angle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> f64 {
    let a = a - p;
    let b = b - p;
    let c = c - p;
    let la = a.norm();
    let lb = b.norm();
    let lc = c.norm();
    let num = a.dot(&b.cross(&c));
    let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
    2.0 * num.atan2(den)
}

/// Generalized winding number by direct summation over every face.
pub fn winding_number_brute(mesh: &TriMesh, p: &Point3) -> f64 {
    (0..mesh.face_count())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            triangle_solid_angle(p, &a, &b, &c)
        })
        .sum::<f64>()
        / (4.0 * PI)
}

impl TriMesh {
    /// Barycentric interpolation of vertex normals at `sp`, renormalized.
    pub fn barycentric_normal(&self, sp: &SurfacePoint) -> NormalSample {
        let [a, b, c] = self.faces()[sp.face];
        let n = self.normals();
        let v = n[a] * sp.bary[0] + n[b] * sp.bary[1] + n[c] * sp.bary[2];
        let len = v.norm();
        if len > 1e-8 {
            NormalSample {
                normal: v / len,
                fallback: false,
            }
        } else {
            NormalSample {
                normal: self.face_normal(sp.face),
                fallback: true,
            }
        }
    }
}

/// A mesh bundled with its BVH and watertightness flag.
#[derive(Debug, Clone)]
pub struct IndexedMesh {
    mesh: TriMesh,
    bvh: Bvh,
    watertight: bool,
}

impl IndexedMesh {
    pub fn new(mesh: TriMesh) -> Self {
        let bvh = Bvh::build(&mesh);
        let watertight = mesh.is_watertight();
        Self {
            mesh,
            bvh,
            watertight,
        }
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn into_mesh(self) -> TriMesh {
        self.mesh
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn closest_point(&self, p: &Point3) -> Result<SurfacePoint> {
        if self.bvh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let nodes = &self.bvh.nodes;
        let mut best_d2 = f64::INFINITY;
        let mut best_face = usize::MAX;
        let mut best_bary = [0.0; 3];
        let mut best_pos = *p;
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, nodes[0].bounds.distance_squared(p)));
        while let Some((i, d2box)) = stack.pop() {
            if d2box > best_d2 {
                continue;
            }
            match nodes[i].kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.bvh.order[start..start + count] {
                        let (d2, bary, q) = face_candidate(&self.mesh, f, p);
                        if (d2, f) < (best_d2, best_face) {
                            best_d2 = d2;
                            best_face = f;
                            best_bary = bary;
                            best_pos = q;
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = nodes[left].bounds.distance_squared(p);
                    let dr = nodes[right].bounds.distance_squared(p);
                    // nearer child popped first
                    if dl <= dr {
                        stack.push((right, dr));
                        stack.push((left, dl));
                    } else {
                        stack.push((left, dl));
                        stack.push((right, dr));
                    }
                }
            }
        }
        Ok(SurfacePoint {
            face: best_face,
            bary: best_bary,
            position: best_pos,
            distance: best_d2.sqrt(),
        })
    }

    /// Hierarchical generalized winding number: exact near the query,
    /// dipole-approximated for distant subtrees.
    pub fn winding_number(&self, p: &Point3) -> f64 {
        if self.bvh.is_empty() {
            return 0.0;
        }
        let nodes = &self.bvh.nodes;
        let mut total = 0.0;
        let mut stack: Vec<usize> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(i) = stack.pop() {
            let node = &nodes[i];
            let d = node.center - p;
            let dist = d.norm();
            if dist > WINDING_FAR_FIELD * node.radius {
                total += d.dot(&node.area_normal) / (dist * dist * dist);
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.bvh.order[start..start + count] {
                        let [a, b, c] = self.mesh.triangle(f);
                        total += triangle_solid_angle(p, &a, &b, &c);
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        total / (4.0 * PI)
    }

    /// Ground-truth occupancy: 1 iff the winding number exceeds 0.5.
    pub fn winding_occupancy(&self, p: &Point3) -> Result<u8> {
        if !self.watertight {
            return Err(Error::Label("mesh is not watertight".into()));
        }
        Ok(u8::from(self.winding_number(p) > 0.5))
    }

    /// Signed distance, negative inside. For open meshes the unsigned
    /// distance is returned with `sign_reliable = false`.
    pub fn signed_distance(&self, p: &Point3) -> Result<SignedDistance> {
        let sp = self.closest_point(p)?;
        Ok(self.signed_from(p, &sp))
    }

    pub(crate) fn signed_from(&self, p: &Point3, sp: &SurfacePoint) -> SignedDistance {
        if !self.watertight {
            return SignedDistance {
                value: sp.distance,
                sign_reliable: false,
            };
        }
        let inside = self.winding_number(p) > 0.5;
        SignedDistance {
            value: if inside { -sp.distance } else { sp.distance },
            sign_reliable: true,
        }
    }
}
