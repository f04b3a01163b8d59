//! Procedural humanoid template: a smooth union of capsules in an A-pose,
//! meshed with marching cubes, with distance-based skinning weights, a
//! hand-built linear shape basis and a ring-average joint regressor.

use serde::{Deserialize, Serialize};

use super::BodyTemplate;
use crate::geometry::{Aabb, TriMesh};
use crate::surface::{marching_cubes, OccupancyGrid};
use crate::{Error, Point3, Result, Vec3};

pub const JOINT_NAMES: [&str; 24] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Parent of each joint in the 24-joint layout; every parent index is
/// smaller than its child.
pub const SMPL_PARENTS: [i32; 24] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

/// Largest marching-cubes cell that still resolves the thinnest limb.
const MAX_CELL: f64 = 0.05;
const BLEND: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    /// Target vertex count; the mesh lands within a few percent of it.
    pub vertex_budget: usize,
    pub joints: usize,
    pub shape_dims: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            vertex_budget: 2000,
            joints: 24,
            shape_dims: 10,
        }
    }
}

fn p(x: f64, y: f64, z: f64) -> Point3 {
    Point3::new(x, y, z)
}

fn arm_dir() -> Vec3 {
    let a = (-50f64).to_radians();
    Vec3::new(a.cos(), a.sin(), 0.0)
}

/// Rest joint layout (left side is +x, the body faces +z, feet at y = 0).
fn design_joints() -> [Point3; 24] {
    let d = arm_dir();
    let shoulder = p(0.19, 1.40, -0.01);
    let elbow = shoulder + d * 0.27;
    let wrist = elbow + d * 0.25;
    let hand = wrist + d * 0.08;
    let m = |q: Point3| p(-q.x, q.y, q.z);
    [
        p(0.0, 0.93, 0.0),
        p(0.09, 0.88, 0.0),
        p(-0.09, 0.88, 0.0),
        p(0.0, 1.05, -0.01),
        p(0.10, 0.50, 0.01),
        p(-0.10, 0.50, 0.01),
        p(0.0, 1.18, -0.01),
        p(0.11, 0.09, -0.01),
        p(-0.11, 0.09, -0.01),
        p(0.0, 1.30, -0.01),
        p(0.11, 0.03, 0.11),
        p(-0.11, 0.03, 0.11),
        p(0.0, 1.50, -0.01),
        p(0.07, 1.42, -0.01),
        p(-0.07, 1.42, -0.01),
        p(0.0, 1.60, 0.01),
        shoulder,
        m(shoulder),
        elbow,
        m(elbow),
        wrist,
        m(wrist),
        hand,
        m(hand),
    ]
}

struct Capsule {
    a: Point3,
    b: Point3,
    radius: f64,
    /// Depth (z) stretch factor; values above one flatten the part.
    z_scale: f64,
}

impl Capsule {
    fn new(a: Point3, b: Point3, radius: f64) -> Self {
        Self {
            a,
            b,
            radius,
            z_scale: 1.0,
        }
    }

    fn flattened(mut self, z_scale: f64) -> Self {
        self.z_scale = z_scale;
        self
    }

    fn sdf(&self, q: &Point3) -> f64 {
        let s = |v: Point3| p(v.x, v.y, v.z * self.z_scale);
        let (q, a, b) = (s(*q), s(self.a), s(self.b));
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((q - a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (q - (a + ab * t)).norm() - self.radius
    }
}

fn body_parts() -> Vec<Capsule> {
    let d = arm_dir();
    let j = design_joints();
    let hand_end = j[20] + d * 0.13;
    let mut parts = vec![
        Capsule::new(p(0.0, 0.98, -0.01), p(0.0, 1.36, -0.01), 0.14).flattened(1.5),
        Capsule::new(p(-0.07, 0.90, 0.0), p(0.07, 0.90, 0.0), 0.11).flattened(1.3),
        Capsule::new(p(0.0, 1.36, -0.01), p(0.0, 1.56, 0.0), 0.05),
        Capsule::new(p(0.0, 1.63, 0.01), p(0.0, 1.63, 0.01), 0.10),
    ];
    for side in [1.0, -1.0] {
        let m = |q: Point3| p(side * q.x, q.y, q.z);
        parts.push(Capsule::new(m(p(0.09, 0.86, 0.0)), m(j[4]), 0.072));
        parts.push(Capsule::new(m(j[4]), m(p(0.11, 0.10, -0.01)), 0.05));
        parts.push(Capsule::new(m(p(0.11, 0.06, -0.02)), m(p(0.11, 0.04, 0.14)), 0.04));
        parts.push(Capsule::new(m(p(0.05, 1.40, -0.01)), m(j[16]), 0.06));
        parts.push(Capsule::new(m(j[16]), m(j[18]), 0.045));
        parts.push(Capsule::new(m(j[18]), m(j[20]), 0.037));
        parts.push(Capsule::new(m(j[20]), m(hand_end), 0.035));
    }
    parts
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

fn body_sdf(parts: &[Capsule], q: &Point3) -> f64 {
    parts
        .iter()
        .map(|c| c.sdf(q))
        .reduce(|a, b| smooth_min(a, b, BLEND))
        .unwrap_or(f64::INFINITY)
}

fn mesh_at(parts: &[Capsule], cell: f64) -> Result<TriMesh> {
    let bounds = Aabb {
        min: p(-0.75, -0.06, -0.2),
        max: p(0.75, 1.79, 0.25),
    };
    let e = bounds.extent();
    let cells = [
        (e.x / cell).ceil() as usize,
        (e.y / cell).ceil() as usize,
        (e.z / cell).ceil() as usize,
    ];
    let grid = OccupancyGrid::from_fn(&bounds, cells, |q| -body_sdf(parts, q))?;
    marching_cubes(&grid, 0.0)
}

/// Bone segments used for skinning: (owning joint, start, end).
fn skin_segments() -> Vec<(usize, Point3, Point3)> {
    let j = design_joints();
    let mut segs: Vec<(usize, Point3, Point3)> = (1..24)
        .map(|c| {
            let parent = SMPL_PARENTS[c] as usize;
            (parent, j[parent], j[c])
        })
        .collect();
    let d = arm_dir();
    segs.push((10, j[10], j[10] + Vec3::new(0.0, 0.0, 0.04)));
    segs.push((11, j[11], j[11] + Vec3::new(0.0, 0.0, 0.04)));
    segs.push((15, j[15], j[15] + Vec3::new(0.0, 0.12, 0.0)));
    segs.push((22, j[22], j[22] + d * 0.05));
    segs.push((23, j[23], j[23] + Vec3::new(-d.x, d.y, d.z) * 0.05));
    segs
}

fn closest_on_segment(q: &Point3, a: &Point3, b: &Point3) -> Point3 {
    let ab = b - a;
    let t = ((q - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    a + ab * t
}

/// Joint that takes over design joint `j` when only `k` joints exist.
fn owner(mut j: usize, k: usize) -> usize {
    while j >= k {
        j = SMPL_PARENTS[j] as usize;
    }
    j
}

pub fn build_canonical_template(config: &TemplateConfig) -> Result<BodyTemplate> {
    let k = config.joints;
    if k == 0 || k > 24 {
        return Err(Error::Construction(format!(
            "procedural template supports 1..=24 joints, got {k}"
        )));
    }
    if config.vertex_budget == 0 {
        return Err(Error::Construction("vertex budget must be positive".into()));
    }
    let parts = body_parts();

    // vertex count scales with 1 / cell^2; a few secant steps land near the budget
    let mut cell = (2.4 / config.vertex_budget as f64).sqrt();
    let mut best: Option<TriMesh> = None;
    for _ in 0..4 {
        if cell > MAX_CELL {
            return Err(Error::Construction(format!(
                "vertex budget {} too small: needs cells of {cell:.4} > {MAX_CELL}, which cannot close the limbs",
                config.vertex_budget
            )));
        }
        let mesh = mesh_at(&parts, cell)?;
        let n = mesh.vertex_count();
        let better = best.as_ref().is_none_or(|b| {
            n.abs_diff(config.vertex_budget) < b.vertex_count().abs_diff(config.vertex_budget)
        });
        cell *= (n as f64 / config.vertex_budget as f64).sqrt();
        if better {
            best = Some(mesh);
        }
        if n.abs_diff(config.vertex_budget) * 50 < config.vertex_budget {
            break;
        }
    }
    let mesh = best.expect("at least one extraction ran");
    if !mesh.is_watertight() {
        return Err(Error::Construction("template surface is not closed".into()));
    }

    let verts = mesh.vertices().to_vec();
    let n = verts.len();
    let joints = design_joints();
    let segs = skin_segments();

    // full 24-joint weights drive the shape masks; the K-joint weights fold
    // dropped joints into their nearest kept ancestor
    let mut full = vec![0.0; n * 24];
    let mut radial = vec![Vec3::zeros(); n];
    for (v, q) in verts.iter().enumerate() {
        let dists: Vec<(f64, Point3)> = segs
            .iter()
            .map(|(_, a, b)| {
                let c = closest_on_segment(q, a, b);
                ((q - c).norm(), c)
            })
            .collect();
        let (dmin, cmin) = dists
            .iter()
            .copied()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("segments exist");
        radial[v] = (q - cmin).try_normalize(1e-12).unwrap_or(Vec3::y());
        let row = &mut full[v * 24..(v + 1) * 24];
        for (&(d, _), (j, _, _)) in dists.iter().zip(&segs) {
            if d <= dmin + 0.05 {
                row[*j] += 1.0 / (d * d + 1e-4).powi(2);
            }
        }
        normalize_row(row);
    }
    let mut skin = vec![0.0; n * k];
    for v in 0..n {
        for j in 0..24 {
            skin[v * k + owner(j, k)] += full[v * 24 + j];
        }
        normalize_row(&mut skin[v * k..(v + 1) * k]);
    }

    let basis = shape_basis(&verts, mesh.normals(), &full, &radial, &joints, config.shape_dims);

    let regressor = (0..k)
        .map(|j| {
            let d: Vec<f64> = verts.iter().map(|q| (q - joints[j]).norm()).collect();
            let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
            let ring: Vec<usize> = (0..n).filter(|&v| d[v] <= 1.15 * dmin + 0.01).collect();
            let w = 1.0 / ring.len() as f64;
            ring.into_iter().map(|v| (v, w)).collect()
        })
        .collect();

    let parents = SMPL_PARENTS[..k]
        .iter()
        .map(|&p| usize::try_from(p).ok())
        .collect();
    BodyTemplate::new(
        verts,
        mesh.faces().to_vec(),
        parents,
        skin,
        basis,
        config.shape_dims,
        regressor,
    )
}

/// Drops tiny weights and rescales the row to sum to one.
fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|w| *w /= sum);
    row.iter_mut().filter(|w| **w < 1e-3).for_each(|w| *w = 0.0);
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|w| *w /= sum);
}

fn shape_basis(
    verts: &[Point3],
    normals: &[Vec3],
    weights: &[f64],
    radial: &[Vec3],
    joints: &[Point3; 24],
    dims: usize,
) -> Vec<f64> {
    let n = verts.len();
    let mut basis = vec![0.0; n * 3 * dims];
    let group = |v: usize, js: &[usize]| js.iter().map(|&j| weights[v * 24 + j]).sum::<f64>();
    const TORSO: [usize; 4] = [0, 3, 6, 9];
    const LEGS: [usize; 8] = [1, 2, 4, 5, 7, 8, 10, 11];
    const ARMS: [usize; 8] = [16, 17, 18, 19, 20, 21, 22, 23];
    const UPPER: [usize; 10] = [13, 14, 16, 17, 18, 19, 20, 21, 22, 23];
    const HIPS: [usize; 5] = [0, 1, 2, 4, 5];
    const HEAD: [usize; 2] = [12, 15];
    let head_center = p(0.0, 1.63, 0.01);
    for v in 0..n {
        let q = verts[v];
        let r = radial[v];
        let side = q.x.signum();
        let arm_axis = Vec3::new(side * arm_dir().x, arm_dir().y, 0.0);
        let shoulder = if side >= 0.0 { joints[16] } else { joints[17] };
        let along_arm = (q - shoulder).dot(&arm_axis).max(0.0);
        for b in 0..dims {
            let d = match b {
                // stature
                0 => q.coords * 0.025,
                // overall girth
                1 => r * 0.012,
                // torso girth
                2 => r * 0.02 * group(v, &TORSO),
                // leg length
                3 => Vec3::new(0.0, -0.04 * (0.9 - q.y).max(0.0) / 0.9 * group(v, &LEGS), 0.0),
                // arm length
                4 => arm_axis * (0.06 * along_arm * group(v, &ARMS)),
                // shoulder width
                5 => Vec3::new(side * 0.02 * group(v, &UPPER), 0.0, 0.0),
                // hip width
                6 => Vec3::new(side * 0.015 * group(v, &HIPS), 0.0, 0.0),
                // belly
                7 => Vec3::new(0.0, 0.0, 0.02 * normals[v].z.max(0.0) * group(v, &TORSO)),
                // head size
                8 => (q - head_center) * (0.15 * group(v, &HEAD)),
                // limb girth
                9 => r * (0.01 * (group(v, &ARMS) + group(v, &LEGS))),
                // further directions: low-frequency radial ripples
                _ => {
                    let f = 2.0 + (b - 10) as f64 * 0.7;
                    let phase = (b as f64) * 1.3;
                    let axis = [Vec3::x(), Vec3::y(), Vec3::z()][b % 3];
                    r * (0.008 * (f * std::f64::consts::PI * q.coords.dot(&axis) + phase).sin())
                }
            };
            for axis in 0..3 {
                basis[(v * 3 + axis) * dims + b] = d[axis];
            }
        }
    }
    basis
}
