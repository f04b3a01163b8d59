//! Articulated, shape-parameterized body template with linear blend
//! skinning.
//!
//! Posing follows the usual recipe: shaped vertices are
//! `rest + shape_basis * beta`, joints are regressed from the shaped
//! vertices, per-joint axis-angle rotations are chained down the parent tree
//! and every vertex is moved by the skin-weighted blend of the resulting
//! rigid transforms, then translated by `t`.

mod io;
mod procedural;

use nalgebra::{Isometry3, Matrix3, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub use io::{load_template, save_template};
pub use procedural::{build_canonical_template, TemplateConfig, JOINT_NAMES, SMPL_PARENTS};

use crate::geometry::TriMesh;
use crate::{Error, Point3, Result, Vec3};

/// Template body: rest mesh, skeleton, skinning weights, shape basis and
/// joint regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    rest_vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    parents: Vec<Option<usize>>,
    rest_joints: Vec<Point3>,
    /// Row-major N x K.
    skin_weights: Vec<f64>,
    /// Layout `[(vertex * 3 + axis) * B + b]`.
    shape_basis: Vec<f64>,
    shape_dims: usize,
    /// Sparse K x N rows.
    joint_regressor: Vec<Vec<(usize, f64)>>,
    /// Parents-before-children traversal order.
    order: Vec<usize>,
    /// Non-zero skin weights per vertex.
    sparse_weights: Vec<Vec<(usize, f64)>>,
}

impl BodyTemplate {
    /// Validates and assembles a template. `rest_joints` are recomputed from
    /// the regressor so that they are always consistent with it.
    pub fn new(
        rest_vertices: Vec<Point3>,
        faces: Vec<[usize; 3]>,
        parents: Vec<Option<usize>>,
        skin_weights: Vec<f64>,
        shape_basis: Vec<f64>,
        shape_dims: usize,
        joint_regressor: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        let n = rest_vertices.len();
        let k = parents.len();
        if k == 0 {
            return Err(Error::Construction("template needs at least one joint".into()));
        }
        if skin_weights.len() != n * k {
            return Err(Error::Construction(format!(
                "skin weights must be {n} x {k}, got {} entries",
                skin_weights.len()
            )));
        }
        if shape_basis.len() != n * 3 * shape_dims {
            return Err(Error::Construction(format!(
                "shape basis must be {n} x 3 x {shape_dims}, got {} entries",
                shape_basis.len()
            )));
        }
        if joint_regressor.len() != k {
            return Err(Error::Construction(format!(
                "joint regressor has {} rows for {k} joints",
                joint_regressor.len()
            )));
        }
        for (j, row) in joint_regressor.iter().enumerate() {
            if row.is_empty() || row.iter().any(|&(v, w)| v >= n || !w.is_finite()) {
                return Err(Error::Construction(format!("invalid regressor row {j}")));
            }
        }
        for (v, row) in skin_weights.chunks_exact(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Construction(format!(
                    "skin weights of vertex {v} must be non-negative and sum to 1 (sum {sum})"
                )));
            }
        }
        if faces.iter().any(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::Construction("face index out of range".into()));
        }
        let order = traversal_order(&parents)?;
        let probe = TriMesh::from_parts_unchecked(rest_vertices.clone(), faces.clone());
        if probe.signed_volume() <= 0.0 {
            return Err(Error::Construction(
                "rest mesh must have outward winding (positive signed volume)".into(),
            ));
        }
        let rest_joints = regress(&joint_regressor, &rest_vertices);
        let sparse_weights = skin_weights
            .chunks_exact(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(j, &w)| (j, w))
                    .collect()
            })
            .collect();
        Ok(Self {
            rest_vertices,
            faces,
            parents,
            rest_joints,
            skin_weights,
            shape_basis,
            shape_dims,
            joint_regressor,
            order,
            sparse_weights,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn shape_dims(&self) -> usize {
        self.shape_dims
    }

    pub fn rest_vertices(&self) -> &[Point3] {
        &self.rest_vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest_joints(&self) -> &[Point3] {
        &self.rest_joints
    }

    pub fn skin_weights(&self) -> &[f64] {
        &self.skin_weights
    }

    pub fn skin_weight_row(&self, v: usize) -> &[f64] {
        let k = self.joint_count();
        &self.skin_weights[v * k..(v + 1) * k]
    }

    pub fn shape_basis(&self) -> &[f64] {
        &self.shape_basis
    }

    pub fn joint_regressor(&self) -> &[Vec<(usize, f64)>] {
        &self.joint_regressor
    }

    pub fn rest_mesh(&self) -> TriMesh {
        TriMesh::from_parts_unchecked(self.rest_vertices.clone(), self.faces.clone())
    }

    /// Zero pose, zero shape, zero translation, unit scale.
    pub fn zero_params(&self) -> BodyParams {
        BodyParams::zeros(self.joint_count(), self.shape_dims)
    }

    fn check_dims(&self, params: &BodyParams) -> Result<()> {
        if params.theta.len() != self.joint_count() || params.beta.len() != self.shape_dims {
            return Err(Error::Parameter(format!(
                "expected {} joints and {} shape coefficients, got {} and {}",
                self.joint_count(),
                self.shape_dims,
                params.theta.len(),
                params.beta.len()
            )));
        }
        Ok(())
    }

    /// Rest vertices displaced by the shape basis.
    pub fn shaped_vertices(&self, beta: &[f64]) -> Vec<Point3> {
        let b = self.shape_dims;
        if beta.iter().all(|&x| x == 0.0) {
            return self.rest_vertices.clone();
        }
        self.rest_vertices
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let mut d = Vec3::zeros();
                for axis in 0..3 {
                    let row = &self.shape_basis[(v * 3 + axis) * b..(v * 3 + axis + 1) * b];
                    d[axis] = row.iter().zip(beta).map(|(u, x)| u * x).sum();
                }
                p + d
            })
            .collect()
    }

    /// Joint positions regressed from shaped vertices.
    pub fn joints_for(&self, beta: &[f64]) -> Vec<Point3> {
        regress(&self.joint_regressor, &self.shaped_vertices(beta))
    }

    /// World rotation and position of every joint for `params`
    /// (translation excluded).
    pub fn world_transforms(&self, params: &BodyParams) -> Result<Vec<(Rotation3<f64>, Point3)>> {
        self.check_dims(params)?;
        let joints = self.joints_for(&params.beta);
        Ok(self.chain(&joints, &params.theta))
    }

    fn chain(&self, joints: &[Point3], theta: &[Vec3]) -> Vec<(Rotation3<f64>, Point3)> {
        let mut world = vec![(Rotation3::identity(), Point3::origin()); self.joint_count()];
        for &j in &self.order {
            let local = Rotation3::from_scaled_axis(theta[j]);
            world[j] = match self.parents[j] {
                None => (local, joints[j]),
                Some(p) => {
                    let (rp, pp) = world[p];
                    (rp * local, pp + rp * (joints[j] - joints[p]))
                }
            };
        }
        world
    }

    /// Posed mesh `M(beta, theta) + t`; topology identical to the template.
    pub fn pose_mesh(&self, params: &BodyParams) -> Result<TriMesh> {
        self.check_dims(params)?;
        let shaped = self.shaped_vertices(&params.beta);
        let t = params.translation;
        let vertices: Vec<Point3> = if params.theta.iter().all(|th| th.iter().all(|&x| x == 0.0)) {
            shaped.into_iter().map(|p| p + t).collect()
        } else {
            let joints = regress(&self.joint_regressor, &shaped);
            let world = self.chain(&joints, &params.theta);
            let blend: Vec<(Matrix3<f64>, Vec3)> = world
                .iter()
                .zip(&joints)
                .map(|((r, p), j)| {
                    let m = *r.matrix();
                    (m, p.coords - m * j.coords)
                })
                .collect();
            shaped
                .iter()
                .zip(&self.sparse_weights)
                .map(|(v, row)| {
                    let mut m = Matrix3::zeros();
                    let mut d = Vec3::zeros();
                    for &(j, w) in row {
                        m += blend[j].0 * w;
                        d += blend[j].1 * w;
                    }
                    Point3::from(m * v.coords + d + t)
                })
                .collect()
        };
        Ok(TriMesh::from_parts_unchecked(vertices, self.faces.clone()))
    }

    /// Parameters whose posed mesh equals `iso` applied to the posed mesh
    /// of `params`: the rotation is composed into the root joint and the
    /// translation adjusted about the root.
    pub fn compose_global(&self, params: &BodyParams, iso: &Isometry3<f64>) -> Result<BodyParams> {
        self.check_dims(params)?;
        let root = self
            .parents
            .iter()
            .position(|p| p.is_none())
            .expect("validated tree has a root");
        let j0 = self.joints_for(&params.beta)[root];
        let r = iso.rotation;
        let r0 = UnitQuaternion::from_scaled_axis(params.theta[root]);
        let mut out = params.clone();
        out.theta[root] = (r * r0).scaled_axis();
        out.translation = r * (j0.coords + params.translation) + iso.translation.vector - j0.coords;
        Ok(out)
    }
}

fn regress(regressor: &[Vec<(usize, f64)>], vertices: &[Point3]) -> Vec<Point3> {
    regressor
        .iter()
        .map(|row| {
            Point3::from(
                row.iter()
                    .fold(Vec3::zeros(), |acc, &(v, w)| acc + vertices[v].coords * w),
            )
        })
        .collect()
}

fn traversal_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let k = parents.len();
    if parents[0].is_some() {
        return Err(Error::Construction("joint 0 must be the root".into()));
    }
    let mut children = vec![Vec::new(); k];
    for (j, p) in parents.iter().enumerate().skip(1) {
        match p {
            None => return Err(Error::Construction(format!("joint {j} has no parent"))),
            Some(p) if *p >= k || *p == j => {
                return Err(Error::Construction(format!("joint {j} has invalid parent {p}")))
            }
            Some(p) => children[*p].push(j),
        }
    }
    let mut order = Vec::with_capacity(k);
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(j) = queue.pop_front() {
        order.push(j);
        queue.extend(children[j].iter().copied());
    }
    if order.len() != k {
        return Err(Error::Construction("parent links contain a cycle".into()));
    }
    Ok(order)
}

/// Pose, shape, translation and camera scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Per-joint axis-angle rotation (radians), relative to the parent.
    pub theta: Vec<Vec3>,
    pub beta: Vec<f64>,
    pub translation: Vec3,
    /// Weak-perspective scale carried alongside the body; posing ignores it.
    pub scale: f64,
}

impl BodyParams {
    pub fn zeros(joints: usize, shape_dims: usize) -> Self {
        Self {
            theta: vec![Vec3::zeros(); joints],
            beta: vec![0.0; shape_dims],
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|t| t.iter().all(|x| x.is_finite()))
            && self.beta.iter().all(|x| x.is_finite())
            && self.translation.iter().all(|x| x.is_finite())
            && self.scale.is_finite()
    }

    /// Rewrites every joint rotation to the equivalent one with angle in
    /// `[0, pi]`.
    pub fn canonicalize(&mut self) {
        for th in &mut self.theta {
            let angle = th.norm();
            if angle > PI {
                let wrapped = angle.rem_euclid(2.0 * PI);
                let target = if wrapped > PI { wrapped - 2.0 * PI } else { wrapped };
                *th *= target / angle;
            }
        }
    }

    /// Flattened `[theta (3K), beta (B), t (3)]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.theta.len() * 3 + self.beta.len() + 3);
        for th in &self.theta {
            v.extend_from_slice(th.as_slice());
        }
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(self.translation.as_slice());
        v
    }

    pub fn from_vector(v: &[f64], joints: usize, shape_dims: usize, scale: f64) -> Result<Self> {
        if v.len() != joints * 3 + shape_dims + 3 {
            return Err(Error::Parameter(format!(
                "parameter vector has {} entries, expected {}",
                v.len(),
                joints * 3 + shape_dims + 3
            )));
        }
        let theta = (0..joints)
            .map(|j| Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]))
            .collect();
        let o = joints * 3;
        Ok(Self {
            theta,
            beta: v[o..o + shape_dims].to_vec(),
            translation: Vec3::new(v[o + shape_dims], v[o + shape_dims + 1], v[o + shape_dims + 2]),
            scale,
        })
    }
}

/// Adds `s_theta * mu` to every pose entry and `s_beta * mu` to every shape
/// entry, with `mu` uniform in `[-1, 1]` drawn from a seeded stream.
pub fn perturb_params(params: &BodyParams, s_theta: f64, s_beta: f64, seed: u64) -> BodyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = params.clone();
    for th in &mut out.theta {
        for x in th.iter_mut() {
            *x += s_theta * rng.random_range(-1.0..=1.0);
        }
    }
    for b in &mut out.beta {
        *b += s_beta * rng.random_range(-1.0..=1.0);
    }
    out
}
