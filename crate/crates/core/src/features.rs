//! Local point feature: signed distance to the body, body normal at the
//! closest point, and a clothed normal looked up in the front or back map
//! depending on whether that closest point is visible from the front.
//! A closest point on a shared edge or vertex is visible when any face
//! touching it is, so the choice does not depend on which tied face the
//! query returned.
//!
//! Both normals are expressed in the front camera frame.

use ndarray::Array2;
use rayon::prelude::*;

use crate::geometry::{IndexedMesh, SurfacePoint, TriMesh};
use crate::render::{face_visibility, Camera, CameraPair, MapPair, VisBuffer};
use crate::{Error, Point3, Result, Vec3};

pub const FEATURE_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureFlags {
    /// The clothed-normal lookup hit background; `f_nc` is zero.
    pub background: bool,
    /// The projection fell outside the image and was clamped.
    pub clamped: bool,
    /// `f_nc` came from the back map.
    pub from_back: bool,
    /// Body mesh is open, so `f_s` is unsigned.
    pub sign_unreliable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFeature {
    pub f_s: f64,
    pub f_nb: Vec3,
    pub f_nc: Vec3,
    pub flags: FeatureFlags,
}

impl LocalFeature {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.f_s, self.f_nb.x, self.f_nb.y, self.f_nb.z, self.f_nc.x, self.f_nc.y, self.f_nc.z,
        ]
    }
}

/// Everything needed to featurize query points for one subject.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    body: IndexedMesh,
    maps: MapPair,
    visibility: VisBuffer,
    /// Faces incident to each body vertex.
    vertex_faces: Vec<Vec<usize>>,
    cameras: CameraPair,
    sdf_clamp: Option<f64>,
}

/// Barycentric weight below which a closest point counts as lying on the
/// opposite edge.
const ON_EDGE: f64 = 1e-12;

impl FeatureContext {
    /// Visibility is computed by rasterizing the body with the front camera
    /// at the map resolution.
    pub fn new(body: TriMesh, maps: MapPair, cameras: CameraPair) -> Result<Self> {
        let visibility = face_visibility(&body, &cameras.front);
        Self::with_visibility(body, maps, visibility, cameras)
    }

    pub fn with_visibility(
        body: TriMesh,
        maps: MapPair,
        visibility: VisBuffer,
        cameras: CameraPair,
    ) -> Result<Self> {
        if body.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if visibility.len() != body.face_count() {
            return Err(Error::Parameter(format!(
                "visibility has {} entries for {} faces",
                visibility.len(),
                body.face_count()
            )));
        }
        maps.front.same_size(&maps.back)?;
        for cam in [&cameras.front, &cameras.back] {
            cam.validate()?;
            if cam.width != maps.front.width || cam.height != maps.front.height {
                return Err(Error::ResolutionMismatch(
                    cam.width,
                    cam.height,
                    maps.front.width,
                    maps.front.height,
                ));
            }
        }
        let mut vertex_faces = vec![Vec::new(); body.vertex_count()];
        for (f, face) in body.faces().iter().enumerate() {
            for &v in face {
                vertex_faces[v].push(f);
            }
        }
        Ok(Self {
            body: IndexedMesh::new(body),
            maps,
            visibility,
            vertex_faces,
            cameras,
            sdf_clamp: None,
        })
    }

    /// Clamp `f_s` to `[-limit, limit]`.
    pub fn with_sdf_clamp(mut self, limit: Option<f64>) -> Self {
        self.sdf_clamp = limit;
        self
    }

    pub fn body(&self) -> &IndexedMesh {
        &self.body
    }

    pub fn maps(&self) -> &MapPair {
        &self.maps
    }

    pub fn visibility(&self) -> &VisBuffer {
        &self.visibility
    }

    pub fn cameras(&self) -> &CameraPair {
        &self.cameras
    }

    /// Whether the body surface at `sp` is seen by the front camera.
    pub fn is_visible(&self, sp: &SurfacePoint) -> bool {
        if self.visibility.is_visible(sp.face) {
            return true;
        }
        let face = self.body.mesh().faces()[sp.face];
        let support: Vec<usize> = (0..3).filter(|&i| sp.bary[i] > ON_EDGE).map(|i| face[i]).collect();
        if support.len() == 3 {
            return false;
        }
        let Some(&first) = support.first() else {
            return false;
        };
        self.vertex_faces[first].iter().any(|&f| {
            let other = self.body.mesh().faces()[f];
            self.visibility.is_visible(f) && support.iter().all(|v| other.contains(v))
        })
    }
}

pub fn extract_feature(ctx: &FeatureContext, p: &Point3) -> Result<LocalFeature> {
    if !p.iter().all(|x| x.is_finite()) {
        return Err(Error::Evaluation(format!("query point {p:?} is not finite")));
    }
    let sp = ctx.body.closest_point(p)?;
    let sd = ctx.body.signed_from(p, &sp);
    let mut f_s = sd.value;
    if let Some(limit) = ctx.sdf_clamp {
        f_s = f_s.clamp(-limit, limit);
    }
    let front = &ctx.cameras.front;
    let f_nb = front.rotate_normal(&ctx.body.mesh().barycentric_normal(&sp).normal);

    let from_back = !ctx.is_visible(&sp);
    let (cam, map) = if from_back {
        (&ctx.cameras.back, &ctx.maps.back)
    } else {
        (front, &ctx.maps.front)
    };
    let (u, v, _) = cam.project(p);
    let s = map.sample(u, v);
    let f_nc = if from_back {
        Camera::back_to_front(&s.value)
    } else {
        s.value
    };
    Ok(LocalFeature {
        f_s,
        f_nb,
        f_nc,
        flags: FeatureFlags {
            background: s.background,
            clamped: s.clamped,
            from_back,
            sign_unreliable: !sd.sign_reliable,
        },
    })
}

/// Element-wise [`extract_feature`], order preserved; the first failure is
/// reported with its index.
pub fn extract_batch(ctx: &FeatureContext, points: &[Point3]) -> Result<Vec<LocalFeature>> {
    points
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            extract_feature(ctx, p).map_err(|e| Error::Batch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// `n x 7` feature matrix.
pub fn feature_matrix(ctx: &FeatureContext, points: &[Point3]) -> Result<Array2<f64>> {
    let feats = extract_batch(ctx, points)?;
    let mut out = Array2::zeros((feats.len(), FEATURE_DIM));
    for (mut row, f) in out.rows_mut().into_iter().zip(&feats) {
        for (dst, src) in row.iter_mut().zip(f.to_array()) {
            *dst = src;
        }
    }
    Ok(out)
}
