use nalgebra::{Isometry3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::geometry::Aabb;
use crate::{Error, Point3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Front,
    /// Rotated by pi about the vertical optical axis of the rig.
    Back,
}

/// Weak-perspective camera.
///
/// A world point `p` is first moved into the rig frame,
/// `c = rotation * p + translation`; the back view additionally maps
/// `(x, y, z) -> (-x, y, -z)`. Image coordinates are
/// `u = W/2 + s * x * S/2` and `v = H/2 - s * y * S/2` with `S = min(W, H)`;
/// larger `z` is nearer the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub scale: f64,
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub view: View,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(scale: f64, translation: Vec3, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            scale,
            translation,
            rotation: UnitQuaternion::identity(),
            view: View::Front,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Parameter(format!("camera scale {} must be > 0", self.scale)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Parameter("camera image size must be positive".into()));
        }
        Ok(())
    }

    /// Front camera centred on `bounds`, sized so the box stays inside the
    /// image under any yaw about its vertical axis.
    pub fn fit(bounds: &Aabb, width: usize, height: usize, margin: f64) -> Self {
        let c = bounds.center();
        let half = bounds.extent() * 0.5;
        let radius = half.y.max((half.x * half.x + half.z * half.z).sqrt()).max(1e-9);
        Self {
            scale: (1.0 - margin) / radius,
            translation: -c.coords,
            rotation: UnitQuaternion::identity(),
            view: View::Front,
            width,
            height,
        }
    }

    pub fn with_view(&self, view: View) -> Self {
        Self {
            view,
            ..self.clone()
        }
    }

    pub fn with_size(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..self.clone()
        }
    }

    /// Camera that sees the world as if it had been rotated by `yaw` radians
    /// about the vertical axis through `pivot`.
    pub fn yawed(&self, yaw: f64, pivot: &Point3) -> Self {
        let r = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), yaw);
        let translation = self.translation + self.rotation * (pivot.coords - r * pivot.coords);
        Self {
            rotation: self.rotation * r,
            translation,
            ..self.clone()
        }
    }

    /// The camera that, applied to `iso`-transformed geometry, reproduces
    /// this camera's view of the untransformed geometry.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        let inv = iso.inverse();
        Self {
            rotation: self.rotation * inv.rotation,
            translation: self.translation + self.rotation * inv.translation.vector,
            ..self.clone()
        }
    }

    #[inline]
    fn flip(&self, v: Vec3) -> Vec3 {
        match self.view {
            View::Front => v,
            View::Back => Vec3::new(-v.x, v.y, -v.z),
        }
    }

    /// Point in this view's camera frame.
    #[inline]
    pub fn to_view_frame(&self, p: &Point3) -> Vec3 {
        self.flip(self.rotation * p.coords + self.translation)
    }

    /// Direction in this view's camera frame.
    #[inline]
    pub fn rotate_normal(&self, n: &Vec3) -> Vec3 {
        self.flip(self.rotation * n)
    }

    /// Continuous pixel coordinates `(u, v)` and depth.
    #[inline]
    pub fn project(&self, p: &Point3) -> (f64, f64, f64) {
        let c = self.to_view_frame(p);
        let half = 0.5 * self.width.min(self.height) as f64;
        let u = 0.5 * self.width as f64 + self.scale * c.x * half;
        let v = 0.5 * self.height as f64 - self.scale * c.y * half;
        (u, v, c.z)
    }

    /// Maps a back-view camera-frame direction to the front-view frame.
    #[inline]
    pub fn back_to_front(n: &Vec3) -> Vec3 {
        Vec3::new(-n.x, n.y, -n.z)
    }
}

/// Front camera plus its opposite view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPair {
    pub front: Camera,
    pub back: Camera,
}

impl CameraPair {
    pub fn new(front: Camera) -> Self {
        let front = front.with_view(View::Front);
        let back = front.with_view(View::Back);
        Self { front, back }
    }

    pub fn fit(bounds: &Aabb, size: usize) -> Self {
        Self::new(Camera::fit(bounds, size, size, 0.1))
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self::new(self.front.transformed(iso))
    }

    pub fn with_size(&self, size: usize) -> Self {
        Self::new(self.front.with_size(size, size))
    }
}
