//! Body-guided implicit reconstruction of clothed humans.
//!
//! The pipeline takes a posed articulated body mesh plus clothed normal maps,
//! builds a 7-dimensional local feature per query point (signed distance to the
//! body, body normal at the closest point, and a visibility-selected clothed
//! normal), regresses occupancy with an MLP and extracts the 0.5 iso-surface.
//! The body itself can be refined against observed normal maps before features
//! are computed.
//!
//! Module map:
//!
//! * [`body_model`]: articulated template, skinning, parameter perturbation.
//! * [`geometry`]: triangle meshes, BVH, closest point, signed distance,
//!   winding-number occupancy.
//! * [`render`]: weak-perspective rasterizer, normal maps, silhouettes,
//!   per-face visibility.
//! * [`features`]: the local point feature.
//! * [`implicit_net`]: occupancy MLP, backprop, ADAM, training-point sampling.
//! * [`surface`]: dense/octree occupancy grids and marching cubes.
//! * [`refine`]: body refinement against clothed normal maps.
//! * [`metrics`]: Chamfer, P2S, normal-image error, per-pixel L1.
//! * [`datagen`]: synthetic clothing, multi-view datasets, pose selection.
//! * [`container`]: little-endian binary tensor container with JSON sidecar.

pub mod body_model;
pub mod container;
pub mod datagen;
pub mod error;
pub mod features;
pub mod geometry;
pub mod implicit_net;
pub mod metrics;
pub mod refine;
pub mod render;
pub mod surface;

pub use error::{Error, Result};

/// 3D vector in model units.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3D point in model units.
pub type Point3 = nalgebra::Point3<f64>;
