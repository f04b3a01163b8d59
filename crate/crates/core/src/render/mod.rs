//! Weak-perspective software rasterizer producing camera-space normal maps,
//! silhouettes and per-face visibility.

mod camera;
mod maps;
mod raster;

pub use camera::{Camera, CameraPair, View};
pub use maps::{MapPair, MapSample, NormalMap, Silhouette, VisBuffer};
pub use raster::{face_visibility, render_normal_map, render_normal_maps};

/// Default raster edge length in pixels.
pub const DEFAULT_RASTER: usize = 512;
