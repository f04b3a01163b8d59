//! Triangle meshes and accelerated spatial queries.

mod bvh;
mod io;
mod mesh;
pub mod primitives;
mod query;
mod sampling;

pub use bvh::{Aabb, Bvh};
pub use io::{read_mesh, read_obj, read_ply, write_obj, write_ply};
pub use mesh::TriMesh;
pub use sampling::{sample_surface, sample_surface_with, SurfaceSample};
pub use query::{
    closest_point_brute, closest_point_on_triangle, triangle_solid_angle, winding_number_brute,
    IndexedMesh, NormalSample, SignedDistance, SurfacePoint,
};
