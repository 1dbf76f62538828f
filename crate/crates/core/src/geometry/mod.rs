//! Core geometric types: triangle meshes, pinhole cameras, rotations and
//! nearest-surface queries.

mod bvh;
mod camera;
pub mod io;
mod marching;
mod mesh;
mod rotation;
mod sampling;

pub use bvh::{closest_point, closest_point_on_triangle, tie_limit, Bvh, ClosestPoint, TIE_TOLERANCE};
pub use camera::{relative_rotation, Camera, Projection, NEAR_PLANE};
pub use marching::{marching_cubes, ScalarGrid};
pub use mesh::{triangle_area, TriMesh, MIN_TRIANGLE_AREA};
pub use rotation::{skew, so3_left_jacobian, Rotation};
pub use sampling::{sample_surface, SurfaceSample};
