//! Software rasterisation of meshes into per-view maps and lifting of depth
//! maps back to meshes.

mod lift;
pub mod mapio;
mod raster;

pub use lift::{depth_to_mesh, depth_to_mesh_with, DEFAULT_DISCONTINUITY_FRACTION};
pub use raster::{rasterize, DepthField, Layer, RasterMaps};

#[cfg(test)]
pub(crate) use raster::tests as fixtures;
