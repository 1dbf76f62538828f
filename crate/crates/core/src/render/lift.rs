use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{Camera, TriMesh};

use super::raster::{DepthField, Layer};

/// Default discontinuity threshold as a fraction of the median masked depth.
pub const DEFAULT_DISCONTINUITY_FRACTION: f64 = 0.02;

/// Lifts a depth field to a front-facing mesh using the default
/// discontinuity threshold.
pub fn depth_to_mesh(field: &DepthField, cam: &Camera) -> Result<TriMesh> {
    depth_to_mesh_with(field, cam, None, Layer::Front)
}

/// Lifts a depth field to a mesh. Each 2×2 block of masked pixels whose
/// depth spread is below `threshold` (metres; defaults to 2% of the median
/// masked depth) becomes two triangles. `facing` picks the winding: `Front`
/// surfaces face the camera, `Back` surfaces face away from it.
pub fn depth_to_mesh_with(field: &DepthField, cam: &Camera, threshold: Option<f64>, facing: Layer) -> Result<TriMesh> {
    let (w, h) = (field.width, field.height);
    if w != cam.width() || h != cam.height() {
        return Err(Error::Shape(format!(
            "depth field {w}x{h} against camera {}x{}",
            cam.width(),
            cam.height()
        )));
    }
    let threshold = match threshold {
        Some(t) => t,
        None => {
            let Some(median) = field.median_depth() else {
                return Err(Error::EmptySurface("depth field has no masked pixels".into()));
            };
            DEFAULT_DISCONTINUITY_FRACTION * median
        }
    };

    let mut index: HashMap<usize, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut vid = |i: usize, vertices: &mut Vec<_>| -> u32 {
        *index.entry(i).or_insert_with(|| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            vertices.push(cam.unproject(x, y, field.depth[i]));
            (vertices.len() - 1) as u32
        })
    };
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let quad = [y * w + x, y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1];
            if !quad.iter().all(|&i| field.mask[i]) {
                continue;
            }
            let ds = quad.map(|i| field.depth[i]);
            let lo = ds.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo >= threshold {
                continue;
            }
            let [p00, p10, p01, p11] = quad.map(|i| vid(i, &mut vertices));
            // (p00, p10, p11) winds away from the camera in an x-right, y-down image
            match facing {
                Layer::Back => {
                    triangles.push([p00, p10, p11]);
                    triangles.push([p00, p11, p01]);
                }
                Layer::Front => {
                    triangles.push([p00, p11, p10]);
                    triangles.push([p00, p01, p11]);
                }
            }
        }
    }
    if triangles.is_empty() {
        return Err(Error::EmptySurface(
            "no masked 2x2 block below the discontinuity threshold".into(),
        ));
    }
    let mesh = TriMesh::new_dropping_degenerate(vertices, triangles)?;
    if mesh.triangle_count() == 0 {
        return Err(Error::EmptySurface("every lifted triangle was degenerate".into()));
    }
    Ok(mesh)
}
