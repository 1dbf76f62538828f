use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, TriMesh, NEAR_PLANE};

/// Which surface layer a rasterisation keeps along each pixel ray.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    /// Nearest intersection; normals face the camera.
    Front,
    /// Farthest intersection; normals face away from the camera.
    Back,
}

/// Per-view silhouette, camera-frame normal and depth maps (row-major,
/// `index = y * width + x`). Normal and depth are zero off the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMaps {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub normal: Vec<Vector3<f64>>,
    pub depth: Vec<f64>,
}

impl RasterMaps {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        RasterMaps {
            width,
            height,
            mask: vec![false; n],
            normal: vec![Vector3::zeros(); n],
            depth: vec![0.0; n],
        }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn depth_field(&self) -> DepthField {
        DepthField {
            width: self.width,
            height: self.height,
            depth: self.depth.clone(),
            mask: self.mask.clone(),
        }
    }
}

/// Per-pixel camera-space depth over a masked raster grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthField {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if depth.len() != width * height || mask.len() != width * height {
            return Err(Error::Shape(format!(
                "depth field {width}x{height} with {} depths and {} mask entries",
                depth.len(),
                mask.len()
            )));
        }
        for (i, (&d, &m)) in depth.iter().zip(&mask).enumerate() {
            if m && !(d.is_finite() && d > 0.0) {
                return Err(Error::Shape(format!("masked depth {d} at pixel {i} is not positive")));
            }
        }
        Ok(DepthField {
            width,
            height,
            depth,
            mask,
        })
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Median of the masked depths, `None` if nothing is masked.
    pub fn median_depth(&self) -> Option<f64> {
        let mut d: Vec<f64> = self
            .depth
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d)
            .collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        Some(d[d.len() / 2])
    }
}

/// Z-buffer rasterisation of `mesh` at the camera's resolution.
///
/// Depth is the exact ray/triangle-plane intersection through each pixel
/// centre; normals are flat geometric normals rotated into the camera
/// frame. Triangles with a vertex at or behind the camera plane are skipped.
pub fn rasterize(mesh: &TriMesh, cam: &Camera, layer: Layer) -> RasterMaps {
    let (w, h) = (cam.width(), cam.height());
    let mut maps = RasterMaps::empty(w, h);
    let cam_pts: Vec<Point3<f64>> = mesh.vertices().iter().map(|p| cam.to_camera(p)).collect();

    for t in mesh.triangles() {
        let [a, b, c] = t.map(|k| cam_pts[k as usize]);
        if a.z <= NEAR_PLANE || b.z <= NEAR_PLANE || c.z <= NEAR_PLANE {
            continue;
        }
        let pa = cam.project_camera_point(&a).expect("in front of camera");
        let pb = cam.project_camera_point(&b).expect("in front of camera");
        let pc = cam.project_camera_point(&c).expect("in front of camera");
        let area2 = edge(&pa, &pb, &pc);
        if area2.abs() < 1e-12 {
            continue;
        }
        let sign = area2.signum();
        let x0 = pa.x.min(pb.x).min(pc.x).ceil().max(0.0);
        let x1 = pa.x.max(pb.x).max(pc.x).floor().min(w as f64 - 1.0);
        let y0 = pa.y.min(pb.y).min(pc.y).ceil().max(0.0);
        let y1 = pa.y.max(pb.y).max(pc.y).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let n_raw = (b - a).cross(&(c - a));
        let plane_d = n_raw.dot(&a.coords);
        let n_unit = n_raw.normalize();
        // z > 0 forces n·ray to share the sign of plane_d, so the facing
        // side is constant over the triangle
        let toward = plane_d < 0.0;
        let flip = match layer {
            Layer::Front => !toward,
            Layer::Back => toward,
        };
        let shaded = if flip { -n_unit } else { n_unit };
        // n·ray is affine in the pixel coordinates
        let (dx, dy) = (n_raw.x / cam.fx(), n_raw.y / cam.fy());
        let d0 = n_raw.z - dx * cam.cx() - dy * cam.cy();
        for y in y0 as usize..=y1 as usize {
            let yf = y as f64;
            for x in x0 as usize..=x1 as usize {
                let p = nalgebra::Point2::new(x as f64, yf);
                if edge(&pb, &pc, &p) * sign < 0.0 || edge(&pc, &pa, &p) * sign < 0.0 || edge(&pa, &pb, &p) * sign < 0.0
                {
                    continue;
                }
                let denom = dx * p.x + dy * yf + d0;
                if denom == 0.0 {
                    continue;
                }
                let z = plane_d / denom;
                if !(z > NEAR_PLANE) {
                    continue;
                }
                let i = y * w + x;
                let closer = match layer {
                    Layer::Front => !maps.mask[i] || z < maps.depth[i],
                    Layer::Back => !maps.mask[i] || z > maps.depth[i],
                };
                if closer {
                    maps.mask[i] = true;
                    maps.depth[i] = z;
                    maps.normal[i] = shaded;
                }
            }
        }
    }
    maps
}

#[inline]
fn edge(a: &nalgebra::Point2<f64>, b: &nalgebra::Point2<f64>, p: &nalgebra::Point2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}
