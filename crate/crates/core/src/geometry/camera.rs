use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::{check_rotation, Rotation};
use crate::error::{Error, Result};

/// Points with camera-space depth at or below this are behind the camera.
pub const NEAR_PLANE: f64 = 1e-9;

/// Ideal pinhole camera. `rotation`/`translation` map world to camera
/// coordinates: `x_cam = R·x_world + t`. The camera looks down +z, with
/// image +x to the right and +y down; pixel centres sit at integer
/// coordinates with the origin at the top-left pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        Camera::new(
            j.fx,
            j.fy,
            j.cx,
            j.cy,
            j.width,
            j.height,
            Matrix3::from_row_slice(&j.rotation),
            Vector3::from(j.translation),
        )
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let r: [f64; 9] = Rotation::new(c.rotation)
            .map(Into::into)
            .unwrap_or_else(|_| unreachable!("camera rotation validated at construction"));
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: r,
            translation: c.translation.into(),
        }
    }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Point2<f64>,
    pub depth: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidCamera(format!("focal lengths must be > 0 ({fx}, {fy})")));
        }
        if width < 1 || height < 1 {
            return Err(Error::InvalidCamera(format!("resolution {width}x{height}")));
        }
        if !(cx.is_finite() && cy.is_finite() && translation.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidCamera("non-finite principal point or translation".into()));
        }
        check_rotation(&rotation).map_err(|e| Error::InvalidCamera(e.to_string()))?;
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        })
    }

    /// Camera at `eye` looking at `target`, rolled so that `up` projects
    /// to image-up (−y).
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = (target - eye).normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-12 {
            return Err(Error::InvalidCamera("viewing direction parallel to up".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye.coords);
        Camera::new(
            focal,
            focal,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (p.coords - self.translation))
    }

    /// Pixel of a camera-space point; `None` at or behind the camera plane.
    pub fn project_camera_point(&self, p: &Point3<f64>) -> Option<Point2<f64>> {
        if p.z <= NEAR_PLANE {
            return None;
        }
        Some(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn project(&self, p: &Point3<f64>) -> Result<Projection> {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::Shape("cannot project a non-finite point".into()));
        }
        let c = self.to_camera(p);
        let pixel = self.project_camera_point(&c).ok_or(Error::BehindCamera { z: c.z })?;
        Ok(Projection { pixel, depth: c.z })
    }

    /// Camera-space ray direction through pixel `(u, v)` with unit depth.
    pub fn ray_camera(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Camera-space point at pixel `(u, v)` and depth `z`.
    pub fn unproject_camera(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        Point3::from(self.ray_camera(u, v) * depth)
    }

    /// World-space point at pixel `(u, v)` and depth `z`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        self.to_world(&self.unproject_camera(u, v, depth))
    }

    pub fn same_resolution(&self, other: &Camera) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// `R_to · R_fromᵀ`: maps camera-frame vectors of `from` into the frame of `to`.
pub fn relative_rotation(from: &Camera, to: &Camera) -> Rotation {
    let m = to.rotation * from.rotation.transpose();
    // products of validated rotations stay within tolerance; re-orthonormalise
    // anyway so that long chains cannot drift
    Rotation::new(m).unwrap_or_else(|_| {
        let q = nalgebra::UnitQuaternion::from_matrix(&m);
        Rotation::new(*q.to_rotation_matrix().matrix()).expect("quaternion yields rotation")
    })
}
