use nalgebra::{Matrix2x3, Point2, Point3, Vector2};
use rayon::prelude::*;

use crate::body::{BodyModel, BodyParams};
use crate::error::{Error, Result};
use crate::geometry::{Camera, TriMesh};
use crate::render::{rasterize, Layer, RasterMaps};

use super::{JmboConfig, LossBreakdown, ViewObservation};

/// Confidence given to a landmark hidden behind the body.
pub const OCCLUDED_CONFIDENCE: f64 = 0.2;
/// Relative depth slack of the landmark visibility test.
pub const VISIBILITY_TOLERANCE: f64 = 0.02;

fn check_views(views: &[ViewObservation]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::EmptyInput("at least one view is required".into()));
    }
    for v in views {
        if v.silhouette.len() != v.camera.pixel_count() {
            return Err(Error::Shape(format!(
                "view {}: silhouette does not match the camera",
                v.view
            )));
        }
    }
    Ok(())
}

fn silhouette_term(body: &RasterMaps, view: &ViewObservation) -> f64 {
    let mismatched = body.mask.iter().zip(&view.silhouette).filter(|(a, b)| a != b).count();
    mismatched as f64 / body.mask.len() as f64
}

fn normal_term(body: &RasterMaps, view: &ViewObservation) -> Result<f64> {
    let map = &view.clothed_normals;
    if map.frame != view.view {
        return Err(Error::Frame {
            map: map.frame,
            expected: view.view,
        });
    }
    if map.width != body.width || map.height != body.height {
        return Err(Error::Shape(format!(
            "view {}: normal map does not match the camera",
            view.view
        )));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..body.mask.len() {
        if body.mask[i] && map.mask[i] {
            sum += (body.normal[i] - map.normal[i]).abs().sum();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Silhouette and normal terms of one skinned body against every view,
/// summed in view order.
pub(super) fn render_terms(mesh: &TriMesh, views: &[ViewObservation]) -> Result<(f64, f64)> {
    let per_view: Vec<Result<(f64, f64)>> = views
        .par_iter()
        .map(|v| {
            let body = rasterize(mesh, &v.camera, Layer::Front);
            Ok((silhouette_term(&body, v), normal_term(&body, v)?))
        })
        .collect();
    let (mut sil, mut nrm) = (0.0, 0.0);
    for r in per_view {
        let (s, n) = r?;
        sil += s;
        nrm += n;
    }
    Ok((sil, nrm))
}

/// Render terms evaluated without nested parallelism, for use inside
/// parallel finite-difference probes.
pub(super) fn render_terms_serial(mesh: &TriMesh, views: &[ViewObservation]) -> Result<(f64, f64)> {
    let (mut sil, mut nrm) = (0.0, 0.0);
    for v in views {
        let body = rasterize(mesh, &v.camera, Layer::Front);
        sil += silhouette_term(&body, v);
        nrm += normal_term(&body, v)?;
    }
    Ok((sil, nrm))
}

/// Sum over views of the per-pixel mean silhouette mismatch.
pub fn loss_silhouette(params: &BodyParams, model: &BodyModel, views: &[ViewObservation]) -> Result<f64> {
    check_views(views)?;
    Ok(render_terms(&model.skin(params)?, views)?.0)
}

/// Sum over views of the mean L1 normal difference on pixels covered by
/// both the body and the clothed map.
pub fn loss_normals(params: &BodyParams, model: &BodyModel, views: &[ViewObservation]) -> Result<f64> {
    check_views(views)?;
    Ok(render_terms(&model.skin(params)?, views)?.1)
}

/// Landmark loss value, its gradient over the flat parameters and the
/// number of landmarks that fell behind a camera.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkLoss {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub behind_camera: usize,
}

fn projection_jacobian(cam: &Camera, pc: &Point3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    Matrix2x3::new(
        cam.fx() * iz,
        0.0,
        -cam.fx() * pc.x * iz * iz,
        0.0,
        cam.fy() * iz,
        -cam.fy() * pc.y * iz * iz,
    )
}

/// Confidence-weighted reprojection error per view, normalized by the image
/// diagonal and summed over views, with its analytic gradient.
pub fn loss_landmarks(params: &BodyParams, model: &BodyModel, views: &[ViewObservation]) -> Result<LandmarkLoss> {
    check_views(views)?;
    let (points, jac) = model.landmarks_with_jacobian(params)?;
    let n_params = model.layout().len();
    let mut value = 0.0;
    let mut gradient = vec![0.0; n_params];
    let mut behind_camera = 0;
    for view in views {
        if view.landmarks.len() != points.len() {
            return Err(Error::Shape(format!(
                "view {} has {} landmarks, the model defines {}",
                view.view,
                view.landmarks.len(),
                points.len()
            )));
        }
        let cam = &view.camera;
        let rot = cam.rotation();
        let mut weight = 0.0;
        let mut err = 0.0;
        let mut grad = vec![0.0; n_params];
        for (l, target) in view.landmarks.iter().enumerate() {
            if target.confidence == 0.0 {
                continue;
            }
            let pc = cam.to_camera(&points[l]);
            let Some(pixel) = cam.project_camera_point(&pc) else {
                behind_camera += 1;
                continue;
            };
            weight += target.confidence;
            let r: Vector2<f64> = pixel - target.pixel;
            let e = r.norm();
            err += target.confidence * e;
            if e > 0.0 {
                let row = (r / e).transpose() * projection_jacobian(cam, &pc) * rot;
                for (g, d) in grad.iter_mut().zip(&jac[l]) {
                    *g += target.confidence * (row * d)[0];
                }
            }
        }
        if weight > 0.0 {
            let scale = 1.0 / (weight * cam.diagonal());
            value += err * scale;
            for (g, d) in gradient.iter_mut().zip(&grad) {
                *g += d * scale;
            }
        }
    }
    Ok(LandmarkLoss {
        value,
        gradient,
        behind_camera,
    })
}

/// `1 − cos` of the angle between the head up-vector and world up, with its
/// gradient over the flat parameters.
pub fn loss_head_with_gradient(params: &BodyParams, model: &BodyModel) -> Result<(f64, Vec<f64>)> {
    let (v, jac) = model.head_pitch_with_jacobian(params)?;
    Ok((1.0 - v.y, jac.iter().map(|d| -d.y).collect()))
}

pub fn loss_head(params: &BodyParams, model: &BodyModel) -> Result<f64> {
    Ok(1.0 - model.head_pitch_vector(params)?.y)
}

/// Weighted total and its components.
pub fn total_loss(
    params: &BodyParams,
    model: &BodyModel,
    views: &[ViewObservation],
    cfg: &JmboConfig,
) -> Result<LossBreakdown> {
    check_views(views)?;
    let (sil, nrm) = render_terms(&model.skin(params)?, views)?;
    let lm = loss_landmarks(params, model, views)?.value;
    let head = loss_head(params, model)?;
    Ok(LossBreakdown::combine(sil, nrm, lm, head, cfg))
}

/// Angle in radians between the head up-vectors of two parameter sets.
pub fn head_tilt_error(model: &BodyModel, params: &BodyParams, reference: &BodyParams) -> Result<f64> {
    let a = model.head_pitch_vector(params)?;
    let b = model.head_pitch_vector(reference)?;
    Ok(a.cross(&b).norm().atan2(a.dot(&b)))
}

/// Oracle detector confidences for `params` seen through `cam`: 1 when the
/// landmark passes a depth test against the body's front layer (`body`),
/// [`OCCLUDED_CONFIDENCE`] when the body hides it and 0 when it is behind
/// the camera or outside the frame. The test allows each landmark its own
/// depth below the surface plus [`VISIBILITY_TOLERANCE`] of the surface depth.
pub fn landmark_confidences(
    model: &BodyModel,
    params: &BodyParams,
    cam: &Camera,
    body: &RasterMaps,
) -> Result<Vec<f64>> {
    if body.width != cam.width() || body.height != cam.height() {
        return Err(Error::Shape("body render does not match the camera".into()));
    }
    let depths = model.landmark_depths();
    let points = model.landmarks3d(params)?;
    Ok(points
        .iter()
        .zip(depths)
        .map(|(p, below)| {
            let pc = cam.to_camera(p);
            let Some(px) = cam.project_camera_point(&pc) else {
                return 0.0;
            };
            let Some(i) = pixel_index(cam, &px) else {
                return 0.0;
            };
            if !body.mask[i] {
                return 1.0;
            }
            let surface = body.depth[i];
            if pc.z - surface <= VISIBILITY_TOLERANCE * surface + below {
                1.0
            } else {
                OCCLUDED_CONFIDENCE
            }
        })
        .collect())
}

fn pixel_index(cam: &Camera, px: &Point2<f64>) -> Option<usize> {
    let (x, y) = (px.x.round(), px.y.round());
    if x < 0.0 || y < 0.0 || x >= cam.width() as f64 || y >= cam.height() as f64 {
        return None;
    }
    Some(y as usize * cam.width() + x as usize)
}
