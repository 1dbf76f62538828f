//! Joint multi-view body optimization: one set of body parameters fitted to
//! silhouettes, clothed normal maps and 2D landmarks from every view at once.

mod loss;
mod optimize;

use std::io::Write;
use std::path::Path;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::normals::ClothedNormalMap;

pub use loss::{
    head_tilt_error, landmark_confidences, loss_head, loss_head_with_gradient, loss_landmarks, loss_normals,
    loss_silhouette, total_loss, LandmarkLoss, OCCLUDED_CONFIDENCE, VISIBILITY_TOLERANCE,
};
pub use optimize::optimize;

/// A detected 2D landmark and its confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark2d {
    pub pixel: Point2<f64>,
    pub confidence: f64,
}

/// Everything one view contributes to the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewObservation {
    pub view: usize,
    pub camera: Camera,
    pub silhouette: Vec<bool>,
    pub clothed_normals: ClothedNormalMap,
    pub landmarks: Vec<Landmark2d>,
}

impl ViewObservation {
    pub fn new(
        view: usize,
        camera: Camera,
        silhouette: Vec<bool>,
        clothed_normals: ClothedNormalMap,
        landmarks: Vec<Landmark2d>,
    ) -> Result<Self> {
        if silhouette.len() != camera.pixel_count() {
            return Err(Error::Shape(format!(
                "silhouette of {} pixels for a {}x{} camera",
                silhouette.len(),
                camera.width(),
                camera.height()
            )));
        }
        if clothed_normals.width != camera.width() || clothed_normals.height != camera.height() {
            return Err(Error::Shape("clothed normal map does not match the camera".into()));
        }
        if let Some(bad) = landmarks
            .iter()
            .find(|l| !(0.0..=1.0).contains(&l.confidence) || !l.pixel.coords.iter().all(|x| x.is_finite()))
        {
            return Err(Error::Shape(format!("invalid landmark {bad:?}")));
        }
        Ok(ViewObservation {
            view,
            camera,
            silhouette,
            clothed_normals,
            landmarks,
        })
    }
}

/// Per-group values for shape, pose (joint and global rotations) and
/// translation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupValues {
    pub shape: f64,
    pub pose: f64,
    pub translation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JmboConfig {
    pub lambda_n: f64,
    pub lambda_l: f64,
    pub lambda_h: f64,
    pub max_iterations: usize,
    pub step: GroupValues,
    pub fd_epsilon: GroupValues,
    /// Relative decrease below which an iteration counts as stalled.
    pub tolerance: f64,
    /// Consecutive stalled iterations before stopping.
    pub patience: usize,
}

impl Default for JmboConfig {
    fn default() -> Self {
        JmboConfig {
            lambda_n: 0.2,
            lambda_l: 0.1,
            lambda_h: 0.1,
            max_iterations: 35,
            step: GroupValues {
                shape: 1e-2,
                pose: 1e-2,
                translation: 1e-3,
            },
            fd_epsilon: GroupValues {
                shape: 1e-3,
                pose: 1e-3,
                translation: 1e-4,
            },
            tolerance: 1e-4,
            patience: 3,
        }
    }
}

impl JmboConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_n, self.lambda_l, self.lambda_h];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative, got {lambdas:?}"
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        let positive = |g: &GroupValues| {
            [g.shape, g.pose, g.translation]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0)
        };
        if !positive(&self.step) || !positive(&self.fd_epsilon) {
            return Err(Error::Config("step sizes and FD epsilons must be positive".into()));
        }
        if !(self.tolerance >= 0.0) || self.patience == 0 {
            return Err(Error::Config(
                "tolerance must be nonnegative and patience at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub silhouette: f64,
    pub normal: f64,
    pub landmark: f64,
    pub head: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(silhouette: f64, normal: f64, landmark: f64, head: f64, cfg: &JmboConfig) -> Self {
        LossBreakdown {
            silhouette,
            normal,
            landmark,
            head,
            total: silhouette + cfg.lambda_n * normal + cfg.lambda_l * landmark + cfg.lambda_h * head,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JmboResult {
    pub params: crate::body::BodyParams,
    pub loss_trace: Vec<TraceRecord>,
    pub iterations_run: usize,
    /// Landmarks that fell behind a camera at the final parameters.
    pub behind_camera: usize,
}

impl JmboResult {
    pub fn initial_loss(&self) -> &LossBreakdown {
        &self.loss_trace[0].loss
    }

    pub fn final_loss(&self) -> &LossBreakdown {
        &self.loss_trace[self.loss_trace.len() - 1].loss
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,silhouette,normal,landmark,head,total\n");
        for r in &self.loss_trace {
            let l = &r.loss;
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                r.iteration, l.silhouette, l.normal, l.landmark, l.head, l.total
            ));
        }
        out
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.trace_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}
