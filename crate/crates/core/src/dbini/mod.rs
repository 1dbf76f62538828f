//! Depth-aware bilateral normal integration: lifts a front and a back normal
//! map, both on the front camera's raster grid, to depth fields anchored to
//! body-prior depths.
//!
//! Depths are solved in pixel units: `z / pitch` for the orthographic model
//! and `fx · ln z` for the perspective model. In both, the normal-implied
//! slope along image `u` is `-n_x / d` with `d = n_z` (orthographic) or
//! `d = n · ray` (perspective). Each pixel contributes a forward and a
//! backward one-sided difference per image axis, combined by a soft minimum
//! of their squared residuals; minimising that by reweighted least squares
//! gives the logistic one-sided weights and a monotone objective.

mod solve;
#[cfg(test)]
mod tests;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::normals::ClothedNormalMap;
use crate::render::mapio::write_depth_field;
use crate::render::DepthField;

pub use solve::integrate;

/// Slope denominators below this demote a pixel to prior-only.
pub const MIN_SLOPE_DENOMINATOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionModel {
    #[default]
    Orthographic,
    Perspective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbiniConfig {
    /// Sharpness of the logistic one-sided weights.
    pub k_bilateral: f64,
    pub lambda_prior: f64,
    /// Weight tying front and back depths on the shared silhouette ring.
    pub lambda_couple: f64,
    pub outer_iterations: usize,
    /// Relative residual at which the inner conjugate-gradient solve stops.
    pub tolerance: f64,
    pub projection: ProjectionModel,
    /// Orthographic metres per pixel. When unset, the median prior depth
    /// divided by the focal length.
    pub pixel_pitch: Option<f64>,
}

impl Default for DbiniConfig {
    fn default() -> Self {
        DbiniConfig {
            k_bilateral: 2.0,
            lambda_prior: 1e-4,
            lambda_couple: 1e-3,
            outer_iterations: 5,
            tolerance: 1e-8,
            projection: ProjectionModel::Orthographic,
            pixel_pitch: None,
        }
    }
}

impl DbiniConfig {
    pub fn perspective() -> Self {
        DbiniConfig {
            projection: ProjectionModel::Perspective,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.k_bilateral, self.lambda_prior, self.lambda_couple];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!(
                "integration weights must be finite and non-negative: {weights:?}"
            )));
        }
        if self.outer_iterations == 0 {
            return Err(Error::Config("outer_iterations must be at least 1".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "solver tolerance {} must be positive",
                self.tolerance
            )));
        }
        if let Some(p) = self.pixel_pitch {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Config(format!("pixel pitch {p} must be positive")));
            }
        }
        Ok(())
    }
}

/// Inputs of one integration: front and back normals on the front camera's
/// grid (back normals face away from the camera) and body-prior depths
/// measured along the same rays.
#[derive(Debug, Clone)]
pub struct DbiniProblem {
    pub normals_front: ClothedNormalMap,
    pub normals_back: ClothedNormalMap,
    pub prior_front: DepthField,
    pub prior_back: DepthField,
    pub camera: Camera,
}

impl DbiniProblem {
    pub fn new(
        normals_front: ClothedNormalMap,
        normals_back: ClothedNormalMap,
        prior_front: DepthField,
        prior_back: DepthField,
        camera: Camera,
    ) -> Result<Self> {
        let (w, h) = (camera.width(), camera.height());
        let dims = [
            (normals_front.width, normals_front.height),
            (normals_back.width, normals_back.height),
            (prior_front.width, prior_front.height),
            (prior_back.width, prior_back.height),
        ];
        if dims.iter().any(|&d| d != (w, h)) {
            return Err(Error::Shape(format!(
                "integration maps {dims:?} do not all match the camera {w}x{h}"
            )));
        }
        if normals_front.frame != normals_back.frame {
            return Err(Error::Frame {
                map: normals_back.frame,
                expected: normals_front.frame,
            });
        }
        Ok(DbiniProblem {
            normals_front,
            normals_back,
            prior_front,
            prior_back,
            camera,
        })
    }

    pub fn width(&self) -> usize {
        self.camera.width()
    }

    pub fn height(&self) -> usize {
        self.camera.height()
    }
}

/// A problem whose prior masks lie inside its normal masks, with the
/// silhouette ring shared by both surfaces.
#[derive(Debug, Clone)]
pub struct Harmonized {
    pub problem: DbiniProblem,
    /// Pixels masked in both surfaces with a 4-neighbour (or the image
    /// border) outside that intersection.
    pub ring: Vec<usize>,
}

fn neighbours4(i: usize, w: usize, h: usize) -> impl Iterator<Item = Option<usize>> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
}

pub fn harmonize_masks(problem: &DbiniProblem) -> Result<Harmonized> {
    let (w, h) = (problem.width(), problem.height());
    let mut out = problem.clone();
    for (prior, normals) in [
        (&mut out.prior_front, &problem.normals_front),
        (&mut out.prior_back, &problem.normals_back),
    ] {
        for (p, &m) in prior.mask.iter_mut().zip(&normals.mask) {
            *p &= m;
        }
    }
    let both: Vec<bool> = problem
        .normals_front
        .mask
        .iter()
        .zip(&problem.normals_back.mask)
        .map(|(&f, &b)| f && b)
        .collect();
    if problem.normals_front.masked_count() == 0 || problem.normals_back.masked_count() == 0 {
        return Err(Error::EmptySurface("a normal map has no masked pixels".into()));
    }
    if !both.iter().any(|&m| m) {
        return Err(Error::EmptySurface("front and back masks do not overlap".into()));
    }
    let ring = (0..w * h)
        .filter(|&i| both[i] && neighbours4(i, w, h).any(|n| n.is_none_or(|j| !both[j])))
        .collect();
    Ok(Harmonized { problem: out, ring })
}

/// Residual summary of one integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbiniReport {
    /// Weighted RMS of the one-sided slope residuals, in pixel units.
    pub rms_normal_residual: f64,
    /// RMS of output minus prior depth over prior pixels, in metres.
    pub rms_prior_deviation: f64,
    /// Largest front/back depth gap on the silhouette ring, in metres.
    pub boundary_gap_max: f64,
    /// Objective after each outer iteration.
    pub objective: Vec<f64>,
    /// Pixels whose normal was too grazing to give a slope.
    pub demoted: usize,
    /// Masked pixels removed because nothing tied them to a prior.
    pub unanchored: usize,
    pub cg_iterations: usize,
}

impl DbiniReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct DbiniOutput {
    pub front: DepthField,
    pub back: DepthField,
    pub report: DbiniReport,
}

impl DbiniOutput {
    /// Writes `depth_front` and `depth_back` as PFM depth plus PGM mask, and
    /// `dbini_report.json`, into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, field) in [("depth_front", &self.front), ("depth_back", &self.back)] {
            write_depth_field(&dir.join(format!("{name}.pfm")), field)?;
        }
        self.report.write(&dir.join("dbini_report.json"))
    }
}
