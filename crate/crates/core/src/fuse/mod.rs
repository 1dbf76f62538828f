//! Shape completion and watertight stitching of the partial surfaces.
//!
//! Front and back surfaces are sampled into an oriented cloud; body-prior
//! samples fill whatever the partial surfaces leave uncovered. The cloud is
//! turned into a signed field by implicit moving least squares in a narrow
//! band (Gaussian-weighted distances to the local oriented planes), the
//! sign away from the band comes from a flood fill from the grid border,
//! and marching cubes extracts the zero level set.

mod field;
mod hash;
#[cfg(test)]
mod tests;

use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{marching_cubes, TriMesh};

pub use field::signed_field;
use hash::PointHash;

/// Where a cloud point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSource {
    Front,
    Back,
    Filler,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub sources: Vec<PointSource>,
}

impl OrientedPointCloud {
    pub fn new(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>, sources: Vec<PointSource>) -> Result<Self> {
        if points.len() != normals.len() || points.len() != sources.len() {
            return Err(Error::Shape(format!(
                "cloud has {} points, {} normals and {} source tags",
                points.len(),
                normals.len(),
                sources.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::Shape(format!("cloud normal {i} is not unit length")));
        }
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::Shape(format!("cloud point {i} is not finite")));
        }
        Ok(OrientedPointCloud {
            points,
            normals,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, source: PointSource) -> usize {
        self.sources.iter().filter(|&&s| s == source).count()
    }

    fn push_mesh(&mut self, mesh: &TriMesh, source: PointSource) {
        let normals = mesh.area_weighted_normals();
        for (v, n) in mesh.vertices().iter().zip(&normals) {
            if let Some(n) = n.try_normalize(1e-12) {
                self.points.push(*v);
                self.normals.push(n);
                self.sources.push(source);
            }
        }
        for t in 0..mesh.triangle_count() {
            if let Some(n) = mesh.face_normal(t).try_normalize(1e-12) {
                self.points.push(mesh.centroid(t));
                self.normals.push(n);
                self.sources.push(source);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuseConfig {
    /// Body samples closer than this to a front/back sample are dropped.
    /// When unset, 2% of the body's bounding-box diagonal.
    pub filler_exclusion_radius: Option<f64>,
    /// Grid samples along the longest axis of the padded bounding box.
    pub grid_resolution: usize,
    /// Gaussian width of the implicit field, in voxel widths. Samples
    /// contribute out to twice this distance.
    pub bandwidth: f64,
    pub iso_value: f64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        FuseConfig {
            filler_exclusion_radius: None,
            grid_resolution: 128,
            bandwidth: 2.0,
            iso_value: 0.0,
        }
    }
}

impl FuseConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.filler_exclusion_radius {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::Config(format!("filler exclusion radius {t} must be positive")));
            }
        }
        if self.grid_resolution < 16 {
            return Err(Error::Config(format!(
                "grid resolution {} is below 16",
                self.grid_resolution
            )));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::Config(format!("bandwidth {} must be positive", self.bandwidth)));
        }
        if !self.iso_value.is_finite() {
            return Err(Error::Config("iso value must be finite".into()));
        }
        Ok(())
    }

    fn exclusion_radius(&self, body: &TriMesh) -> f64 {
        self.filler_exclusion_radius
            .unwrap_or_else(|| body.bounds().map_or(0.0, |(lo, hi)| 0.02 * (hi - lo).norm()))
    }
}

/// Samples the partial surfaces (vertices and triangle centroids) and adds
/// body samples farther than the exclusion radius from all of them.
pub fn assemble_cloud(front: &TriMesh, back: &TriMesh, body: &TriMesh, cfg: &FuseConfig) -> Result<OrientedPointCloud> {
    cfg.validate()?;
    if front.is_empty() || back.is_empty() {
        return Err(Error::EmptySurface(
            "front and back surfaces must both be non-empty".into(),
        ));
    }
    let mut cloud = OrientedPointCloud::default();
    cloud.push_mesh(front, PointSource::Front);
    cloud.push_mesh(back, PointSource::Back);
    if body.is_empty() {
        log::warn!("no body mesh to fill gaps between the partial surfaces; the cloud may be incomplete");
        return Ok(cloud);
    }
    let tau = cfg.exclusion_radius(body);
    if !tau.is_finite() {
        return Ok(cloud);
    }
    let mut filler = OrientedPointCloud::default();
    filler.push_mesh(body, PointSource::Filler);
    let hash = PointHash::new(&cloud.points, tau);
    for ((p, n), s) in filler.points.into_iter().zip(filler.normals).zip(filler.sources) {
        if !hash.any_within(&cloud.points, &p, tau) {
            cloud.points.push(p);
            cloud.normals.push(n);
            cloud.sources.push(s);
        }
    }
    Ok(cloud)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseDiagnostics {
    /// Connected components of the raw iso-surface.
    pub component_count: usize,
    /// Open edges of the raw iso-surface, before component selection.
    pub open_edges: usize,
    pub filler_fraction: f64,
    pub point_count: usize,
    pub voxel_size: f64,
    pub grid_dims: [usize; 3],
    pub triangle_count: usize,
}

impl FuseDiagnostics {
    pub fn write(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Minimum cloud size accepted by [`fuse`].
pub const MIN_CLOUD_POINTS: usize = 100;

/// Fuses an oriented cloud into a closed mesh: the largest component of the
/// implicit field's zero level set.
pub fn fuse(cloud: &OrientedPointCloud, cfg: &FuseConfig) -> Result<(TriMesh, FuseDiagnostics)> {
    cfg.validate()?;
    if cloud.len() < MIN_CLOUD_POINTS {
        return Err(Error::FusionFailed(format!(
            "cloud has {} points, at least {MIN_CLOUD_POINTS} are needed",
            cloud.len()
        )));
    }
    let grid = signed_field(cloud, cfg)?;
    let raw = marching_cubes(&grid, cfg.iso_value)?;
    if raw.is_empty() {
        let lo = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = grid.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::FusionFailed(format!(
            "empty iso-surface: field range [{lo:.4}, {hi:.4}] over {} samples",
            grid.values.len()
        )));
    }
    let components = raw.connected_components();
    let largest = components
        .iter()
        .max_by_key(|c| c.len())
        .expect("non-empty mesh has a component");
    let mesh = raw.subset(largest)?;
    if !mesh.is_closed() {
        return Err(Error::FusionFailed(format!(
            "largest component has {} open edges",
            mesh.open_edge_count()
        )));
    }
    let diagnostics = FuseDiagnostics {
        component_count: components.len(),
        open_edges: raw.open_edge_count(),
        filler_fraction: cloud.count(PointSource::Filler) as f64 / cloud.len() as f64,
        point_count: cloud.len(),
        voxel_size: grid.spacing,
        grid_dims: grid.dims,
        triangle_count: mesh.triangle_count(),
    };
    Ok((mesh, diagnostics))
}
