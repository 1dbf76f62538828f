//! Mesh-to-mesh evaluation: point-to-surface accuracy and completeness,
//! Chamfer distance and normal consistency, with exhaustive-scan oracles.
//!
//! Distances are reported in millimetres for meshes in metres. Meshes are
//! compared in their shared world frame; nothing is aligned first.

pub mod oracle;
mod report;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, Bvh, TriMesh};

pub use report::{aggregate, format_table, write_csv, MetricReport, CHAMFER_CONVENTION};

const MM_PER_M: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Samples per direction.
    pub samples: usize,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            samples: 100_000,
            seed: 0,
        }
    }
}

/// Per-sample distance (mm) and normal angle (degrees) from `from`'s
/// samples to their closest points on `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct Directional {
    pub distances_mm: Vec<f64>,
    pub angles_deg: Vec<f64>,
}

impl Directional {
    pub fn mean_distance(&self) -> f64 {
        mean(&self.distances_mm)
    }

    pub fn mean_angle(&self) -> f64 {
        mean(&self.angles_deg)
    }
}

/// Sum in sample order, so parallel evaluation stays reproducible.
fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

fn check(meshes: [&TriMesh; 2], n: usize) -> Result<()> {
    if meshes.iter().any(|m| m.is_empty()) {
        return Err(Error::EmptyInput("metric on an empty mesh".into()));
    }
    if n == 0 {
        return Err(Error::EmptyInput("metric needs at least one sample".into()));
    }
    Ok(())
}

/// Samples `from` and queries the closest points on `to`.
pub fn directional(from: &TriMesh, to: &TriMesh, n: usize, seed: u64) -> Result<Directional> {
    check([from, to], n)?;
    let samples = sample_surface(from, n, seed)?;
    let bvh = Bvh::build(to)?;
    let (distances_mm, angles_deg) = samples
        .par_iter()
        .map(|s| {
            let hit = bvh.closest_point(&s.position);
            (hit.distance * MM_PER_M, angle_deg(&s.normal, &hit.sample.normal))
        })
        .unzip();
    Ok(Directional {
        distances_mm,
        angles_deg,
    })
}

/// Mean distance from samples of `rec` to `gt`, in millimetres.
pub fn p2s_accuracy(rec: &TriMesh, gt: &TriMesh, n: usize, seed: u64) -> Result<f64> {
    Ok(directional(rec, gt, n, seed)?.mean_distance())
}

/// Mean distance from samples of `gt` to `rec`, in millimetres.
pub fn p2s_completeness(rec: &TriMesh, gt: &TriMesh, n: usize, seed: u64) -> Result<f64> {
    p2s_accuracy(gt, rec, n, seed)
}

/// Mean of the two directional means, in millimetres.
pub fn chamfer(rec: &TriMesh, gt: &TriMesh, n: usize, seed: u64) -> Result<f64> {
    Ok(0.5 * (p2s_accuracy(rec, gt, n, seed)? + p2s_completeness(rec, gt, n, seed)?))
}

/// Mean angle between each sample's face normal and the face normal at its
/// closest point, averaged over both directions, in degrees.
pub fn normal_consistency(rec: &TriMesh, gt: &TriMesh, n: usize, seed: u64) -> Result<f64> {
    Ok(0.5 * (directional(rec, gt, n, seed)?.mean_angle() + directional(gt, rec, n, seed)?.mean_angle()))
}

/// All four metrics from one shared seed; each direction is sampled once.
pub fn evaluate_pair(rec: &TriMesh, gt: &TriMesh, cfg: &MetricConfig) -> Result<MetricReport> {
    let forward = directional(rec, gt, cfg.samples, cfg.seed)?;
    let backward = directional(gt, rec, cfg.samples, cfg.seed)?;
    let (acc, comp) = (forward.mean_distance(), backward.mean_distance());
    Ok(MetricReport {
        chamfer_mm: 0.5 * (acc + comp),
        p2s_accuracy_mm: acc,
        p2s_completeness_mm: comp,
        normal_consistency_deg: 0.5 * (forward.mean_angle() + backward.mean_angle()),
        sample_count: cfg.samples,
        seed: cfg.seed,
        chamfer_convention: CHAMFER_CONVENTION.into(),
    })
}

/// Triangles of `mesh` whose mean vertex weight reaches `threshold`, for
/// region-restricted completeness.
pub fn region_mesh(mesh: &TriMesh, vertex_weight: &[f64], threshold: f64) -> Result<TriMesh> {
    if vertex_weight.len() != mesh.vertex_count() {
        return Err(Error::Shape(format!(
            "{} region weights for {} vertices",
            vertex_weight.len(),
            mesh.vertex_count()
        )));
    }
    let tris: Vec<usize> = mesh
        .triangles()
        .iter()
        .enumerate()
        .filter(|(_, t)| t.iter().map(|&k| vertex_weight[k as usize]).sum::<f64>() / 3.0 >= threshold)
        .map(|(i, _)| i)
        .collect();
    if tris.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no triangle reaches region weight {threshold}"
        )));
    }
    mesh.subset(&tris)
}
