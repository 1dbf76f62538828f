//! Exhaustive-scan reference implementations of the directional metrics.

use nalgebra::Point3;

use crate::error::Result;
use crate::geometry::{closest_point_on_triangle, sample_surface, tie_limit, TriMesh};

use super::{angle_deg, check, Directional, MM_PER_M};

/// Closest triangle by scanning all of them; near-ties go to the lowest
/// index.
pub fn closest_triangle(mesh: &TriMesh, q: &Point3<f64>) -> (usize, f64) {
    let d: Vec<f64> = (0..mesh.triangle_count())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            (closest_point_on_triangle(q, &a, &b, &c) - q).norm()
        })
        .collect();
    let nearest = d.iter().copied().fold(f64::INFINITY, f64::min);
    let limit = tie_limit(nearest);
    let t = d.iter().position(|&x| x <= limit).expect("mesh has triangles");
    (t, nearest)
}

pub fn directional(from: &TriMesh, to: &TriMesh, n: usize, seed: u64) -> Result<Directional> {
    check([from, to], n)?;
    let mut out = Directional {
        distances_mm: Vec::with_capacity(n),
        angles_deg: Vec::with_capacity(n),
    };
    for s in sample_surface(from, n, seed)? {
        let (t, d) = closest_triangle(to, &s.position);
        out.distances_mm.push(d * MM_PER_M);
        out.angles_deg.push(angle_deg(&s.normal, &to.face_normal(t)));
    }
    Ok(out)
}

pub fn chamfer(rec: &TriMesh, gt: &TriMesh, n: usize, seed: u64) -> Result<f64> {
    Ok(0.5 * (directional(rec, gt, n, seed)?.mean_distance() + directional(gt, rec, n, seed)?.mean_distance()))
}

pub fn normal_consistency(rec: &TriMesh, gt: &TriMesh, n: usize, seed: u64) -> Result<f64> {
    Ok(0.5 * (directional(rec, gt, n, seed)?.mean_angle() + directional(gt, rec, n, seed)?.mean_angle()))
}
