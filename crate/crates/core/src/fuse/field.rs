use std::collections::VecDeque;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ScalarGrid;

use super::hash::PointHash;
use super::{FuseConfig, OrientedPointCloud};

/// Grid layers between the band and the border.
const BORDER_LAYERS: usize = 2;

/// Signed field on the grid: negative inside. Within the support radius of
/// some sample the value is the Gaussian-weighted mean distance to the
/// samples' tangent planes; elsewhere it is ± the support radius, with the
/// outside found by flood fill from the grid border.
pub fn signed_field(cloud: &OrientedPointCloud, cfg: &FuseConfig) -> Result<ScalarGrid> {
    let (lo, hi) = bounds(&cloud.points).ok_or_else(|| Error::FusionFailed("empty cloud".into()))?;
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::FusionFailed("cloud has zero extent".into()));
    }
    let support_voxels = 2.0 * cfg.bandwidth;
    let pad = support_voxels.ceil() as usize + BORDER_LAYERS;
    let interior = cfg.grid_resolution as isize - 1 - 2 * pad as isize;
    if interior < 4 {
        return Err(Error::Config(format!(
            "grid resolution {} leaves no room inside a {pad}-voxel pad",
            cfg.grid_resolution
        )));
    }
    let spacing = extent / interior as f64;
    let origin = lo - Vector3::repeat(pad as f64 * spacing);
    let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / spacing).ceil() as usize + 2 * pad + 1);
    let sigma = cfg.bandwidth * spacing;
    let support = support_voxels * spacing;

    let hash = PointHash::new(&cloud.points, support);
    let n = dims[0] * dims[1] * dims[2];
    let template = ScalarGrid {
        dims,
        origin,
        spacing,
        values: Vec::new(),
    };
    let near = hash.occupied_near();
    // None off the band
    let band: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = template.position_of(i);
            if !near.contains(&hash.key(&x)) {
                return None;
            }
            let (mut num, mut den) = (0.0, 0.0);
            hash.for_each_within(&cloud.points, &x, support, |k, d2| {
                let w = (-d2 / (sigma * sigma)).exp();
                num += w * cloud.normals[k].dot(&(x - cloud.points[k]));
                den += w;
            });
            (den > 0.0).then(|| num / den)
        })
        .collect();

    let mut outside = vec![false; n];
    let mut queue = VecDeque::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let border = [x, y, z].iter().zip(dims).any(|(&c, d)| c == 0 || c + 1 == d);
                let i = template.index(x, y, z);
                if border && band[i].is_none() {
                    outside[i] = true;
                    queue.push_back(i);
                }
            }
        }
    }
    let strides = [1, dims[0], dims[0] * dims[1]];
    while let Some(i) = queue.pop_front() {
        let coords = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
        for axis in 0..3 {
            for up in [false, true] {
                let j = match (up, coords[axis]) {
                    (false, 0) => continue,
                    (false, _) => i - strides[axis],
                    (true, c) if c + 1 == dims[axis] => continue,
                    (true, _) => i + strides[axis],
                };
                if !outside[j] && band[j].is_none() {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let values = band
        .iter()
        .zip(&outside)
        .map(|(b, &out)| match b {
            Some(v) => *v,
            None if out => support,
            None => -support,
        })
        .collect();
    Ok(ScalarGrid { values, ..template })
}

fn bounds(points: &[Point3<f64>]) -> Option<(Point3<f64>, Point3<f64>)> {
    let first = points.first()?;
    Some(
        points
            .iter()
            .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
    )
}
