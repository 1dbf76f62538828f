use std::collections::{HashMap, HashSet};

use nalgebra::Point3;

/// Uniform-grid bucket index over a point set for fixed-radius queries.
pub(crate) struct PointHash {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<u32>>,
}

impl PointHash {
    pub fn new(points: &[Point3<f64>], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(key(p, cell)).or_default().push(i as u32);
        }
        PointHash { cell, buckets }
    }

    /// Calls `visit` with every indexed point within `radius` of `q`
    /// (`radius` must not exceed the cell size), in a fixed order.
    pub fn for_each_within(
        &self,
        points: &[Point3<f64>],
        q: &Point3<f64>,
        radius: f64,
        mut visit: impl FnMut(usize, f64),
    ) {
        debug_assert!(radius <= self.cell);
        let [x, y, z] = key(q, self.cell);
        let r2 = radius * radius;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(ids) = self.buckets.get(&[x + dx, y + dy, z + dz]) {
                        for &i in ids {
                            let d2 = (points[i as usize] - q).norm_squared();
                            if d2 <= r2 {
                                visit(i as usize, d2);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Cells with a point in their 27-neighbourhood; queries from any other
    /// cell visit nothing.
    pub fn occupied_near(&self) -> HashSet<[i64; 3]> {
        let mut near = HashSet::new();
        for &[x, y, z] in self.buckets.keys() {
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        near.insert([x + dx, y + dy, z + dz]);
                    }
                }
            }
        }
        near
    }

    pub fn key(&self, q: &Point3<f64>) -> [i64; 3] {
        key(q, self.cell)
    }

    pub fn any_within(&self, points: &[Point3<f64>], q: &Point3<f64>, radius: f64) -> bool {
        let mut hit = false;
        self.for_each_within(points, q, radius, |_, _| hit = true);
        hit
    }
}

fn key(p: &Point3<f64>, cell: f64) -> [i64; 3] {
    [p.x, p.y, p.z].map(|c| (c / cell).floor() as i64)
}
