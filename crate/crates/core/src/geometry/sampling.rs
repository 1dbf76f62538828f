use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::TriMesh;
use crate::error::{Error, Result};

/// A point on a mesh surface with the geometric normal of its triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSample {
    pub position: Point3<f64>,
    pub normal: Vector3<f64>,
    pub triangle_index: usize,
}

/// Draws `n` area-proportional samples, deterministic in `seed`.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    if n == 0 {
        return Err(Error::EmptyInput("sample count must be at least 1".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.triangle_count());
    let mut total = 0.0;
    for i in 0..mesh.triangle_count() {
        total += mesh.triangle_area(i);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::EmptyInput("mesh has zero total area".into()));
    }
    let normals: Vec<Vector3<f64>> = (0..mesh.triangle_count()).map(|i| mesh.face_normal(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let tri = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let [a, b, c] = mesh.corners(tri);
        let position = Point3::from(a.coords * (1.0 - s) + b.coords * (s * (1.0 - r2)) + c.coords * (s * r2));
        out.push(SurfaceSample {
            position,
            normal: normals[tri],
            triangle_index: tri,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles_3_to_1() -> TriMesh {
        // triangle 0 has area 1.5, triangle 1 has area 0.5
        TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(3.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(11.0, 0.0, 0.0),
                Point3::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap()
    }

    #[test]
    fn area_proportional_counts() {
        let s = sample_surface(&two_triangles_3_to_1(), 40_000, 1).unwrap();
        let first = s.iter().filter(|x| x.triangle_index == 0).count() as i64;
        // binomial(40000, 0.75): sd ≈ 86.6, 3σ band is well inside ±300
        assert!((first - 30_000).abs() <= 300, "{first}");
    }

    #[test]
    fn deterministic_under_seed() {
        let m = two_triangles_3_to_1();
        assert_eq!(sample_surface(&m, 100, 9).unwrap(), sample_surface(&m, 100, 9).unwrap());
        assert_ne!(
            sample_surface(&m, 100, 9).unwrap(),
            sample_surface(&m, 100, 10).unwrap()
        );
    }

    #[test]
    fn single_sample_inside_triangle() {
        let m = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = sample_surface(&m, 1, 3).unwrap()[0];
        let p = s.position;
        assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        assert!((s.normal - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn zero_area_is_error() {
        let m = TriMesh::new(vec![], vec![]).unwrap();
        assert!(sample_surface(&m, 10, 0).is_err());
    }

    #[test]
    fn chi_square_on_ten_triangles() {
        // ten triangles with areas 1..=10 (scaled)
        let mut v = Vec::new();
        let mut t = Vec::new();
        for k in 0..10u32 {
            let x0 = 20.0 * k as f64;
            let w = (k + 1) as f64;
            v.push(Point3::new(x0, 0.0, 0.0));
            v.push(Point3::new(x0 + w, 0.0, 0.0));
            v.push(Point3::new(x0, 2.0, 0.0));
            t.push([3 * k, 3 * k + 1, 3 * k + 2]);
        }
        let m = TriMesh::new(v, t).unwrap();
        let n = 55_000;
        let s = sample_surface(&m, n, 42).unwrap();
        let mut counts = [0f64; 10];
        for x in &s {
            counts[x.triangle_index] += 1.0;
        }
        let chi2: f64 = (0..10)
            .map(|k| {
                let e = n as f64 * (k + 1) as f64 / 55.0;
                (counts[k] - e).powi(2) / e
            })
            .sum();
        // chi-square, 9 dof: p = 0.001 at 27.88
        assert!(chi2 < 27.88, "chi2 = {chi2}");
        for x in &s {
            let [a, b, c] = m.corners(x.triangle_index);
            let n = (b - a).cross(&(c - a));
            let bary_ok = [(a, b), (b, c), (c, a)]
                .iter()
                .all(|(p, q)| (q - p).cross(&(x.position - p)).dot(&n) >= -1e-9);
            assert!(bary_ok);
        }
    }
}
