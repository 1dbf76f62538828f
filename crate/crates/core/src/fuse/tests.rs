use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

use super::*;
use crate::geometry::io::ply_bytes;
use crate::geometry::{sample_surface, Bvh};
use crate::render::fixtures::uv_sphere;

/// Evenly spread points on the unit sphere with outward normals.
fn fibonacci_sphere(n: usize, source: PointSource) -> OrientedPointCloud {
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        let d = Vector3::new(r * phi.cos(), r * phi.sin(), z);
        points.push(Point3::from(d));
        normals.push(d);
    }
    OrientedPointCloud::new(points, normals, vec![source; n]).unwrap()
}

fn torus(major: f64, minor: f64, rings: usize, segs: usize) -> TriMesh {
    let mut vertices = Vec::new();
    for i in 0..rings {
        let u = 2.0 * PI * i as f64 / rings as f64;
        for j in 0..segs {
            let v = 2.0 * PI * j as f64 / segs as f64;
            let r = major + minor * v.cos();
            vertices.push(Point3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let id = |i: usize, j: usize| ((i % rings) * segs + j % segs) as u32;
    let mut triangles = Vec::new();
    for i in 0..rings {
        for j in 0..segs {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, triangles).unwrap()
}

fn cloud_of(mesh: &TriMesh, n: usize) -> OrientedPointCloud {
    let samples = sample_surface(mesh, n, 11).unwrap();
    OrientedPointCloud::new(
        samples.iter().map(|s| s.position).collect(),
        samples.iter().map(|s| s.normal).collect(),
        vec![PointSource::Front; n],
    )
    .unwrap()
}

#[test]
fn sphere_samples_fuse_to_a_closed_genus_zero_sphere() {
    let cloud = fibonacci_sphere(30_000, PointSource::Front);
    let (mesh, diag) = fuse(&cloud, &FuseConfig::default()).unwrap();
    assert!(mesh.is_closed());
    assert_eq!(mesh.euler_characteristic(), 2);
    assert_eq!(diag.open_edges, 0);
    let worst = mesh
        .vertices()
        .iter()
        .map(|v| (v.coords.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(worst < 2.0 * diag.voxel_size, "{worst} vs voxel {}", diag.voxel_size);
    // every input point lies within the bandwidth of the surface
    let bvh = Bvh::build(&mesh).unwrap();
    let band = FuseConfig::default().bandwidth * diag.voxel_size;
    let close = cloud
        .points
        .iter()
        .filter(|p| bvh.closest_point(p).distance <= band)
        .count();
    assert!(close as f64 >= 0.95 * cloud.len() as f64);
}

#[test]
fn facing_discs_with_side_filler_close_into_one_capsule() {
    let cfg = FuseConfig::default();
    let voxel = 1.0 / (cfg.grid_resolution as f64 - 1.0 - 2.0 * (2.0 * cfg.bandwidth + 2.0));
    let half_gap = 5.0 * voxel;
    let (mut points, mut normals, mut sources) = (Vec::new(), Vec::new(), Vec::new());
    let step = 0.01;
    let n = (0.5 / step) as i64;
    for i in -n..=n {
        for j in -n..=n {
            let (x, y) = (i as f64 * step, j as f64 * step);
            if x * x + y * y <= 0.25 {
                for (z, nz, source) in [
                    (-half_gap, -1.0, PointSource::Front),
                    (half_gap, 1.0, PointSource::Back),
                ] {
                    points.push(Point3::new(x, y, z));
                    normals.push(Vector3::new(0.0, 0.0, nz));
                    sources.push(source);
                }
            }
        }
    }
    let around = (2.0 * PI * 0.5 / step) as usize;
    let layers = (2.0 * half_gap / step).ceil() as usize;
    for k in 0..around {
        let a = 2.0 * PI * k as f64 / around as f64;
        for l in 0..=layers {
            let z = -half_gap + 2.0 * half_gap * l as f64 / layers as f64;
            points.push(Point3::new(0.5 * a.cos(), 0.5 * a.sin(), z));
            normals.push(Vector3::new(a.cos(), a.sin(), 0.0));
            sources.push(PointSource::Filler);
        }
    }
    let cloud = OrientedPointCloud::new(points, normals, sources).unwrap();
    let (mesh, diag) = fuse(&cloud, &cfg).unwrap();
    assert!((diag.voxel_size - voxel).abs() < 1e-12);
    assert_eq!(diag.component_count, 1);
    assert!(mesh.is_closed());
    assert_eq!(mesh.euler_characteristic(), 2);
    let (lo, hi) = mesh.bounds().unwrap();
    assert!(hi.z - lo.z < 2.0 * half_gap + 4.0 * voxel);
    assert!(hi.x - lo.x > 1.0 - 4.0 * voxel);
}

#[test]
fn closed_mesh_reconstructs_itself_within_two_voxels() {
    let shape = torus(0.6, 0.22, 96, 48);
    let cloud = cloud_of(&shape, 40_000);
    let (mesh, diag) = fuse(&cloud, &FuseConfig::default()).unwrap();
    assert!(mesh.is_closed());
    assert_eq!(mesh.euler_characteristic(), 0);
    let tol = 2.0 * diag.voxel_size;
    let to_shape = Bvh::build(&shape).unwrap();
    let out = mesh
        .vertices()
        .iter()
        .map(|v| to_shape.closest_point(v).distance)
        .fold(0.0, f64::max);
    let to_mesh = Bvh::build(&mesh).unwrap();
    let back = shape
        .vertices()
        .iter()
        .map(|v| to_mesh.closest_point(v).distance)
        .fold(0.0, f64::max);
    assert!(out < tol && back < tol, "{out} {back} vs {tol}");
}

#[test]
fn fusion_is_deterministic() {
    let cloud = cloud_of(&torus(0.6, 0.22, 48, 24), 8_000);
    let cfg = FuseConfig {
        grid_resolution: 64,
        ..Default::default()
    };
    let (a, da) = fuse(&cloud, &cfg).unwrap();
    let (b, db) = fuse(&cloud, &cfg).unwrap();
    assert_eq!(ply_bytes(&a), ply_bytes(&b));
    assert_eq!(da, db);
}

fn hemispheres(body: &TriMesh, keep: impl Fn(&Point3<f64>) -> bool) -> TriMesh {
    let tris: Vec<usize> = (0..body.triangle_count())
        .filter(|&t| keep(&body.centroid(t)))
        .collect();
    body.subset(&tris).unwrap()
}

#[test]
fn full_coverage_needs_no_filler() {
    let body = uv_sphere(Point3::origin(), 1.0, 24, 48);
    let front = hemispheres(&body, |c| c.z <= 0.0);
    let back = hemispheres(&body, |c| c.z > 0.0);
    let cloud = assemble_cloud(&front, &back, &body, &FuseConfig::default()).unwrap();
    assert_eq!(cloud.count(PointSource::Filler), 0);
    assert!(cloud.count(PointSource::Front) > 0 && cloud.count(PointSource::Back) > 0);
}

#[test]
fn uncovered_hemisphere_is_filled_beyond_the_exclusion_radius() {
    let body = uv_sphere(Point3::origin(), 1.0, 40, 80);
    let front = hemispheres(&body, |c| c.z <= 0.0);
    let back = hemispheres(&body, |c| c.z > 0.97);
    let tau = 0.05;
    let cfg = FuseConfig {
        filler_exclusion_radius: Some(tau),
        ..Default::default()
    };
    let cloud = assemble_cloud(&front, &back, &body, &cfg).unwrap();
    let filler: Vec<&Point3<f64>> = cloud
        .points
        .iter()
        .zip(&cloud.sources)
        .filter(|(_, &s)| s == PointSource::Filler)
        .map(|(p, _)| p)
        .collect();
    assert!(!filler.is_empty());
    // the rim z = 0 has front samples, so filler starts above it
    assert!(filler.iter().all(|p| p.z > 0.0));
    // body vertices well inside the band are all kept
    for v in body.vertices().iter().filter(|v| v.z > 2.0 * tau && v.z < 0.9) {
        assert!(filler.contains(&v), "{v:?}");
    }
}

#[test]
fn infinite_radius_adds_no_filler() {
    let body = uv_sphere(Point3::origin(), 1.0, 16, 32);
    let front = hemispheres(&body, |c| c.z <= -0.5);
    let back = hemispheres(&body, |c| c.z > 0.9);
    let cfg = FuseConfig {
        filler_exclusion_radius: Some(f64::INFINITY),
        ..Default::default()
    };
    assert_eq!(
        assemble_cloud(&front, &back, &body, &cfg)
            .unwrap()
            .count(PointSource::Filler),
        0
    );
}

#[test]
fn missing_body_still_assembles() {
    let body = uv_sphere(Point3::origin(), 1.0, 16, 32);
    let front = hemispheres(&body, |c| c.z <= 0.0);
    let back = hemispheres(&body, |c| c.z > 0.0);
    let empty = TriMesh::new(Vec::new(), Vec::new()).unwrap();
    let cloud = assemble_cloud(&front, &back, &empty, &FuseConfig::default()).unwrap();
    assert_eq!(cloud.count(PointSource::Filler), 0);
    assert!(matches!(
        assemble_cloud(&empty, &back, &body, &FuseConfig::default()),
        Err(Error::EmptySurface(_))
    ));
}

#[test]
fn invalid_inputs_are_rejected() {
    let small = fibonacci_sphere(50, PointSource::Front);
    assert!(matches!(
        fuse(&small, &FuseConfig::default()),
        Err(Error::FusionFailed(_))
    ));
    assert!(OrientedPointCloud::new(
        vec![Point3::origin()],
        vec![Vector3::new(0.0, 0.0, 2.0)],
        vec![PointSource::Back]
    )
    .is_err());
    assert!(OrientedPointCloud::new(vec![Point3::origin()], vec![], vec![PointSource::Back]).is_err());
    for bad in [
        FuseConfig {
            grid_resolution: 8,
            ..Default::default()
        },
        FuseConfig {
            filler_exclusion_radius: Some(0.0),
            ..Default::default()
        },
        FuseConfig {
            bandwidth: -1.0,
            ..Default::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn larger_radius_never_adds_filler(lo in 0.01f64..0.3, extra in 0.0f64..0.3, cut in -0.8f64..0.5) {
        let body = uv_sphere(Point3::origin(), 1.0, 16, 32);
        let front = hemispheres(&body, |c| c.z <= cut);
        let back = hemispheres(&body, |c| c.z > 0.9);
        let count = |tau: f64| {
            let cfg = FuseConfig { filler_exclusion_radius: Some(tau), ..Default::default() };
            assemble_cloud(&front, &back, &body, &cfg).unwrap().count(PointSource::Filler)
        };
        prop_assert!(count(lo + extra) <= count(lo));
    }
}
