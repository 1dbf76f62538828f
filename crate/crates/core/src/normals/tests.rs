use std::fs;

use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

use super::*;
use crate::render::fixtures::{axis_camera, uv_sphere};
use crate::render::mapio::{write_pfm, PfmImage};

fn sphere_map() -> (TriMesh, Camera, ClothedNormalMap) {
    let sphere = uv_sphere(Point3::new(0.0, 0.0, 4.0), 1.0, 65, 130);
    let cam = axis_camera(65, 40.0);
    let map = oracle_normals(&sphere, &cam, Layer::Front, 0).unwrap();
    (sphere, cam, map)
}

#[test]
fn oracle_centre_pixel_faces_camera() {
    let (_, _, map) = sphere_map();
    let c = 32 * 65 + 32;
    assert!(map.mask[c]);
    assert!((map.normal[c] - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-3);
    assert_eq!(map.frame, 0);
}

#[test]
fn oracle_without_displacement_matches_body_render() {
    let (sphere, cam, map) = sphere_map();
    let body = rasterize(&sphere, &cam, Layer::Front);
    assert_eq!(map.normal, body.normal);
    assert_eq!(map.mask, body.mask);
}

#[test]
fn displaced_sphere_differs_from_smooth() {
    let (sphere, cam, smooth) = sphere_map();
    let bumpy_vertices: Vec<Point3<f64>> = sphere
        .vertices()
        .iter()
        .map(|p| {
            let c = Point3::new(0.0, 0.0, 4.0);
            let d = p - c;
            let bump = 1.0 + 0.06 * (7.0 * d.x).sin() * (7.0 * d.y).sin();
            c + d * bump
        })
        .collect();
    let bumpy = TriMesh::new(bumpy_vertices, sphere.triangles().to_vec()).unwrap();
    let map = oracle_normals(&bumpy, &cam, Layer::Front, 0).unwrap();
    let (mut both, mut differ) = (0, 0);
    for i in 0..map.mask.len() {
        if map.mask[i] && smooth.mask[i] {
            both += 1;
            let cos = map.normal[i].dot(&smooth.normal[i]).clamp(-1.0, 1.0);
            if cos.acos() > 5f64.to_radians() {
                differ += 1;
            }
        }
    }
    assert!(differ as f64 >= 0.01 * both as f64, "{differ} of {both}");
}

#[test]
fn empty_clothed_mesh_is_rejected() {
    let cam = axis_camera(8, 10.0);
    let empty = TriMesh::new(vec![], vec![]).unwrap();
    assert!(oracle_normals(&empty, &cam, Layer::Front, 0).is_err());
}

#[test]
fn rotation_identity_and_inverse() {
    let (_, _, map) = sphere_map();
    let same = rotate_normal_map(&map, &Rotation::identity(), 0);
    assert_eq!(same, map);
    let r = Rotation::from_axis_angle(&Vector3::new(0.3, -1.1, 0.4));
    let back = rotate_normal_map(&rotate_normal_map(&map, &r, 3), &r.inverse(), 0);
    assert_eq!(back.mask, map.mask);
    assert_eq!(back.frame, 0);
    for (a, b) in back.normal.iter().zip(&map.normal) {
        assert!((a - b).norm() < 1e-12);
    }
    let rotated = rotate_normal_map(&map, &r, 3);
    assert_eq!(rotated.frame, 3);
    for (n, &m) in rotated.normal.iter().zip(&rotated.mask) {
        if m {
            assert!((n.norm() - 1.0).abs() < 1e-6);
        }
    }
}

/// Octahedron stretched and tilted so that no face is edge-on to the axis.
fn tilted_octahedron(center: Point3<f64>) -> TriMesh {
    let rot = Rotation::from_axis_angle(&Vector3::new(0.35, 0.5, 0.15));
    let axes = [
        Vector3::new(0.5, 0.0, 0.0),
        Vector3::new(0.0, 0.6, 0.0),
        Vector3::new(0.0, 0.0, 0.4),
    ];
    let mut v = Vec::new();
    for a in axes {
        v.push(center + rot.apply(&a));
        v.push(center - rot.apply(&a));
    }
    // vertices: 0 +x, 1 -x, 2 +y, 3 -y, 4 +z, 5 -z
    let t = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    let mut mesh = TriMesh::new(v, t).unwrap();
    if mesh.face_normal(0).dot(&(mesh.centroid(0) - center)) < 0.0 {
        mesh = mesh.flipped();
    }
    mesh
}

#[test]
fn back_view_map_rotated_matches_front_frame_back_normals() {
    let res = 128;
    let f = 160.0;
    let target = Point3::new(0.0, 0.0, 0.0);
    let front = Camera::look_at(Point3::new(0.0, 0.0, -3.0), target, Vector3::y(), f, res, res).unwrap();
    let back = Camera::look_at(Point3::new(0.0, 0.0, 3.0), target, Vector3::y(), f, res, res).unwrap();
    let mesh = tilted_octahedron(target);

    let truth = rasterize(&mesh, &front, Layer::Back);
    let seen_from_back = rasterize(&mesh, &back, Layer::Front);
    let back_map = ClothedNormalMap::from_raster(&seen_from_back, 1);
    let moved = transfer_normal_map(&back_map, &back, &front, 0, &truth.depth_field()).unwrap();
    assert_eq!(moved.frame, 0);

    let mut checked = 0;
    for i in 0..res * res {
        if !truth.mask[i] || !moved.mask[i] {
            continue;
        }
        let p = front.unproject((i % res) as f64, (i / res) as f64, truth.depth[i]);
        let proj = back.project(&p).unwrap();
        let (bx, by) = (proj.pixel.x.round() as i64, proj.pixel.y.round() as i64);
        // co-visible: the back view sees this very point
        let j = by as usize * res + bx as usize;
        if (seen_from_back.depth[j] - proj.depth).abs() > 0.05 {
            continue;
        }
        // away from face boundaries in the back view
        let uniform = (-1..=1).all(|dy| {
            (-1..=1).all(|dx| {
                let (x, y) = (bx + dx, by + dy);
                let k = y as usize * res + x as usize;
                seen_from_back.mask[k] && seen_from_back.normal[k] == seen_from_back.normal[j]
            })
        });
        if !uniform {
            continue;
        }
        checked += 1;
        assert!((moved.normal[i] - truth.normal[i]).norm() < 1e-3, "pixel {i}");
    }
    assert!(checked > 500, "{checked}");
}

#[test]
fn transfer_rejects_mismatched_proxy() {
    let cam = axis_camera(8, 10.0);
    let other = axis_camera(6, 10.0);
    let map = ClothedNormalMap::new(8, 8, vec![Vector3::zeros(); 64], vec![false; 64], 0).unwrap();
    let proxy = DepthField::new(6, 6, vec![1.0; 36], vec![true; 36]).unwrap();
    assert!(matches!(
        transfer_normal_map(
            &map,
            &cam,
            &other,
            0,
            &DepthField::new(8, 8, vec![1.0; 64], vec![true; 64]).unwrap()
        ),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        transfer_normal_map(&map, &cam, &cam, 0, &proxy),
        Err(Error::Shape(_))
    ));
}

#[test]
fn oracle_file_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("normals.pfm");
    let (_, cam, map) = sphere_map();
    map.write(&path).unwrap();
    let raw = read_pfm(&path).unwrap();
    for (i, n) in map.normal.iter().enumerate() {
        let stored = &raw.data[3 * i..3 * i + 3];
        if map.mask[i] {
            assert_eq!(stored, [n.x as f32, n.y as f32, n.z as f32]);
        } else {
            assert_eq!(stored, [0.0; 3]);
        }
    }
    let (loaded, dropped) = load_normal_map(&path, &cam, 0).unwrap();
    assert_eq!(dropped, 0);
    assert_eq!(loaded.mask, map.mask);
    for (a, b) in loaded.normal.iter().zip(&map.normal) {
        assert!((a - b).norm() < 1e-6);
    }
}

#[test]
fn zero_vectors_on_mask_are_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.pfm");
    let cam = axis_camera(4, 5.0);
    let mut normal = vec![Vector3::new(0.0, 0.0, -1.0); 16];
    normal[5] = Vector3::zeros();
    normal[9] = Vector3::zeros();
    write_pfm_normals(&path, 4, 4, &normal, &[true; 16]).unwrap();
    write_mask(&path.with_extension("pgm"), 4, 4, &[true; 16]).unwrap();
    let (map, dropped) = load_normal_map(&path, &cam, 2).unwrap();
    assert_eq!(dropped, 2);
    assert_eq!(map.masked_count(), 14);
    assert!(!map.mask[5] && !map.mask[9]);
    assert_eq!(map.frame, 2);
}

#[test]
fn unnormalised_vectors_are_renormalised() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.pfm");
    let cam = axis_camera(2, 5.0);
    let img = PfmImage {
        width: 2,
        height: 2,
        channels: 3,
        data: vec![0.0, 0.0, -2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0, f32::NAN, 0.0, 1.0],
    };
    write_pfm(&path, &img).unwrap();
    let (map, dropped) = load_normal_map(&path, &cam, 0).unwrap();
    // without a sibling mask the nonzero pixels form the mask; NaN is dropped
    assert_eq!(map.mask, vec![true, true, false, false]);
    assert_eq!(dropped, 1);
    assert!((map.normal[1] - Vector3::new(0.6, 0.8, 0.0)).norm() < 1e-7);
}

#[test]
fn resolution_mismatch_is_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.pfm");
    let small = vec![Vector3::new(0.0, 0.0, -1.0); 128 * 128];
    write_pfm_normals(&path, 128, 128, &small, &vec![true; 128 * 128]).unwrap();
    let cam = axis_camera(256, 300.0);
    assert!(matches!(load_normal_map(&path, &cam, 0), Err(Error::Shape(_))));
    let missing = dir.path().join("absent.pfm");
    assert!(matches!(load_normal_map(&missing, &cam, 0), Err(Error::Io { .. })));
    fs::write(&path, b"garbage").unwrap();
    assert!(load_normal_map(&path, &cam, 0).is_err());
}

#[test]
fn file_provider_reads_scene_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cam, map) = sphere_map();
    fs::create_dir_all(dir.path().join("view_1")).unwrap();
    let provider = FileProvider {
        root: dir.path().to_path_buf(),
    };
    map.write(&provider.path_for(1, Layer::Front)).unwrap();
    let loaded = provider.normals(1, &cam, Layer::Front).unwrap();
    assert_eq!(loaded.frame, 1);
    assert_eq!(loaded.mask, map.mask);
    assert_eq!(provider.kind(), ProviderKind::File);
    assert!(provider.normals(1, &cam, Layer::Back).is_err());
}

fn unit() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

proptest! {
    #[test]
    fn rotation_preserves_pixel_angles(
        a in prop::collection::vec(unit(), 6),
        b in prop::collection::vec(unit(), 6),
        axis in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
    ) {
        let rot = Rotation::from_axis_angle(&Vector3::new(axis.0, axis.1, axis.2));
        let m1 = ClothedNormalMap::new(3, 2, a, vec![true; 6], 0).unwrap();
        let m2 = ClothedNormalMap::new(3, 2, b, vec![true; 6], 0).unwrap();
        let r1 = rotate_normal_map(&m1, &rot, 1);
        let r2 = rotate_normal_map(&m2, &rot, 1);
        for i in 0..6 {
            let before = angle(&m1.normal[i], &m2.normal[i]);
            let after = angle(&r1.normal[i], &r2.normal[i]);
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
