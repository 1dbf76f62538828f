use nalgebra::Vector3;

use super::*;
use crate::render::fixtures::axis_camera;

fn field(res: usize, f: impl Fn(usize, usize) -> Option<f64>) -> DepthField {
    let mut depth = vec![0.0; res * res];
    let mut mask = vec![false; res * res];
    for y in 0..res {
        for x in 0..res {
            if let Some(d) = f(x, y) {
                depth[y * res + x] = d;
                mask[y * res + x] = true;
            }
        }
    }
    DepthField::new(res, res, depth, mask).unwrap()
}

fn normals(res: usize, f: impl Fn(usize, usize) -> Option<Vector3<f64>>) -> ClothedNormalMap {
    let mut normal = vec![Vector3::zeros(); res * res];
    let mut mask = vec![false; res * res];
    for y in 0..res {
        for x in 0..res {
            if let Some(n) = f(x, y) {
                normal[y * res + x] = n.normalize();
                mask[y * res + x] = true;
            }
        }
    }
    ClothedNormalMap::new(res, res, normal, mask, 0).unwrap()
}

fn ortho(pitch: f64) -> DbiniConfig {
    DbiniConfig {
        pixel_pitch: Some(pitch),
        ..Default::default()
    }
}

fn max_error(out: &DepthField, truth: impl Fn(usize, usize) -> f64) -> f64 {
    let w = out.width;
    (0..out.depth.len())
        .filter(|&i| out.mask[i])
        .map(|i| (out.depth[i] - truth(i % w, i / w)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn fronto_parallel_plane_is_recovered_exactly() {
    let res = 24;
    let d = 3.0;
    let problem = DbiniProblem::new(
        normals(res, |_, _| Some(Vector3::new(0.0, 0.0, -1.0))),
        normals(res, |_, _| Some(Vector3::new(0.0, 0.0, 1.0))),
        field(res, |_, _| Some(d)),
        field(res, |_, _| Some(d)),
        axis_camera(res, 30.0),
    )
    .unwrap();
    for cfg in [ortho(0.01), DbiniConfig::default(), DbiniConfig::perspective()] {
        let out = integrate(&problem, &cfg).unwrap();
        assert!(max_error(&out.front, |_, _| d) < 1e-10);
        assert!(max_error(&out.back, |_, _| d) < 1e-10);
        assert!(out.report.rms_normal_residual < 1e-10);
        assert!(out.report.rms_prior_deviation < 1e-10);
        assert_eq!(out.front.masked_count(), res * res);
    }
}

#[test]
fn tilted_plane_from_single_anchor_is_an_exact_ramp() {
    let res = 32;
    // slope 0.5 per pixel along u, pitch 1 m
    let n = Vector3::new(0.5, 0.0, -1.0);
    let (front0, back0) = (10.0, 30.0);
    let anchor = |d: f64| move |x: usize, y: usize| (x == 0 && y == 0).then_some(d);
    let problem = DbiniProblem::new(
        normals(res, |_, _| Some(n)),
        normals(res, |_, _| Some(-n)),
        field(res, anchor(front0)),
        field(res, anchor(back0)),
        axis_camera(res, 30.0),
    )
    .unwrap();
    let cfg = DbiniConfig {
        lambda_couple: 0.0,
        ..ortho(1.0)
    };
    let out = integrate(&problem, &cfg).unwrap();
    let front_err = max_error(&out.front, |x, _| front0 + 0.5 * x as f64);
    let back_err = max_error(&out.back, |x, _| back0 + 0.5 * x as f64);
    assert!(front_err < 1e-8, "{front_err}");
    assert!(back_err < 1e-8, "{back_err}");
}

struct Sphere {
    problem: DbiniProblem,
    front: Box<dyn Fn(usize, usize) -> f64>,
    back: Box<dyn Fn(usize, usize) -> f64>,
}

/// Orthographic unit sphere centred at depth `zc`, masked to the cap with
/// image radius below `cap`, anchored at the centre pixel or everywhere.
fn ortho_sphere(res: usize, zc: f64, cap: f64, dense_prior: bool) -> (Sphere, f64) {
    let pitch = 2.2 / res as f64;
    let c = (res as f64 - 1.0) / 2.0;
    let xy = move |x: usize, y: usize| ((x as f64 - c) * pitch, (y as f64 - c) * pitch);
    let inside = move |x: usize, y: usize| {
        let (a, b) = xy(x, y);
        let r2 = a * a + b * b;
        (r2 < cap * cap).then(|| (a, b, (1.0 - r2).sqrt()))
    };
    let centre = res / 2;
    let anchored = move |x: usize, y: usize| dense_prior || (x == centre && y == centre);
    let problem = DbiniProblem::new(
        normals(res, |x, y| inside(x, y).map(|(a, b, h)| Vector3::new(a, b, -h))),
        normals(res, |x, y| inside(x, y).map(|(a, b, h)| Vector3::new(a, b, h))),
        field(res, |x, y| {
            inside(x, y).filter(|_| anchored(x, y)).map(|(_, _, h)| zc - h)
        }),
        field(res, |x, y| {
            inside(x, y).filter(|_| anchored(x, y)).map(|(_, _, h)| zc + h)
        }),
        axis_camera(res, 100.0),
    )
    .unwrap();
    let depth = move |x: usize, y: usize| {
        let (a, b) = xy(x, y);
        (1.0 - a * a - b * b).max(0.0).sqrt()
    };
    (
        Sphere {
            problem,
            front: Box::new(move |x, y| zc - depth(x, y)),
            back: Box::new(move |x, y| zc + depth(x, y)),
        },
        pitch,
    )
}

fn rmse(out: &DepthField, truth: &dyn Fn(usize, usize) -> f64) -> f64 {
    let w = out.width;
    let errs: Vec<f64> = (0..out.depth.len())
        .filter(|&i| out.mask[i])
        .map(|i| out.depth[i] - truth(i % w, i / w))
        .collect();
    (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
}

#[test]
fn sphere_cap_from_centre_anchor_is_within_one_percent() {
    let (sphere, pitch) = ortho_sphere(128, 5.0, 0.95, false);
    let cfg = DbiniConfig {
        lambda_couple: 0.0,
        ..ortho(pitch)
    };
    let out = integrate(&sphere.problem, &cfg).unwrap();
    let (ef, eb) = (rmse(&out.front, &sphere.front), rmse(&out.back, &sphere.back));
    assert!(ef < 0.01 && eb < 0.01, "front {ef} back {eb}");
    assert!(out.front.masked_count() > 9_000);
}

#[test]
fn perspective_sphere_matches_ray_cast_depth() {
    let res = 96;
    let f = 200.0;
    let cam = axis_camera(res, f);
    let zc = 5.0;
    // ray t·d meets |p - (0,0,zc)| = 1 at the roots of a t² + b t + c
    let hits = |x: usize, y: usize| {
        let d = cam.ray_camera(x as f64, y as f64);
        let (a, b, c) = (d.norm_squared(), -2.0 * zc, zc * zc - 1.0);
        let disc = b * b - 4.0 * a * c;
        if disc <= 0.0 {
            return None;
        }
        let (t0, t1) = ((-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a));
        let centre = Vector3::new(0.0, 0.0, zc);
        let (n0, n1) = (d * t0 - centre, d * t1 - centre);
        // keep the cap whose front normal is clearly facing the camera
        (n0.dot(&d.normalize()) < -0.3).then_some((t0, n0, t1, n1))
    };
    let mid = res / 2;
    let problem = DbiniProblem::new(
        normals(res, |x, y| hits(x, y).map(|h| h.1)),
        normals(res, |x, y| hits(x, y).map(|h| h.3)),
        field(res, |x, y| hits(x, y).filter(|_| x == mid && y == mid).map(|h| h.0)),
        field(res, |x, y| hits(x, y).filter(|_| x == mid && y == mid).map(|h| h.2)),
        cam.clone(),
    )
    .unwrap();
    let cfg = DbiniConfig {
        lambda_couple: 0.0,
        ..DbiniConfig::perspective()
    };
    let out = integrate(&problem, &cfg).unwrap();
    let ef = rmse(&out.front, &|x, y| hits(x, y).unwrap().0);
    let eb = rmse(&out.back, &|x, y| hits(x, y).unwrap().2);
    assert!(ef < 0.01 && eb < 0.01, "front {ef} back {eb}");
}

#[test]
fn objective_never_increases() {
    let (sphere, pitch) = ortho_sphere(64, 4.0, 0.97, false);
    // two fronto-parallel halves whose priors disagree by a step
    let res = 40;
    let step = DbiniProblem::new(
        normals(res, |_, _| Some(Vector3::new(0.0, 0.0, -1.0))),
        normals(res, |_, _| Some(Vector3::new(0.0, 0.0, 1.0))),
        field(res, |x, _| Some(if x < res / 2 { 2.0 } else { 2.3 })),
        field(res, |x, _| Some(if x < res / 2 { 2.4 } else { 2.6 })),
        axis_camera(res, 50.0),
    )
    .unwrap();
    let fixtures = [
        (sphere.problem, ortho(pitch)),
        (
            step.clone(),
            DbiniConfig {
                lambda_prior: 0.05,
                outer_iterations: 8,
                ..ortho(0.01)
            },
        ),
        (
            step,
            DbiniConfig {
                outer_iterations: 8,
                ..DbiniConfig::perspective()
            },
        ),
    ];
    for (problem, cfg) in fixtures {
        let out = integrate(&problem, &cfg).unwrap();
        let obj = &out.report.objective;
        assert_eq!(obj.len(), cfg.outer_iterations);
        for pair in obj.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs(), "{obj:?}");
        }
    }
}

#[test]
fn reweighting_sharpens_a_depth_step() {
    let res = 40;
    let problem = DbiniProblem::new(
        normals(res, |_, _| Some(Vector3::new(0.0, 0.0, -1.0))),
        normals(res, |_, _| Some(Vector3::new(0.0, 0.0, 1.0))),
        field(res, |x, _| Some(if x < res / 2 { 2.0 } else { 2.3 })),
        field(res, |_, _| Some(2.6)),
        axis_camera(res, 50.0),
    )
    .unwrap();
    let jump = |iterations: usize| {
        let cfg = DbiniConfig {
            lambda_prior: 0.05,
            lambda_couple: 0.0,
            outer_iterations: iterations,
            ..ortho(0.01)
        };
        let out = integrate(&problem, &cfg).unwrap();
        let row = 20 * res;
        out.front.depth[row + res / 2] - out.front.depth[row + res / 2 - 1]
    };
    let (smooth, sharp) = (jump(1), jump(6));
    assert!(sharp > 2.0 * smooth, "{smooth} -> {sharp}");
    assert!(sharp > 0.2, "{sharp}");
}

#[test]
fn shifting_priors_shifts_the_output() {
    let (sphere, pitch) = ortho_sphere(48, 4.0, 0.9, true);
    let cfg = ortho(pitch);
    let base = integrate(&sphere.problem, &cfg).unwrap();
    let c = 0.37;
    let mut shifted = sphere.problem.clone();
    for prior in [&mut shifted.prior_front, &mut shifted.prior_back] {
        for (d, &m) in prior.depth.iter_mut().zip(&prior.mask) {
            if m {
                *d += c;
            }
        }
    }
    let moved = integrate(&shifted, &cfg).unwrap();
    for (a, b) in [(&base.front, &moved.front), (&base.back, &moved.back)] {
        assert_eq!(a.mask, b.mask);
        for i in (0..a.depth.len()).filter(|&i| a.mask[i]) {
            assert!((b.depth[i] - a.depth[i] - c).abs() < 1e-6);
        }
    }
}

#[test]
fn stronger_coupling_closes_the_boundary_gap() {
    let (sphere, pitch) = ortho_sphere(64, 4.0, 0.9, false);
    let gaps: Vec<f64> = [1e-3, 1e-2, 1e-1]
        .into_iter()
        .map(|lambda_couple| {
            let cfg = DbiniConfig {
                lambda_couple,
                ..ortho(pitch)
            };
            integrate(&sphere.problem, &cfg).unwrap().report.boundary_gap_max
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn missing_anchor_is_an_unanchored_gauge() {
    let (sphere, pitch) = ortho_sphere(24, 4.0, 0.9, false);
    let mut problem = sphere.problem;
    problem.prior_front.mask.fill(false);
    problem.prior_back.mask.fill(false);
    let cfg = DbiniConfig {
        lambda_couple: 0.0,
        ..ortho(pitch)
    };
    assert!(matches!(integrate(&problem, &cfg), Err(Error::UnanchoredGauge(_))));
    // unset pitch cannot even be derived without priors
    assert!(matches!(
        integrate(&problem, &DbiniConfig::default()),
        Err(Error::UnanchoredGauge(_))
    ));
}

#[test]
fn coupling_anchors_a_surface_without_priors() {
    let (sphere, pitch) = ortho_sphere(32, 4.0, 0.9, true);
    let mut problem = sphere.problem;
    problem.prior_back.mask.fill(false);
    let out = integrate(&problem, &ortho(pitch)).unwrap();
    assert_eq!(out.back.masked_count(), problem.normals_back.masked_count());
    let none = DbiniConfig {
        lambda_couple: 0.0,
        ..ortho(pitch)
    };
    assert!(matches!(integrate(&problem, &none), Err(Error::UnanchoredGauge(_))));
}

#[test]
fn grazing_normals_are_demoted() {
    let res = 16;
    let grazing = |x: usize| x == 7;
    let problem = DbiniProblem::new(
        normals(res, |x, _| {
            Some(if grazing(x) {
                Vector3::new(1.0, 0.0, 1e-4)
            } else {
                Vector3::new(0.0, 0.0, -1.0)
            })
        }),
        normals(res, |_, _| Some(Vector3::new(0.0, 0.0, 1.0))),
        field(res, |_, _| Some(2.0)),
        field(res, |_, _| Some(2.5)),
        axis_camera(res, 20.0),
    )
    .unwrap();
    let out = integrate(&problem, &ortho(0.01)).unwrap();
    assert_eq!(out.report.demoted, res);
    assert!(out
        .front
        .depth
        .iter()
        .zip(&out.front.mask)
        .all(|(d, &m)| !m || d.is_finite()));
}

#[test]
fn isolated_unanchored_island_is_dropped() {
    let res = 20;
    let island = |x: usize, y: usize| x >= 15 && y >= 15;
    let body = |x: usize, y: usize| x < 10 && y < 10;
    let problem = DbiniProblem::new(
        normals(res, |x, y| {
            (body(x, y) || island(x, y)).then(|| Vector3::new(0.0, 0.0, -1.0))
        }),
        normals(res, |x, y| body(x, y).then(|| Vector3::new(0.0, 0.0, 1.0))),
        field(res, |x, y| body(x, y).then_some(2.0)),
        field(res, |x, y| body(x, y).then_some(2.2)),
        axis_camera(res, 20.0),
    )
    .unwrap();
    let out = integrate(&problem, &ortho(0.01)).unwrap();
    assert_eq!(out.report.unanchored, 25);
    assert_eq!(out.front.masked_count(), 100);
}

#[test]
fn identical_masks_ring_is_the_outer_ring() {
    let res = 12;
    let disc = |x: usize, y: usize| (2..10).contains(&x) && (3..9).contains(&y);
    let problem = DbiniProblem::new(
        normals(res, |x, y| disc(x, y).then(|| Vector3::new(0.0, 0.0, -1.0))),
        normals(res, |x, y| disc(x, y).then(|| Vector3::new(0.0, 0.0, 1.0))),
        field(res, |_, _| Some(2.0)),
        field(res, |_, _| Some(2.5)),
        axis_camera(res, 20.0),
    )
    .unwrap();
    let h = harmonize_masks(&problem).unwrap();
    assert_eq!(h.problem.normals_front.mask, problem.normals_front.mask);
    assert_eq!(h.problem.normals_back.mask, problem.normals_back.mask);
    // priors shrink into the normal masks
    assert_eq!(h.problem.prior_front.mask, problem.normals_front.mask);
    let expected: Vec<usize> = (0..res * res)
        .filter(|&i| {
            let (x, y) = (i % res, i / res);
            disc(x, y) && (x == 2 || x == 9 || y == 3 || y == 8)
        })
        .collect();
    assert_eq!(h.ring, expected);
}

#[test]
fn nested_masks_ring_follows_the_intersection() {
    let res = 12;
    let inner = |x: usize, y: usize| (4..8).contains(&x) && (4..8).contains(&y);
    let problem = DbiniProblem::new(
        normals(res, |x, y| inner(x, y).then(|| Vector3::new(0.0, 0.0, -1.0))),
        normals(res, |_, _| Some(Vector3::new(0.0, 0.0, 1.0))),
        field(res, |_, _| Some(2.0)),
        field(res, |_, _| Some(2.5)),
        axis_camera(res, 20.0),
    )
    .unwrap();
    let ring = harmonize_masks(&problem).unwrap().ring;
    assert_eq!(ring.len(), 12);
    assert!(ring.iter().all(|&i| inner(i % res, i / res)));
}

#[test]
fn disjoint_masks_are_an_empty_surface() {
    let res = 8;
    let problem = DbiniProblem::new(
        normals(res, |x, _| (x < 4).then(|| Vector3::new(0.0, 0.0, -1.0))),
        normals(res, |x, _| (x >= 4).then(|| Vector3::new(0.0, 0.0, 1.0))),
        field(res, |_, _| Some(2.0)),
        field(res, |_, _| Some(2.5)),
        axis_camera(res, 20.0),
    )
    .unwrap();
    assert!(matches!(harmonize_masks(&problem), Err(Error::EmptySurface(_))));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let res = 8;
    let n = normals(res, |_, _| Some(Vector3::new(0.0, 0.0, -1.0)));
    let mut back = n.clone();
    back.frame = 3;
    let prior = field(res, |_, _| Some(2.0));
    let cam = axis_camera(res, 20.0);
    assert!(matches!(
        DbiniProblem::new(n.clone(), back, prior.clone(), prior.clone(), cam.clone()),
        Err(Error::Frame { .. })
    ));
    assert!(matches!(
        DbiniProblem::new(n.clone(), n.clone(), field(4, |_, _| Some(2.0)), prior, cam),
        Err(Error::Shape(_))
    ));
    let bad = DbiniConfig {
        outer_iterations: 0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn output_files_round_trip() {
    let (sphere, pitch) = ortho_sphere(24, 4.0, 0.9, true);
    let out = integrate(&sphere.problem, &ortho(pitch)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let (w, h, mask) = crate::render::mapio::read_mask(&dir.path().join("depth_front.pgm")).unwrap();
    assert_eq!((w, h), (24, 24));
    assert_eq!(mask, out.front.mask);
    let report: DbiniReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dbini_report.json")).unwrap()).unwrap();
    assert_eq!(report, out.report);
}
