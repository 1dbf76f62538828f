use super::*;
use crate::geometry::Rotation;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model() -> &'static BodyModel {
    BodyModel::standard()
}

fn random_params(rng: &mut ChaCha8Rng, pose: f64) -> BodyParams {
    let m = model();
    let mut p = BodyParams::rest(m);
    for b in &mut p.beta {
        *b = rng.random_range(-2.0..2.0);
    }
    for t in &mut p.theta {
        *t = Vector3::new(
            rng.random_range(-pose..pose),
            rng.random_range(-pose..pose),
            rng.random_range(-pose..pose),
        );
    }
    p.global_rotation = Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-3.0..3.0),
        rng.random_range(-0.5..0.5),
    );
    p.global_translation = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    p
}

#[test]
fn template_is_a_closed_humanoid() {
    let m = model();
    let mesh = m.template_mesh();
    assert!((1500..=3500).contains(&mesh.vertex_count()), "{}", mesh.vertex_count());
    assert!(mesh.is_closed());
    let (lo, hi) = mesh.bounds().unwrap();
    assert!(lo.y > -0.05 && lo.y < 0.05, "{lo}");
    assert!(hi.y > 1.7 && hi.y < 1.85, "{hi}");
    assert_eq!(m.joint_count(), 16);
    assert_eq!(m.shape_count(), 10);
    assert_eq!(m.landmark_count(), 20);
}

#[test]
fn skin_weights_are_convex() {
    for w in model().skin_weights() {
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn rest_pose_reproduces_template_exactly() {
    let m = model();
    let skinned = m.skin(&BodyParams::rest(m)).unwrap();
    assert_eq!(skinned, m.template_mesh());
}

#[test]
fn rest_joints_come_from_the_regressor() {
    let m = model();
    let j = m.joints3d(&BodyParams::rest(m)).unwrap();
    let regressed = m.regress(&m.template);
    assert_eq!(j, regressed);
    // the regressor reproduces the design skeleton
    assert!((j[0] - Point3::new(0.0, 0.95, 0.0)).norm() < 1e-9);
    assert!((j[3] - Point3::new(0.0, 1.55, 0.0)).norm() < 1e-9);
    assert!((j[11] - Point3::new(0.10, 0.50, 0.0)).norm() < 1e-9);
}

#[test]
fn translation_moves_everything_by_t() {
    let m = model();
    let t = Vector3::new(0.3, -1.2, 2.5);
    let mut p = BodyParams::rest(m);
    p.global_translation = t;
    let skinned = m.skin(&p).unwrap();
    for (a, b) in skinned.vertices().iter().zip(m.template_mesh().vertices()) {
        assert!((a - b - t).norm() < 1e-12);
    }
    let j0 = m.joints3d(&BodyParams::rest(m)).unwrap();
    for (a, b) in m.joints3d(&p).unwrap().iter().zip(&j0) {
        assert!((a - b - t).norm() < 1e-12);
    }
}

#[test]
fn single_joint_rotation_is_rigid_on_owned_vertices() {
    let m = model();
    let elbow = 5;
    let mut p = BodyParams::rest(m);
    let axis = (m.joints3d(&p).unwrap()[6] - m.joints3d(&p).unwrap()[5]).normalize();
    p.theta[elbow] = axis * std::f64::consts::FRAC_PI_2;
    let rest = m.template_mesh();
    let skinned = m.skin(&p).unwrap();
    let centre = m.joints3d(&BodyParams::rest(m)).unwrap()[elbow];
    // Rodrigues by hand for a 90 degree turn: v' = (a.v)a + a x v
    let rotate = |v: Vector3<f64>| axis * axis.dot(&v) + axis.cross(&v);
    let mut owned = 0;
    for (i, w) in m.skin_weights().iter().enumerate() {
        if w[elbow] == 1.0 {
            owned += 1;
            let expect = centre + rotate(rest.vertices()[i] - centre);
            assert!((skinned.vertices()[i] - expect).norm() < 1e-12);
        }
    }
    assert!(owned > 10, "{owned}");
}

#[test]
fn parent_rotation_moves_descendants_on_circles() {
    let m = model();
    let rest = m.joints3d(&BodyParams::rest(m)).unwrap();
    let mut p = BodyParams::rest(m);
    p.theta[4] = Vector3::new(0.3, -0.7, 0.4);
    let posed = m.joints3d(&p).unwrap();
    for j in [5, 6] {
        let r0 = (rest[j] - rest[4]).norm();
        let r1 = (posed[j] - posed[4]).norm();
        assert!((r0 - r1).abs() < 1e-9);
        assert!((posed[j] - rest[j]).norm() > 1e-3);
    }
    assert_eq!(posed[4], rest[4]);
    assert_eq!(posed[0..4], rest[0..4]);
}

#[test]
fn head_pitch_vector_cases() {
    let m = model();
    let mut p = BodyParams::rest(m);
    assert_eq!(m.head_pitch_vector(&p).unwrap(), Vector3::y());
    p.theta[3] = Vector3::new(30f64.to_radians(), 0.0, 0.0);
    let v = m.head_pitch_vector(&p).unwrap();
    assert!((v.dot(&Vector3::y()) - 30f64.to_radians().cos()).abs() < 1e-9);
    let mut yaw = BodyParams::rest(m);
    yaw.global_rotation = Vector3::new(0.0, 1.1, 0.0);
    assert!((m.head_pitch_vector(&yaw).unwrap() - Vector3::y()).norm() < 1e-12);
}

#[test]
fn skinning_is_rigid_equivariant() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let mut p = random_params(&mut rng, 0.4);
        let (g, t) = (p.global_rotation, p.global_translation);
        let posed = m.skin(&p).unwrap();
        p.global_rotation = Vector3::zeros();
        p.global_translation = Vector3::zeros();
        let canonical = m.skin(&p).unwrap();
        let r = Rotation::from_axis_angle(&g);
        for (a, b) in posed.vertices().iter().zip(canonical.vertices()) {
            assert!((a.coords - (r.apply(&b.coords) + t)).norm() < 1e-9);
        }
    }
}

#[test]
fn posed_vertices_lie_in_hull_of_rigid_images() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_params(&mut rng, 0.6);
    let posed = m.pose(&p).unwrap();
    let shaped = m.shaped_template(&p.beta);
    let skinned = m.skin(&p).unwrap();
    for (i, w) in m.skin_weights().iter().enumerate() {
        let images: Vec<Point3<f64>> = (0..m.joint_count())
            .filter(|&j| w[j] > 0.0)
            .map(|j| posed.to_world(&(posed.positions[j] + posed.rotations[j] * (shaped[i] - posed.rest_joints[j]))))
            .collect();
        let ws: Vec<f64> = w.iter().copied().filter(|&x| x > 0.0).collect();
        let combo: Vector3<f64> = images.iter().zip(&ws).map(|(q, &x)| q.coords * x).sum();
        assert!((combo - skinned.vertices()[i].coords).norm() < 1e-9);
        // every image coordinate range brackets the skinned vertex
        for a in 0..3 {
            let lo = images.iter().map(|q| q[a]).fold(f64::INFINITY, f64::min);
            let hi = images.iter().map(|q| q[a]).fold(f64::NEG_INFINITY, f64::max);
            let x = skinned.vertices()[i][a];
            assert!(x >= lo - 1e-9 && x <= hi + 1e-9);
        }
    }
}

#[test]
fn dimension_mismatch_is_a_shape_error() {
    let m = model();
    let mut p = BodyParams::rest(m);
    p.beta.pop();
    assert!(matches!(m.skin(&p), Err(Error::Shape(_))));
}

#[test]
fn landmark_and_head_jacobians_match_finite_differences() {
    let m = model();
    let layout = m.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let p = random_params(&mut rng, 0.8);
        let x = p.to_vector();
        let (_, jac) = m.landmarks_with_jacobian(&p).unwrap();
        let (_, hjac) = m.head_pitch_with_jacobian(&p).unwrap();
        let h = 1e-6;
        for k in 0..layout.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let pp = BodyParams::from_vector(&xp, 10, 16).unwrap();
            let pm = BodyParams::from_vector(&xm, 10, 16).unwrap();
            let lp = m.landmarks3d(&pp).unwrap();
            let lm = m.landmarks3d(&pm).unwrap();
            for l in 0..lp.len() {
                let fd = (lp[l] - lm[l]) / (2.0 * h);
                assert!((fd - jac[l][k]).norm() < 1e-6 * (1.0 + fd.norm()), "lm {l} param {k}");
            }
            let fd = (m.head_pitch_vector(&pp).unwrap() - m.head_pitch_vector(&pm).unwrap()) / (2.0 * h);
            assert!((fd - hjac[k]).norm() < 1e-6 * (1.0 + fd.norm()), "head param {k}");
        }
    }
}

#[test]
fn average_of_identical_estimates_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = random_params(&mut rng, 0.5);
    let avg = average_params(&[p.clone(), p.clone(), p.clone()]).unwrap();
    assert_eq!(avg, p);
}

#[test]
fn average_of_betas_and_symmetric_rotations() {
    let m = model();
    let mut a = BodyParams::rest(m);
    let mut b = BodyParams::rest(m);
    a.beta[0] = 1.0;
    b.beta[1] = 1.0;
    let axis = Vector3::new(0.2, 0.9, -0.3).normalize();
    a.theta[5] = axis * 20f64.to_radians();
    b.theta[5] = -axis * 20f64.to_radians();
    let avg = average_params(&[a, b]).unwrap();
    assert_eq!(&avg.beta[..3], &[0.5, 0.5, 0.0]);
    assert!(avg.theta[5].norm() < 1e-9);
}

#[test]
fn average_of_nothing_is_an_error() {
    assert!(matches!(average_params(&[]), Err(Error::EmptyInput(_))));
}

#[test]
fn model_and_params_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let path = dir.path().join("body.json");
    m.write(&path).unwrap();
    assert_eq!(&BodyModel::read(&path).unwrap(), m);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_params(&mut rng, 0.3);
    let pp = dir.path().join("params.json");
    p.write(&pp).unwrap();
    assert_eq!(BodyParams::read(&pp).unwrap(), p);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn average_is_permutation_invariant(seed in 0u64..1000, shift in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_params(&mut rng, 0.5);
        let estimates: Vec<BodyParams> = (0..5)
            .map(|_| {
                let mut e = base.clone();
                for t in e.theta.iter_mut().chain([&mut e.global_rotation]) {
                    *t += Vector3::new(
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                    );
                }
                e.beta[0] += rng.random_range(-1.0..1.0);
                e
            })
            .collect();
        let mut rotated = estimates.clone();
        rotated.rotate_left(shift);
        let a = average_params(&estimates).unwrap().to_vector();
        let b = average_params(&rotated).unwrap().to_vector();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn head_vector_is_unit(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, 1.5);
        let v = model().head_pitch_vector(&p).unwrap();
        prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        let loss = 1.0 - v.y;
        prop_assert!((0.0..=2.0).contains(&loss));
    }
}
