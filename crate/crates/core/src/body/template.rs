//! Procedural capsule humanoid used as the default body model.
//!
//! Rest pose: y up, facing +z, +x is the subject's left, feet near y = 0,
//! arms hanging 40° away from the torso.

use nalgebra::{DMatrix, DVector, Point3, Vector3};

use super::BodyModel;
use crate::geometry::{marching_cubes, Bvh, ScalarGrid, TriMesh};

pub(super) const JOINT_COUNT: usize = 16;
pub(super) const SHAPE_COUNT: usize = 10;
pub(super) const HEAD_JOINT: usize = 3;

pub(super) const PARENTS: [i32; JOINT_COUNT] = [-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14];

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "spine",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

pub const FACE_POINT_NAMES: [&str; 4] = ["nose", "left_eye", "right_eye", "chin"];

const GRID_SPACING: f64 = 0.028;
const BLEND: f64 = 0.03;
const SKIN_SHARPNESS: f64 = 0.015;
const SKIN_CUTOFF: f64 = 0.02;
const TORSO_DEPTH_RATIO: f64 = 0.75;

const ARM_ANGLE_DEG: f64 = 40.0;
const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.25;
const HAND: f64 = 0.08;
const HEAD_CENTRE: [f64; 3] = [0.0, 1.66, 0.01];
const HEAD_RADIUS: f64 = 0.11;

fn arm_dir(side: f64) -> Vector3<f64> {
    let a = ARM_ANGLE_DEG.to_radians();
    Vector3::new(side * a.sin(), -a.cos(), 0.0)
}

fn design_joints() -> [Point3<f64>; JOINT_COUNT] {
    let mut j = [Point3::origin(); JOINT_COUNT];
    j[0] = Point3::new(0.0, 0.95, 0.0);
    j[1] = Point3::new(0.0, 1.20, 0.0);
    j[2] = Point3::new(0.0, 1.45, 0.0);
    j[3] = Point3::new(0.0, 1.55, 0.0);
    for (base, side) in [(4, 1.0), (7, -1.0)] {
        let d = arm_dir(side);
        j[base] = Point3::new(side * 0.18, 1.42, 0.0);
        j[base + 1] = j[base] + d * UPPER_ARM;
        j[base + 2] = j[base + 1] + d * FOREARM;
    }
    for (base, side) in [(10, 1.0), (13, -1.0)] {
        j[base] = Point3::new(side * 0.09, 0.90, 0.0);
        j[base + 1] = Point3::new(side * 0.10, 0.50, 0.0);
        j[base + 2] = Point3::new(side * 0.10, 0.10, 0.0);
    }
    j
}

#[derive(Clone, Copy)]
struct Capsule {
    a: Point3<f64>,
    b: Point3<f64>,
    radius: f64,
    depth_ratio: f64,
}

impl Capsule {
    fn new(a: Point3<f64>, b: Point3<f64>, radius: f64) -> Self {
        Capsule {
            a,
            b,
            radius,
            depth_ratio: 1.0,
        }
    }

    fn flattened(mut self, ratio: f64) -> Self {
        self.depth_ratio = ratio;
        self
    }

    fn distance(&self, p: &Point3<f64>) -> f64 {
        let q = Point3::new(p.x, p.y, p.z / self.depth_ratio);
        let ab = self.b - self.a;
        let t = if ab.norm_squared() > 0.0 {
            ((q - self.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (q - (self.a + ab * t)).norm() - self.radius
    }
}

/// Capsules describing each joint's bone; the union of all of them is the
/// body surface.
fn bones(j: &[Point3<f64>; JOINT_COUNT]) -> Vec<Vec<Capsule>> {
    let p = |x: f64, y: f64| Point3::new(x, y, 0.0);
    let mut b: Vec<Vec<Capsule>> = vec![Vec::new(); JOINT_COUNT];
    b[0] = vec![
        Capsule::new(p(0.0, 0.86), p(0.0, 1.05), 0.13).flattened(TORSO_DEPTH_RATIO),
        Capsule::new(p(-0.08, 0.91), p(0.08, 0.91), 0.11).flattened(TORSO_DEPTH_RATIO),
    ];
    b[1] = vec![
        Capsule::new(p(0.0, 1.05), p(0.0, 1.38), 0.13).flattened(TORSO_DEPTH_RATIO),
        Capsule::new(p(-0.11, 1.32), p(0.11, 1.32), 0.11).flattened(TORSO_DEPTH_RATIO),
    ];
    b[2] = vec![Capsule::new(p(0.0, 1.38), p(0.0, 1.56), 0.055)];
    let hc = Point3::from(Vector3::from(HEAD_CENTRE));
    b[3] = vec![Capsule::new(hc, hc, HEAD_RADIUS)];
    for (base, side) in [(4usize, 1.0), (7, -1.0)] {
        let d = arm_dir(side);
        b[base] = vec![
            Capsule::new(j[base], j[base], 0.06),
            Capsule::new(j[base], j[base + 1], 0.05),
        ];
        b[base + 1] = vec![Capsule::new(j[base + 1], j[base + 2], 0.042)];
        b[base + 2] = vec![Capsule::new(j[base + 2], j[base + 2] + d * HAND, 0.035)];
    }
    for base in [10usize, 13] {
        b[base] = vec![Capsule::new(j[base], j[base + 1], 0.075)];
        b[base + 1] = vec![Capsule::new(j[base + 1], j[base + 2], 0.055)];
        b[base + 2] = vec![Capsule::new(
            j[base + 2],
            j[base + 2] + Vector3::new(0.0, -0.05, 0.12),
            0.04,
        )];
    }
    b
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

fn body_sdf(bones: &[Vec<Capsule>], p: &Point3<f64>) -> f64 {
    bones
        .iter()
        .flatten()
        .map(|c| c.distance(p))
        .fold(f64::INFINITY, |acc, d| smooth_min(acc, d, BLEND))
}

fn surface(bones: &[Vec<Capsule>]) -> TriMesh {
    let h = GRID_SPACING;
    // symmetric about x = 0 so the template is mirror-symmetric
    let half_x = (0.72 / h).ceil() as usize;
    let dims = [2 * half_x + 1, (1.95 / h).ceil() as usize, (0.55 / h).ceil() as usize];
    let origin = Point3::new(-(half_x as f64) * h, -0.1, -0.25);
    let grid = ScalarGrid::from_fn(dims, origin, h, |p| body_sdf(bones, p));
    let mesh = marching_cubes(&grid, 0.0).expect("template surface");
    let comps = mesh.connected_components();
    let largest = comps.iter().max_by_key(|c| c.len()).expect("non-empty template");
    mesh.subset(largest).expect("template component")
}

fn skin_weights(vertices: &[Point3<f64>], bones: &[Vec<Capsule>]) -> Vec<[f64; JOINT_COUNT]> {
    vertices
        .iter()
        .map(|v| {
            let d: Vec<f64> = bones
                .iter()
                .map(|caps| caps.iter().map(|c| c.distance(v)).fold(f64::INFINITY, f64::min))
                .collect();
            let mut order: Vec<usize> = (0..JOINT_COUNT).collect();
            order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
            let dmin = d[order[0]];
            let mut w = [0.0; JOINT_COUNT];
            for &k in &order[..3] {
                w[k] = (-(d[k] - dmin) / SKIN_SHARPNESS).exp();
            }
            let s: f64 = w.iter().sum();
            for x in &mut w {
                *x /= s;
                if *x < SKIN_CUTOFF {
                    *x = 0.0;
                }
            }
            let s: f64 = w.iter().sum();
            for x in &mut w {
                *x /= s;
            }
            w
        })
        .collect()
}

/// Sparse regressor rows reproducing each design joint exactly as an affine
/// combination of nearby template vertices.
fn joint_regressor(
    vertices: &[Point3<f64>],
    joints: &[Point3<f64>; JOINT_COUNT],
    embed: &[f64; JOINT_COUNT],
) -> Vec<Vec<(u32, f64)>> {
    joints
        .iter()
        .zip(embed)
        .map(|(jp, &r)| {
            let mut by_dist: Vec<(f64, usize)> =
                vertices.iter().enumerate().map(|(i, v)| ((v - jp).norm(), i)).collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let radius = r + 0.03;
            let mut chosen: Vec<usize> = by_dist
                .iter()
                .take_while(|(d, _)| *d <= radius)
                .map(|&(_, i)| i)
                .collect();
            if chosen.len() < 12 {
                chosen = by_dist.iter().take(12).map(|&(_, i)| i).collect();
            }
            chosen.sort_unstable();
            let m = chosen.len();
            let uniform = DVector::from_element(m, 1.0 / m as f64);
            let c = DMatrix::from_fn(4, m, |row, col| if row < 3 { vertices[chosen[col]][row] } else { 1.0 });
            let target = DVector::from_vec(vec![jp.x, jp.y, jp.z, 1.0]);
            let resid = &target - &c * &uniform;
            let cct = &c * c.transpose();
            let lambda = cct.clone().try_inverse().expect("regressor support spans 3D") * resid;
            let w = uniform + c.transpose() * lambda;
            chosen.iter().zip(w.iter()).map(|(&i, &x)| (i as u32, x)).collect()
        })
        .collect()
}

fn shape_basis(
    vertices: &[Point3<f64>],
    weights: &[[f64; JOINT_COUNT]],
    joints: &[Point3<f64>; JOINT_COUNT],
) -> Vec<Vec<Vector3<f64>>> {
    let head_centre = Point3::from(Vector3::from(HEAD_CENTRE));
    let mut basis = vec![vec![Vector3::zeros(); vertices.len()]; SHAPE_COUNT];
    let radial = |v: &Point3<f64>, origin: &Point3<f64>, axis: &Vector3<f64>| {
        let r = v - origin;
        let r = r - axis * r.dot(axis);
        let n = r.norm();
        if n > 1e-6 {
            r / n
        } else {
            Vector3::zeros()
        }
    };
    for (i, (v, w)) in vertices.iter().zip(weights).enumerate() {
        let torso = w[0] + w[1] + w[2];
        let head = w[3];
        let arms = [(w[4] + w[5] + w[6], 1.0, 4usize), (w[7] + w[8] + w[9], -1.0, 7)];
        let legs = [(w[10] + w[11] + w[12], 1.0, 10usize), (w[13] + w[14] + w[15], -1.0, 13)];
        let leg_total = legs[0].0 + legs[1].0;
        let arm_total = arms[0].0 + arms[1].0;

        basis[0][i] = v.coords * 0.03;
        basis[1][i] = Vector3::new(0.0, -0.04 * ((0.90 - v.y) / 0.80).clamp(0.0, 1.0), 0.0) * leg_total;
        for &(m, side, base) in &arms {
            let a = arm_dir(side);
            let s = joints[base];
            let along = ((v - s).dot(&a) / (UPPER_ARM + FOREARM)).clamp(0.0, 1.0);
            basis[2][i] += a * (0.04 * along * m);
            basis[5][i] += radial(v, &s, &a) * (0.008 * m);
            basis[7][i] += Vector3::new(0.02 * side * m, 0.0, 0.0);
        }
        let lift = torso * ((v.y - 0.95) / 0.45).clamp(0.0, 1.0) + head + arm_total;
        basis[3][i] = Vector3::new(0.0, 0.03 * lift, 0.0);
        let horiz = Vector3::new(v.x, 0.0, v.z);
        basis[4][i] = horiz / horiz.norm().max(0.05) * (0.015 * torso);
        for &(m, side, base) in &legs {
            let axis = (joints[base + 2] - joints[base]).normalize();
            basis[6][i] += radial(v, &joints[base], &axis) * (0.012 * m);
            basis[8][i] += Vector3::new(0.015 * side * m, 0.0, 0.0);
        }
        basis[9][i] = (v - head_centre) * (0.1 * head);
    }
    basis
}

pub(super) fn build() -> BodyModel {
    let joints = design_joints();
    let bones = bones(&joints);
    let mesh = surface(&bones);
    let vertices = mesh.vertices().to_vec();
    let bvh = Bvh::build(&mesh).expect("non-empty template");
    let embed: [f64; JOINT_COUNT] = std::array::from_fn(|k| bvh.closest_point(&joints[k]).distance);
    let weights = skin_weights(&vertices, &bones);
    let regressor = joint_regressor(&vertices, &joints, &embed);
    let basis = shape_basis(&vertices, &weights, &joints);

    let hc = Point3::from(Vector3::from(HEAD_CENTRE));
    let face_design = [
        hc + Vector3::new(0.0, -0.01, 0.2),
        hc + Vector3::new(0.04, 0.03, 0.2),
        hc + Vector3::new(-0.04, 0.03, 0.2),
        hc + Vector3::new(0.0, -0.09, 0.2),
    ];
    // snap each design point onto the head surface along -z
    let face_offsets = face_design
        .iter()
        .map(|p| bvh.closest_point(p).sample.position - joints[HEAD_JOINT])
        .collect();

    BodyModel::new(
        vertices,
        mesh.triangles().to_vec(),
        basis,
        PARENTS.to_vec(),
        regressor,
        weights.iter().map(|w| w.to_vec()).collect(),
        (0..JOINT_COUNT).collect(),
        face_offsets,
        HEAD_JOINT,
        embed.to_vec(),
    )
    .expect("procedural template is valid")
}
