//! Skinned parametric body model: shape blend directions, an articulated
//! skeleton, linear blend skinning, landmarks and the head up-vector.

mod template;

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_left_jacobian, TriMesh};

pub use template::{FACE_POINT_NAMES, JOINT_NAMES};

/// Shape coefficients are clamped to `[-BETA_LIMIT, BETA_LIMIT]`.
pub const BETA_LIMIT: f64 = 5.0;

/// Shape, pose and global rigid transform of a body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub beta: Vec<f64>,
    /// Per-joint axis-angle rotations relative to the parent.
    pub theta: Vec<Vector3<f64>>,
    pub global_rotation: Vector3<f64>,
    pub global_translation: Vector3<f64>,
}

impl BodyParams {
    pub fn rest(model: &BodyModel) -> Self {
        BodyParams {
            beta: vec![0.0; model.shape_count()],
            theta: vec![Vector3::zeros(); model.joint_count()],
            global_rotation: Vector3::zeros(),
            global_translation: Vector3::zeros(),
        }
    }

    /// Checks dimensions against `model` and that every value is finite.
    pub fn check(&self, model: &BodyModel) -> Result<()> {
        if self.beta.len() != model.shape_count() || self.theta.len() != model.joint_count() {
            return Err(Error::Shape(format!(
                "params have {} shape and {} joint entries, model expects {} and {}",
                self.beta.len(),
                self.theta.len(),
                model.shape_count(),
                model.joint_count()
            )));
        }
        if !self.to_vector().iter().all(|x| x.is_finite()) {
            return Err(Error::Shape("non-finite body parameter".into()));
        }
        Ok(())
    }

    /// Flat layout: beta, theta (joint-major xyz), global rotation, translation.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        for t in &self.theta {
            v.extend_from_slice(t.as_slice());
        }
        v.extend_from_slice(self.global_rotation.as_slice());
        v.extend_from_slice(self.global_translation.as_slice());
        v
    }

    pub fn from_vector(v: &[f64], shape_count: usize, joint_count: usize) -> Result<Self> {
        let layout = ParamLayout {
            shape_count,
            joint_count,
        };
        if v.len() != layout.len() {
            return Err(Error::Shape(format!(
                "flat parameter vector of {} values, expected {}",
                v.len(),
                layout.len()
            )));
        }
        let v3 = |o: usize| Vector3::new(v[o], v[o + 1], v[o + 2]);
        Ok(BodyParams {
            beta: v[..shape_count].to_vec(),
            theta: (0..joint_count).map(|k| v3(layout.theta(k))).collect(),
            global_rotation: v3(layout.global_rotation()),
            global_translation: v3(layout.translation()),
        })
    }

    pub fn clamp_shape(&mut self) {
        for b in &mut self.beta {
            *b = b.clamp(-BETA_LIMIT, BETA_LIMIT);
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Offsets of each parameter group inside [`BodyParams::to_vector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub shape_count: usize,
    pub joint_count: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.shape_count + 3 * self.joint_count + 6
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn theta(&self, joint: usize) -> usize {
        self.shape_count + 3 * joint
    }

    pub fn global_rotation(&self) -> usize {
        self.shape_count + 3 * self.joint_count
    }

    pub fn translation(&self) -> usize {
        self.global_rotation() + 3
    }
}

#[derive(Serialize, Deserialize)]
struct BodyModelJson {
    template_vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    shape_basis: Vec<Vec<Vector3<f64>>>,
    parents: Vec<i32>,
    joint_regressor: Vec<Vec<(u32, f64)>>,
    skin_weights: Vec<Vec<f64>>,
    landmark_joints: Vec<usize>,
    face_offsets: Vec<Vector3<f64>>,
    head_joint: usize,
    joint_depths: Vec<f64>,
}

/// Skinned humanoid template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BodyModelJson", into = "BodyModelJson")]
pub struct BodyModel {
    template: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    shape_basis: Vec<Vec<Vector3<f64>>>,
    parents: Vec<i32>,
    regressor: Vec<Vec<(u32, f64)>>,
    skin_weights: Vec<Vec<f64>>,
    landmark_joints: Vec<usize>,
    face_offsets: Vec<Vector3<f64>>,
    head_joint: usize,
    joint_depths: Vec<f64>,
    /// For each joint, the joints whose rotation moves it (ancestors and itself).
    chain: Vec<Vec<usize>>,
    /// `d rest_joint_k / d beta_b` from the linear regressor.
    joint_shape_jacobian: Vec<Vec<Vector3<f64>>>,
}

impl TryFrom<BodyModelJson> for BodyModel {
    type Error = Error;
    fn try_from(j: BodyModelJson) -> Result<Self> {
        BodyModel::new(
            j.template_vertices,
            j.triangles,
            j.shape_basis,
            j.parents,
            j.joint_regressor,
            j.skin_weights,
            j.landmark_joints,
            j.face_offsets,
            j.head_joint,
            j.joint_depths,
        )
    }
}

impl From<BodyModel> for BodyModelJson {
    fn from(m: BodyModel) -> Self {
        BodyModelJson {
            template_vertices: m.template,
            triangles: m.triangles,
            shape_basis: m.shape_basis,
            parents: m.parents,
            joint_regressor: m.regressor,
            skin_weights: m.skin_weights,
            landmark_joints: m.landmark_joints,
            face_offsets: m.face_offsets,
            head_joint: m.head_joint,
            joint_depths: m.joint_depths,
        }
    }
}

/// World-frame joint transforms of one pose, before the global transform.
#[derive(Debug, Clone)]
pub struct Posed {
    pub rest_joints: Vec<Point3<f64>>,
    /// Accumulated rotation of each joint.
    pub rotations: Vec<Matrix3<f64>>,
    /// Posed joint positions before the global transform.
    pub positions: Vec<Point3<f64>>,
    pub global_rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Posed {
    fn to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.global_rotation * p.coords + self.translation)
    }
}

impl BodyModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        template: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
        shape_basis: Vec<Vec<Vector3<f64>>>,
        parents: Vec<i32>,
        regressor: Vec<Vec<(u32, f64)>>,
        skin_weights: Vec<Vec<f64>>,
        landmark_joints: Vec<usize>,
        face_offsets: Vec<Vector3<f64>>,
        head_joint: usize,
        joint_depths: Vec<f64>,
    ) -> Result<Self> {
        let n = template.len();
        let k = parents.len();
        TriMesh::new(template.clone(), triangles.clone())?;
        if k == 0 || parents[0] != -1 {
            return Err(Error::Shape("skeleton must be rooted at joint 0".into()));
        }
        for (j, &p) in parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(Error::Shape(format!(
                    "joint {j} has parent {p}; parents must precede children"
                )));
            }
        }
        if shape_basis.iter().any(|b| b.len() != n) {
            return Err(Error::Shape("shape basis rows must match vertex count".into()));
        }
        if regressor.len() != k || regressor.iter().flatten().any(|&(i, _)| i as usize >= n) {
            return Err(Error::Shape("joint regressor does not match model".into()));
        }
        if skin_weights.len() != n {
            return Err(Error::Shape("skin weights must match vertex count".into()));
        }
        for (i, w) in skin_weights.iter().enumerate() {
            if w.len() != k || w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Shape(format!("skin weights of vertex {i} are invalid")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Shape(format!("skin weights of vertex {i} sum to {s}")));
            }
        }
        if landmark_joints.iter().any(|&j| j >= k) || head_joint >= k || joint_depths.len() != k {
            return Err(Error::Shape("landmark or head joint out of range".into()));
        }

        let mut chain: Vec<Vec<usize>> = Vec::with_capacity(k);
        for j in 0..k {
            let mut c = if parents[j] < 0 {
                Vec::new()
            } else {
                chain[parents[j] as usize].clone()
            };
            c.push(j);
            chain.push(c);
        }
        let joint_shape_jacobian = regressor
            .iter()
            .map(|row| {
                shape_basis
                    .iter()
                    .map(|b| row.iter().map(|&(i, w)| b[i as usize] * w).sum())
                    .collect()
            })
            .collect();

        Ok(BodyModel {
            template,
            triangles,
            shape_basis,
            parents,
            regressor,
            skin_weights,
            landmark_joints,
            face_offsets,
            head_joint,
            joint_depths,
            chain,
            joint_shape_jacobian,
        })
    }

    /// The built-in procedural humanoid (16 joints, 10 shape directions).
    pub fn standard() -> &'static BodyModel {
        static MODEL: OnceLock<BodyModel> = OnceLock::new();
        MODEL.get_or_init(template::build)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn shape_count(&self) -> usize {
        self.shape_basis.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            shape_count: self.shape_count(),
            joint_count: self.joint_count(),
        }
    }

    pub fn parents(&self) -> &[i32] {
        &self.parents
    }

    pub fn template_mesh(&self) -> TriMesh {
        TriMesh::new(self.template.clone(), self.triangles.clone()).expect("validated template")
    }

    pub fn skin_weights(&self) -> &[Vec<f64>] {
        &self.skin_weights
    }

    pub fn head_joint(&self) -> usize {
        self.head_joint
    }

    pub fn landmark_joints(&self) -> &[usize] {
        &self.landmark_joints
    }

    /// Joints followed by the face points.
    pub fn landmark_count(&self) -> usize {
        self.landmark_joints.len() + self.face_offsets.len()
    }

    /// Depth of each landmark below the body surface at rest (face points
    /// lie on the surface).
    pub fn landmark_depths(&self) -> Vec<f64> {
        self.landmark_joints
            .iter()
            .map(|&j| self.joint_depths[j])
            .chain(self.face_offsets.iter().map(|_| 0.0))
            .collect()
    }

    /// Joint each landmark is rigidly attached to.
    pub fn landmark_owner(&self, landmark: usize) -> usize {
        if landmark < self.landmark_joints.len() {
            self.landmark_joints[landmark]
        } else {
            self.head_joint
        }
    }

    pub fn shaped_template(&self, beta: &[f64]) -> Vec<Point3<f64>> {
        let mut v = self.template.clone();
        for (b, basis) in beta.iter().zip(&self.shape_basis) {
            if *b != 0.0 {
                for (p, d) in v.iter_mut().zip(basis) {
                    *p += d * *b;
                }
            }
        }
        v
    }

    fn regress(&self, shaped: &[Point3<f64>]) -> Vec<Point3<f64>> {
        self.regressor
            .iter()
            .map(|row| {
                Point3::from(
                    row.iter()
                        .map(|&(i, w)| shaped[i as usize].coords * w)
                        .sum::<Vector3<f64>>(),
                )
            })
            .collect()
    }

    fn pose_from_rest(&self, rest: Vec<Point3<f64>>, params: &BodyParams) -> Posed {
        let k = self.joint_count();
        let mut rotations = Vec::with_capacity(k);
        let mut positions = Vec::with_capacity(k);
        for j in 0..k {
            let local = *nalgebra::Rotation3::new(params.theta[j]).matrix();
            match self.parents[j] {
                p if p < 0 => {
                    rotations.push(local);
                    positions.push(rest[j]);
                }
                p => {
                    let p = p as usize;
                    let w: Matrix3<f64> = rotations[p];
                    // accumulate the displacement from rest so a rest pose is exact
                    let bone = rest[j] - rest[p];
                    let shift = (positions[p] - rest[p]) + (w * bone - bone);
                    positions.push(rest[j] + shift);
                    rotations.push(w * local);
                }
            }
        }
        Posed {
            rest_joints: rest,
            rotations,
            positions,
            global_rotation: *nalgebra::Rotation3::new(params.global_rotation).matrix(),
            translation: params.global_translation,
        }
    }

    /// Forward kinematics for `params`.
    pub fn pose(&self, params: &BodyParams) -> Result<Posed> {
        params.check(self)?;
        let rest = self.regress(&self.shaped_template(&params.beta));
        Ok(self.pose_from_rest(rest, params))
    }

    /// Linear blend skinning of the shaped template.
    pub fn skin(&self, params: &BodyParams) -> Result<TriMesh> {
        params.check(self)?;
        let shaped = self.shaped_template(&params.beta);
        let posed = self.pose_from_rest(self.regress(&shaped), params);
        let vertices = shaped
            .iter()
            .zip(&self.skin_weights)
            .map(|(v, w)| {
                // written as an offset from v so the rest pose reproduces it exactly
                let mut offset = Vector3::zeros();
                for (j, &wj) in w.iter().enumerate() {
                    if wj > 0.0 {
                        let rel = v - posed.rest_joints[j];
                        offset += ((posed.rotations[j] * rel - rel) + (posed.positions[j] - posed.rest_joints[j])) * wj;
                    }
                }
                posed.to_world(&(v + offset))
            })
            .collect();
        TriMesh::new_dropping_degenerate(vertices, self.triangles.clone())
    }

    /// Posed joint centres in world coordinates.
    pub fn joints3d(&self, params: &BodyParams) -> Result<Vec<Point3<f64>>> {
        let posed = self.pose(params)?;
        Ok(posed.positions.iter().map(|p| posed.to_world(p)).collect())
    }

    /// Landmark positions: the landmark joints followed by the face points.
    pub fn landmarks3d(&self, params: &BodyParams) -> Result<Vec<Point3<f64>>> {
        let posed = self.pose(params)?;
        Ok(self.landmarks_from(&posed))
    }

    fn landmarks_from(&self, posed: &Posed) -> Vec<Point3<f64>> {
        let h = self.head_joint;
        self.landmark_joints
            .iter()
            .map(|&j| posed.positions[j])
            .chain(
                self.face_offsets
                    .iter()
                    .map(|o| posed.positions[h] + posed.rotations[h] * o),
            )
            .map(|p| posed.to_world(&p))
            .collect()
    }

    /// Landmark positions with their Jacobians: `jac[l][p]` is the
    /// derivative of landmark `l` with respect to flat parameter `p`.
    pub fn landmarks_with_jacobian(&self, params: &BodyParams) -> Result<(Vec<Point3<f64>>, Vec<Vec<Vector3<f64>>>)> {
        let posed = self.pose(params)?;
        let layout = self.layout();
        let world = self.landmarks_from(&posed);
        let rg = posed.global_rotation;
        let jl_global = so3_left_jacobian(&params.global_rotation);
        // rotation axis (pre-global) contributed by joint j's component a
        let axes: Vec<[Vector3<f64>; 3]> = (0..self.joint_count())
            .map(|j| {
                let parent_rot = match self.parents[j] {
                    p if p < 0 => Matrix3::identity(),
                    p => posed.rotations[p as usize],
                };
                let m = parent_rot * so3_left_jacobian(&params.theta[j]);
                [m.column(0).into(), m.column(1).into(), m.column(2).into()]
            })
            .collect();
        // d posed_position_k / d beta_b, pre-global
        let dpos_dbeta: Vec<Vec<Vector3<f64>>> = {
            let mut out: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(self.joint_count());
            for j in 0..self.joint_count() {
                let row = match self.parents[j] {
                    p if p < 0 => self.joint_shape_jacobian[j].clone(),
                    p => {
                        let p = p as usize;
                        (0..self.shape_count())
                            .map(|b| {
                                out[p][b]
                                    + posed.rotations[p]
                                        * (self.joint_shape_jacobian[j][b] - self.joint_shape_jacobian[p][b])
                            })
                            .collect()
                    }
                };
                out.push(row);
            }
            out
        };

        let n_joint_lm = self.landmark_joints.len();
        let mut jac = Vec::with_capacity(world.len());
        for (l, w) in world.iter().enumerate() {
            let owner = self.landmark_owner(l);
            let local = Point3::from(rg.transpose() * (w - posed.translation));
            let mut col = vec![Vector3::zeros(); layout.len()];
            for (b, d) in dpos_dbeta[owner].iter().enumerate() {
                col[b] = rg * d;
            }
            // a joint landmark is not moved by its own rotation
            let movers = if l < n_joint_lm {
                &self.chain[owner][..self.chain[owner].len() - 1]
            } else {
                &self.chain[owner][..]
            };
            for &j in movers {
                let lever = local - posed.positions[j];
                for a in 0..3 {
                    col[layout.theta(j) + a] = rg * axes[j][a].cross(&lever);
                }
            }
            let from_origin = w.coords - posed.translation;
            for a in 0..3 {
                let axis: Vector3<f64> = jl_global.column(a).into();
                col[layout.global_rotation() + a] = axis.cross(&from_origin);
                col[layout.translation() + a] = Vector3::ith(a, 1.0);
            }
            jac.push(col);
        }
        Ok((world, jac))
    }

    /// World-space up axis of the head bone; `(0, 1, 0)` at rest.
    pub fn head_pitch_vector(&self, params: &BodyParams) -> Result<Vector3<f64>> {
        let posed = self.pose(params)?;
        Ok(posed.global_rotation * posed.rotations[self.head_joint] * Vector3::y())
    }

    /// Head up-vector and its derivative with respect to each flat parameter.
    pub fn head_pitch_with_jacobian(&self, params: &BodyParams) -> Result<(Vector3<f64>, Vec<Vector3<f64>>)> {
        let posed = self.pose(params)?;
        let layout = self.layout();
        let h = self.head_joint;
        let local_up = posed.rotations[h] * Vector3::y();
        let v = posed.global_rotation * local_up;
        let mut col = vec![Vector3::zeros(); layout.len()];
        for &j in &self.chain[h] {
            let parent_rot = match self.parents[j] {
                p if p < 0 => Matrix3::identity(),
                p => posed.rotations[p as usize],
            };
            let m = parent_rot * so3_left_jacobian(&params.theta[j]);
            for a in 0..3 {
                let axis: Vector3<f64> = m.column(a).into();
                col[layout.theta(j) + a] = posed.global_rotation * axis.cross(&local_up);
            }
        }
        let jl = so3_left_jacobian(&params.global_rotation);
        for a in 0..3 {
            let axis: Vector3<f64> = jl.column(a).into();
            col[layout.global_rotation() + a] = axis.cross(&v);
        }
        Ok((v, col))
    }
}

/// Averages parameter estimates: arithmetic mean for shape and translation,
/// chordal quaternion mean (signs aligned to the first estimate) for every
/// rotation.
pub fn average_params(estimates: &[BodyParams]) -> Result<BodyParams> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::EmptyInput("no parameter estimates to average".into()))?;
    let (nb, nk) = (first.beta.len(), first.theta.len());
    if estimates.iter().any(|e| e.beta.len() != nb || e.theta.len() != nk) {
        return Err(Error::Shape("estimates have inconsistent dimensions".into()));
    }
    if estimates.iter().all(|e| e == first) {
        return Ok(first.clone());
    }
    let n = estimates.len() as f64;
    let beta = (0..nb)
        .map(|b| estimates.iter().map(|e| e.beta[b]).sum::<f64>() / n)
        .collect();
    let translation = estimates.iter().map(|e| e.global_translation).sum::<Vector3<f64>>() / n;
    let theta = (0..nk)
        .map(|k| mean_rotation(estimates.iter().map(|e| e.theta[k])))
        .collect();
    let global = mean_rotation(estimates.iter().map(|e| e.global_rotation));
    Ok(BodyParams {
        beta,
        theta,
        global_rotation: global,
        global_translation: translation,
    })
}

fn mean_rotation(rotations: impl Iterator<Item = Vector3<f64>>) -> Vector3<f64> {
    let mut reference: Option<nalgebra::Vector4<f64>> = None;
    let mut acc = nalgebra::Vector4::zeros();
    for r in rotations {
        let q = UnitQuaternion::from_scaled_axis(r).into_inner().coords;
        let q = match reference {
            None => {
                reference = Some(q);
                q
            }
            Some(r0) if r0.dot(&q) < 0.0 => -q,
            Some(_) => q,
        };
        acc += q;
    }
    UnitQuaternion::new_normalize(nalgebra::Quaternion::from(acc)).scaled_axis()
}

#[cfg(test)]
mod tests;
