//! Synthetic scenes: a posed body, a displaced "clothed" surface, a ring of
//! cameras, oracle observations and noisy per-view parameter estimates.

mod clothing;
mod io;

use nalgebra::{Point2, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, BodyParams, BETA_LIMIT};
use crate::error::{Error, Result};
use crate::geometry::{Camera, TriMesh};
use crate::jmbo::{landmark_confidences, Landmark2d, ViewObservation};
use crate::normals::ClothedNormalMap;
use crate::render::{rasterize, DepthField, Layer};

pub use clothing::{make_clothed, make_clothed_with, ClothedSurface, ClothingSpec, HOOD_REGION_WEIGHT};
pub use io::{load_cameras, load_ground_truth, load_inputs, write_scene, GroundTruth, SceneInputs, SceneMeta};

/// Half the horizontal field of view of the rig cameras.
pub const RIG_HALF_FOV_DEG: f64 = 24.0;
pub const DEFAULT_RADIUS: f64 = 2.5;
pub const DEFAULT_RESOLUTION: usize = 256;
/// Aim point of the rig, roughly the middle of a standing subject.
pub const DEFAULT_TARGET: [f64; 3] = [0.0, 0.9, 0.0];

/// `n` cameras on a horizontal circle around `target`, camera `k` at angle
/// `2πk/n` measured from +z (the subject's front) toward +x.
pub fn place_cameras(
    n: usize,
    radius: f64,
    eye_height: f64,
    target: Point3<f64>,
    resolution: usize,
) -> Result<Vec<Camera>> {
    if n == 0 || !(radius > 0.0) || resolution == 0 {
        return Err(Error::Config(format!(
            "camera rig needs n >= 1, radius > 0 and a resolution, got {n}, {radius}, {resolution}"
        )));
    }
    let focal = 0.5 * resolution as f64 / RIG_HALF_FOV_DEG.to_radians().tan();
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            let eye = Point3::new(target.x + radius * a.sin(), eye_height, target.z + radius * a.cos());
            Camera::look_at(eye, target, Vector3::y(), focal, resolution, resolution)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseKind {
    Rest,
    Walking,
    ArmsRaised,
}

impl PoseKind {
    /// Joint rotations of the pose on the standard joint layout.
    pub fn theta(self, joint_count: usize) -> Vec<Vector3<f64>> {
        let mut t = vec![Vector3::zeros(); joint_count];
        if joint_count < 16 {
            return t;
        }
        match self {
            PoseKind::Rest => {}
            PoseKind::Walking => {
                t[10] = Vector3::new(-0.35, 0.0, 0.0);
                t[13] = Vector3::new(0.3, 0.0, 0.0);
                t[14] = Vector3::new(0.35, 0.0, 0.0);
                t[4] = Vector3::new(0.3, 0.0, 0.0);
                t[7] = Vector3::new(-0.3, 0.0, 0.0);
                t[5] = Vector3::new(-0.2, 0.0, 0.0);
                t[8] = Vector3::new(-0.2, 0.0, 0.0);
            }
            PoseKind::ArmsRaised => {
                t[4] = Vector3::new(0.0, 0.0, 1.4);
                t[7] = Vector3::new(0.0, 0.0, -1.4);
                t[5] = Vector3::new(0.0, 0.0, 0.2);
                t[8] = Vector3::new(0.0, 0.0, -0.2);
            }
        }
        t
    }
}

/// Everything that determines a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub subject_seed: u64,
    pub noise_seed: u64,
    pub views: usize,
    pub resolution: usize,
    pub radius: f64,
    pub pose: PoseKind,
    /// Range of the clothing noise displacement in metres.
    pub amplitude: f64,
    /// Height of the bump on the back; `None` uses `amplitude`.
    pub hood_height: Option<f64>,
    pub sigma_pose: f64,
    pub sigma_trans: f64,
    pub landmark_sigma_px: f64,
    /// Half-width of the uniform range the subject's shape is drawn from.
    pub shape_spread: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            subject_seed: 1,
            noise_seed: 1,
            views: 8,
            resolution: DEFAULT_RESOLUTION,
            radius: DEFAULT_RADIUS,
            pose: PoseKind::Rest,
            amplitude: 0.02,
            hood_height: None,
            sigma_pose: 0.09,
            sigma_trans: 0.05,
            landmark_sigma_px: 2.0,
            shape_spread: 1.0,
        }
    }
}

impl SceneConfig {
    /// Ten-subject benchmark: amplitudes cycle through 0, 1, 2 and 4 cm and
    /// poses through rest, walking and arms-raised.
    pub fn suite() -> Vec<SceneConfig> {
        const AMPLITUDES: [f64; 4] = [0.0, 0.01, 0.02, 0.04];
        const POSES: [PoseKind; 3] = [PoseKind::Rest, PoseKind::Walking, PoseKind::ArmsRaised];
        (0..10)
            .map(|i| SceneConfig {
                subject_seed: 100 + i as u64,
                noise_seed: 200 + i as u64,
                pose: POSES[i % 3],
                amplitude: AMPLITUDES[i % 4],
                ..SceneConfig::default()
            })
            .collect()
    }

    /// Subject with light clothing and a pronounced bump on the back.
    pub fn hooded(seed: u64) -> SceneConfig {
        SceneConfig {
            subject_seed: seed,
            noise_seed: seed + 1000,
            amplitude: 0.01,
            hood_height: Some(0.08),
            ..SceneConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.amplitude,
            self.hood_height.unwrap_or(0.0),
            self.sigma_pose,
            self.sigma_trans,
            self.landmark_sigma_px,
            self.shape_spread,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(
                "scene amplitudes and noise levels must be finite and nonnegative".into(),
            ));
        }
        if self.views == 0 || self.resolution == 0 || !(self.radius > 0.0) {
            return Err(Error::Config(
                "scene needs views, a resolution and a positive radius".into(),
            ));
        }
        Ok(())
    }
}

/// A generated scene. `clothed_depth[k]` is the ground-truth depth seen by
/// view `k`; it is written out with the scene but never used for fitting.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub gt_params: BodyParams,
    pub gt_body: TriMesh,
    pub gt_clothed: TriMesh,
    /// Per clothed vertex membership of the back bump, in `[0, 1]`.
    pub hood_weight: Vec<f64>,
    pub cameras: Vec<Camera>,
    pub observations: Vec<ViewObservation>,
    pub clothed_depth: Vec<DepthField>,
    pub noisy_estimates: Vec<BodyParams>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ground-truth parameters for a subject: shape drawn uniformly from
/// `±spread`, joint rotations from the pose, identity global transform.
pub fn subject_params(model: &BodyModel, seed: u64, pose: PoseKind, spread: f64) -> BodyParams {
    let mut rng = rng_for(seed, 1);
    let mut params = BodyParams::rest(model);
    if spread > 0.0 {
        let dist = Uniform::new_inclusive(-spread, spread).expect("valid range");
        for b in &mut params.beta {
            *b = dist.sample(&mut rng);
        }
        params.clamp_shape();
    }
    params.theta = pose.theta(model.joint_count());
    params
}

/// `n` independent perturbations of `gt`: every rotation (joints and global)
/// gets axis-angle noise `σ_pose` per component, the translation `σ_trans`
/// and each shape coefficient `10·σ_pose`, clamped to the shape box.
pub fn perturb_estimates(
    gt: &BodyParams,
    n: usize,
    sigma_pose: f64,
    sigma_trans: f64,
    seed: u64,
) -> Result<Vec<BodyParams>> {
    if !(sigma_pose >= 0.0) || !(sigma_trans >= 0.0) {
        return Err(Error::Config("noise levels must be nonnegative".into()));
    }
    let normal = |s: f64| Normal::new(0.0, s).map_err(|e| Error::Config(e.to_string()));
    let (pose, trans, shape) = (normal(sigma_pose)?, normal(sigma_trans)?, normal(10.0 * sigma_pose)?);
    Ok((0..n)
        .map(|k| {
            let mut rng = rng_for(seed, 100 + k as u64);
            let mut rot = |v: &Vector3<f64>| v + Vector3::from_fn(|_, _| pose.sample(&mut rng));
            let theta = gt.theta.iter().map(&mut rot).collect();
            let global_rotation = rot(&gt.global_rotation);
            let global_translation = gt.global_translation + Vector3::from_fn(|_, _| trans.sample(&mut rng));
            let beta = gt
                .beta
                .iter()
                .map(|b| (b + shape.sample(&mut rng)).clamp(-BETA_LIMIT, BETA_LIMIT))
                .collect();
            BodyParams {
                beta,
                theta,
                global_rotation,
                global_translation,
            }
        })
        .collect())
}

/// Oracle observations of `clothed` from every camera. Landmarks are the
/// model's landmarks at `gt`, projected with Gaussian pixel noise; their
/// confidences come from a depth test against the body at `gt`.
pub fn make_observations(
    model: &BodyModel,
    gt: &BodyParams,
    gt_body: &TriMesh,
    clothed: &TriMesh,
    cameras: &[Camera],
    landmark_sigma_px: f64,
    seed: u64,
) -> Result<(Vec<ViewObservation>, Vec<DepthField>)> {
    let noise = Normal::new(0.0, landmark_sigma_px).map_err(|e| Error::Config(e.to_string()))?;
    let points = model.landmarks3d(gt)?;
    let mut observations = Vec::with_capacity(cameras.len());
    let mut depths = Vec::with_capacity(cameras.len());
    for (k, cam) in cameras.iter().enumerate() {
        let seen = rasterize(clothed, cam, Layer::Front);
        let body = rasterize(gt_body, cam, Layer::Front);
        let confidences = landmark_confidences(model, gt, cam, &body)?;
        let mut rng = rng_for(seed, 10_000 + k as u64);
        let landmarks = points
            .iter()
            .zip(confidences)
            .map(|(p, confidence)| {
                let (dx, dy) = (noise.sample(&mut rng), noise.sample(&mut rng));
                let pixel = cam.project_camera_point(&cam.to_camera(p)).unwrap_or(Point2::origin());
                Landmark2d {
                    pixel: Point2::new(pixel.x + dx, pixel.y + dy),
                    confidence,
                }
            })
            .collect();
        depths.push(seen.depth_field());
        observations.push(ViewObservation::new(
            k,
            cam.clone(),
            seen.mask.clone(),
            ClothedNormalMap::from_raster(&seen, k),
            landmarks,
        )?);
    }
    Ok((observations, depths))
}

/// Builds the full scene for `config` on `model`.
pub fn generate_scene(model: &BodyModel, config: &SceneConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let gt_params = subject_params(model, config.subject_seed, config.pose, config.shape_spread);
    let gt_body = model.skin(&gt_params)?;
    let clothed = make_clothed_with(
        &gt_body,
        config.subject_seed,
        &ClothingSpec {
            amplitude: config.amplitude,
            hood_height: config.hood_height.unwrap_or(config.amplitude),
        },
    )?;
    let eye_height = model.joints3d(&gt_params)?[model.head_joint()].y;
    let cameras = place_cameras(
        config.views,
        config.radius,
        eye_height,
        Point3::from(Vector3::from(DEFAULT_TARGET)),
        config.resolution,
    )?;
    let (observations, clothed_depth) = make_observations(
        model,
        &gt_params,
        &gt_body,
        &clothed.mesh,
        &cameras,
        config.landmark_sigma_px,
        config.noise_seed,
    )?;
    let noisy_estimates = perturb_estimates(
        &gt_params,
        config.views,
        config.sigma_pose,
        config.sigma_trans,
        config.noise_seed,
    )?;
    Ok(SyntheticScene {
        config: config.clone(),
        gt_params,
        gt_body,
        gt_clothed: clothed.mesh,
        hood_weight: clothed.hood_weight,
        cameras,
        observations,
        clothed_depth,
        noisy_estimates,
    })
}

/// Pitch applied to the head when building the adversarial face targets.
pub const ADVERSARIAL_HEAD_PITCH_DEG: f64 = 30.0;

/// Scene whose face landmarks are detected on a head pitched forward by
/// [`ADVERSARIAL_HEAD_PITCH_DEG`] while everything else shows the upright
/// ground truth.
pub fn head_adversarial_scene(model: &BodyModel, seed: u64) -> Result<SyntheticScene> {
    let config = SceneConfig {
        subject_seed: seed,
        noise_seed: seed + 500,
        views: 1,
        resolution: 128,
        amplitude: 0.01,
        ..SceneConfig::default()
    };
    let mut scene = generate_scene(model, &config)?;
    let mut pitched = scene.gt_params.clone();
    pitched.theta[model.head_joint()].x += ADVERSARIAL_HEAD_PITCH_DEG.to_radians();
    let truth = model.landmarks3d(&scene.gt_params)?;
    let fake = model.landmarks3d(&pitched)?;
    let first_face = model.landmark_joints().len();
    for obs in &mut scene.observations {
        let cam = &obs.camera;
        for l in first_face..fake.len() {
            let (Some(t), Some(f)) = (
                cam.project_camera_point(&cam.to_camera(&truth[l])),
                cam.project_camera_point(&cam.to_camera(&fake[l])),
            ) else {
                continue;
            };
            // keep the detector noise already applied to the target
            obs.landmarks[l].pixel += f - t;
        }
    }
    Ok(scene)
}

/// Flat-parameter distance used to compare estimates with ground truth:
/// Euclidean norm of the difference of the flat vectors.
pub fn param_distance(a: &BodyParams, b: &BodyParams) -> f64 {
    a.to_vector()
        .iter()
        .zip(b.to_vector())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
