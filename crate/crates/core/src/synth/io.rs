//! Scene directory layout:
//!
//! ```text
//! scene.json  cameras.json  normal_frames.json
//! gt_clothed.ply  gt_body.ply  gt_params.json  gt_hood.json
//! view_{k}/mask.pgm  normals.pfm  normals.pgm  depth.pfm  landmarks.json
//! estimates/view_{k}.json
//! ```
//!
//! Fitting reads only [`load_inputs`]; the `gt_*` files and depth maps are
//! reserved for evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::body::BodyParams;
use crate::error::{Error, Result};
use crate::geometry::io::{read_ply, write_ply};
use crate::geometry::{Camera, TriMesh};
use crate::jmbo::{Landmark2d, ViewObservation};
use crate::normals::load_normal_map;
use crate::render::mapio::{read_mask, write_depth_map, write_mask};

use super::{SceneConfig, SyntheticScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub config: SceneConfig,
    pub view_count: usize,
}

/// What the reconstruction is allowed to see.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub meta: SceneMeta,
    pub cameras: Vec<Camera>,
    pub observations: Vec<ViewObservation>,
    pub estimates: Vec<BodyParams>,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub params: BodyParams,
    pub body: TriMesh,
    pub clothed: TriMesh,
    pub hood_weight: Vec<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::parse(path, e.to_string()))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn view_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("view_{k}"))
}

pub fn write_scene(scene: &SyntheticScene, root: &Path) -> Result<()> {
    mkdir(root)?;
    mkdir(&root.join("estimates"))?;
    write_json(
        &root.join("scene.json"),
        &SceneMeta {
            config: scene.config.clone(),
            view_count: scene.cameras.len(),
        },
    )?;
    write_json(&root.join("cameras.json"), &scene.cameras)?;
    write_ply(&scene.gt_clothed, &root.join("gt_clothed.ply"))?;
    write_ply(&scene.gt_body, &root.join("gt_body.ply"))?;
    scene.gt_params.write(&root.join("gt_params.json"))?;
    write_json(&root.join("gt_hood.json"), &scene.hood_weight)?;
    let frames: BTreeMap<String, usize> = scene
        .observations
        .iter()
        .map(|o| (o.view.to_string(), o.clothed_normals.frame))
        .collect();
    write_json(&root.join("normal_frames.json"), &frames)?;
    for (k, (obs, depth)) in scene.observations.iter().zip(&scene.clothed_depth).enumerate() {
        let dir = view_dir(root, k);
        mkdir(&dir)?;
        let (w, h) = (obs.camera.width(), obs.camera.height());
        write_mask(&dir.join("mask.pgm"), w, h, &obs.silhouette)?;
        obs.clothed_normals.write(&dir.join("normals.pfm"))?;
        write_depth_map(&dir.join("depth.pfm"), w, h, &depth.depth, &depth.mask)?;
        write_json(&dir.join("landmarks.json"), &obs.landmarks)?;
    }
    for (k, est) in scene.noisy_estimates.iter().enumerate() {
        est.write(&root.join("estimates").join(format!("view_{k}.json")))?;
    }
    Ok(())
}

/// The rig calibration of a scene directory.
pub fn load_cameras(root: &Path) -> Result<Vec<Camera>> {
    read_json(&root.join("cameras.json"))
}

/// Loads cameras, observations and per-view estimates of the first `views`
/// rig cameras (all when `None`).
pub fn load_inputs(root: &Path, views: Option<&[usize]>) -> Result<SceneInputs> {
    let meta: SceneMeta = read_json(&root.join("scene.json"))?;
    let cameras = load_cameras(root)?;
    if cameras.len() != meta.view_count {
        return Err(Error::Shape(format!(
            "scene lists {} views but {} cameras",
            meta.view_count,
            cameras.len()
        )));
    }
    let frames: BTreeMap<String, usize> = read_json(&root.join("normal_frames.json"))?;
    let selected: Vec<usize> = match views {
        Some(v) => v.to_vec(),
        None => (0..cameras.len()).collect(),
    };
    let mut observations = Vec::with_capacity(selected.len());
    let mut estimates = Vec::with_capacity(selected.len());
    let mut used_cameras = Vec::with_capacity(selected.len());
    for &k in &selected {
        let cam = cameras
            .get(k)
            .ok_or_else(|| Error::Config(format!("view {k} is not in the scene")))?;
        let dir = view_dir(root, k);
        let (w, h, silhouette) = read_mask(&dir.join("mask.pgm"))?;
        if w != cam.width() || h != cam.height() {
            return Err(Error::Shape(format!(
                "view {k}: mask {w}x{h} does not match its camera"
            )));
        }
        let frame = *frames
            .get(&k.to_string())
            .ok_or_else(|| Error::parse(root.join("normal_frames.json"), format!("no frame for view {k}")))?;
        let (normals, dropped) = load_normal_map(&dir.join("normals.pfm"), cam, frame)?;
        if dropped > 0 {
            log::warn!("view {k}: dropped {dropped} invalid normals");
        }
        let landmarks: Vec<Landmark2d> = read_json(&dir.join("landmarks.json"))?;
        observations.push(ViewObservation::new(k, cam.clone(), silhouette, normals, landmarks)?);
        estimates.push(BodyParams::read(
            &root.join("estimates").join(format!("view_{k}.json")),
        )?);
        used_cameras.push(cam.clone());
    }
    Ok(SceneInputs {
        meta,
        cameras: used_cameras,
        observations,
        estimates,
    })
}

pub fn load_ground_truth(root: &Path) -> Result<GroundTruth> {
    Ok(GroundTruth {
        params: BodyParams::read(&root.join("gt_params.json"))?,
        body: read_ply(&root.join("gt_body.ply"))?,
        clothed: read_ply(&root.join("gt_clothed.ply"))?,
        hood_weight: read_json(&root.join("gt_hood.json"))?,
    })
}
