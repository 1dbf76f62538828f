//! Clothed normal maps: providers, file I/O and cross-view rotation.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{relative_rotation, Camera, Rotation, TriMesh};
use crate::render::mapio::{read_mask, read_pfm, write_mask, write_normal_map as write_pfm_normals};
use crate::render::{rasterize, DepthField, Layer, RasterMaps};

/// Camera-frame unit normals on a raster grid, tagged with the view whose
/// frame the vectors are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct ClothedNormalMap {
    pub width: usize,
    pub height: usize,
    pub normal: Vec<Vector3<f64>>,
    pub mask: Vec<bool>,
    pub frame: usize,
}

impl ClothedNormalMap {
    pub fn new(width: usize, height: usize, normal: Vec<Vector3<f64>>, mask: Vec<bool>, frame: usize) -> Result<Self> {
        if normal.len() != width * height || mask.len() != width * height {
            return Err(Error::Shape(format!(
                "normal map {width}x{height} with {} normals and {} mask entries",
                normal.len(),
                mask.len()
            )));
        }
        for (i, (n, &m)) in normal.iter().zip(&mask).enumerate() {
            if m && (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::Shape(format!("normal at pixel {i} is not unit length")));
            }
        }
        Ok(ClothedNormalMap {
            width,
            height,
            normal,
            mask,
            frame,
        })
    }

    pub fn from_raster(maps: &RasterMaps, frame: usize) -> Self {
        ClothedNormalMap {
            width: maps.width,
            height: maps.height,
            normal: maps.normal.clone(),
            mask: maps.mask.clone(),
            frame,
        }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Writes the normals as a three-channel PFM and the mask as a PGM with
    /// the same stem.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_pfm_normals(path, self.width, self.height, &self.normal, &self.mask)?;
        write_mask(&path.with_extension("pgm"), self.width, self.height, &self.mask)
    }
}

/// Where a provider's maps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Oracle,
    File,
}

/// Source of clothed normal maps for a view.
pub trait NormalProvider {
    fn kind(&self) -> ProviderKind;

    /// Normal map of `layer` seen through `cam`, expressed in frame `view`.
    fn normals(&self, view: usize, cam: &Camera, layer: Layer) -> Result<ClothedNormalMap>;
}

/// Renders a known clothed surface.
#[derive(Debug, Clone, Copy)]
pub struct OracleProvider<'a> {
    pub clothed: &'a TriMesh,
}

impl NormalProvider for OracleProvider<'_> {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Oracle
    }

    fn normals(&self, view: usize, cam: &Camera, layer: Layer) -> Result<ClothedNormalMap> {
        oracle_normals(self.clothed, cam, layer, view)
    }
}

/// Reads `view_{k}/normals.pfm` (front layer) or `view_{k}/normals_back.pfm`
/// under a scene directory.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pub root: PathBuf,
}

impl FileProvider {
    pub fn path_for(&self, view: usize, layer: Layer) -> PathBuf {
        let name = match layer {
            Layer::Front => "normals.pfm",
            Layer::Back => "normals_back.pfm",
        };
        self.root.join(format!("view_{view}")).join(name)
    }
}

impl NormalProvider for FileProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::File
    }

    fn normals(&self, view: usize, cam: &Camera, layer: Layer) -> Result<ClothedNormalMap> {
        let (map, dropped) = load_normal_map(&self.path_for(view, layer), cam, view)?;
        if dropped > 0 {
            log::warn!("view {view}: dropped {dropped} invalid normals");
        }
        Ok(map)
    }
}

/// Clothed normals rendered straight from the ground-truth surface.
pub fn oracle_normals(clothed: &TriMesh, cam: &Camera, layer: Layer, frame: usize) -> Result<ClothedNormalMap> {
    if clothed.is_empty() {
        return Err(Error::EmptyInput("oracle normals need a clothed mesh".into()));
    }
    Ok(ClothedNormalMap::from_raster(&rasterize(clothed, cam, layer), frame))
}

/// Applies `rot` to every masked vector and retags the frame.
pub fn rotate_normal_map(map: &ClothedNormalMap, rot: &Rotation, target_frame: usize) -> ClothedNormalMap {
    let normal = map
        .normal
        .iter()
        .zip(&map.mask)
        .map(|(n, &m)| if m { rot.apply(n) } else { *n })
        .collect();
    ClothedNormalMap {
        normal,
        frame: target_frame,
        ..map.clone()
    }
}

/// Loads a normal map PFM. The mask comes from a sibling `.pgm` when one
/// exists, otherwise from the nonzero pixels. Masked pixels holding zero or
/// non-finite vectors are dropped; their count is returned.
pub fn load_normal_map(path: &Path, cam: &Camera, frame: usize) -> Result<(ClothedNormalMap, usize)> {
    let img = read_pfm(path)?;
    if img.channels != 3 {
        return Err(Error::parse(path, "normal maps need three channels"));
    }
    if img.width != cam.width() || img.height != cam.height() {
        return Err(Error::Shape(format!(
            "normal map {}x{} against camera {}x{}",
            img.width,
            img.height,
            cam.width(),
            cam.height()
        )));
    }
    let vectors: Vec<Vector3<f64>> = img
        .data
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    let mask_path = path.with_extension("pgm");
    let mut mask = if mask_path.exists() {
        let (w, h, m) = read_mask(&mask_path)?;
        if w != img.width || h != img.height {
            return Err(Error::Shape(format!("mask {w}x{h} does not match its normal map")));
        }
        m
    } else {
        vectors.iter().map(|v| *v != Vector3::zeros()).collect()
    };
    let mut dropped = 0;
    let normal = vectors
        .iter()
        .zip(mask.iter_mut())
        .map(|(v, m)| {
            if !*m {
                return Vector3::zeros();
            }
            let len = v.norm();
            if len.is_finite() && len > 0.0 {
                v / len
            } else {
                *m = false;
                dropped += 1;
                Vector3::zeros()
            }
        })
        .collect();
    Ok((
        ClothedNormalMap {
            width: img.width,
            height: img.height,
            normal,
            mask,
            frame,
        },
        dropped,
    ))
}

/// Moves a map seen from `source_cam` onto the grid of `target_cam`. Each
/// target pixel is lifted with `proxy_depth` (depths along the target
/// camera's rays), projected into the source view and filled from the
/// nearest source pixel, rotated into the target frame. Target pixels
/// without proxy depth or without a masked source pixel stay unmasked.
pub fn transfer_normal_map(
    map: &ClothedNormalMap,
    source_cam: &Camera,
    target_cam: &Camera,
    target_frame: usize,
    proxy_depth: &DepthField,
) -> Result<ClothedNormalMap> {
    if map.width != source_cam.width() || map.height != source_cam.height() {
        return Err(Error::Shape("source map does not match its camera".into()));
    }
    if proxy_depth.width != target_cam.width() || proxy_depth.height != target_cam.height() {
        return Err(Error::Shape("proxy depth does not match the target camera".into()));
    }
    let rot = relative_rotation(source_cam, target_cam);
    let (w, h) = (target_cam.width(), target_cam.height());
    let mut normal = vec![Vector3::zeros(); w * h];
    let mut mask = vec![false; w * h];
    for i in 0..w * h {
        if !proxy_depth.mask[i] {
            continue;
        }
        let p = target_cam.unproject((i % w) as f64, (i / w) as f64, proxy_depth.depth[i]);
        let Ok(proj) = source_cam.project(&p) else {
            continue;
        };
        let (sx, sy) = (proj.pixel.x.round(), proj.pixel.y.round());
        if sx < 0.0 || sy < 0.0 || sx >= map.width as f64 || sy >= map.height as f64 {
            continue;
        }
        let j = sy as usize * map.width + sx as usize;
        if map.mask[j] {
            normal[i] = rot.apply(&map.normal[j]);
            mask[i] = true;
        }
    }
    Ok(ClothedNormalMap {
        width: w,
        height: h,
        normal,
        mask,
        frame: target_frame,
    })
}

#[cfg(test)]
mod tests;
