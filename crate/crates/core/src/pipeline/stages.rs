use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::body::{average_params, BodyModel, BodyParams};
use crate::dbini::{integrate, DbiniProblem};
use crate::error::{Error, Result};
use crate::fuse::{assemble_cloud, fuse};
use crate::geometry::io::{read_ply, write_ply};
use crate::geometry::Camera;
use crate::jmbo::optimize;
use crate::metrics::{evaluate_pair, p2s_completeness, region_mesh, MetricConfig};
use crate::normals::{
    load_normal_map, transfer_normal_map, ClothedNormalMap, FileProvider, NormalProvider, OracleProvider, ProviderKind,
};
use crate::render::mapio::{read_depth_map, write_depth_field};
use crate::render::{depth_to_mesh_with, rasterize, Layer};
use crate::synth::{load_ground_truth, load_inputs};

use super::{PipelineConfig, Stage};

pub(super) const LOSS_TRACE: &str = "fit/loss_trace.csv";
pub(super) const FINAL_MESH: &str = "fuse/mesh.ply";
pub(super) const METRIC_REPORT: &str = "evaluate/metrics.json";

const BODY: &str = "fit/body.ply";
const PRIOR_FRONT: &str = "prior/depth_front.pfm";
const PRIOR_BACK: &str = "prior/depth_back.pfm";
const PRIOR_NORMALS_BACK: &str = "prior/normals_back.pfm";
const NORMALS_FRONT: &str = "normals/front.pfm";
const NORMALS_BACK: &str = "normals/back.pfm";
const LIFT_FRONT: &str = "lift/front.ply";
const LIFT_BACK: &str = "lift/back.ply";

pub(super) struct Context<'a> {
    pub cfg: &'a PipelineConfig,
    pub model: &'a BodyModel,
    pub cameras: &'a [Camera],
    pub views: &'a [usize],
    pub back_view: Option<usize>,
}

impl Context<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.cfg.out.join(rel)
    }

    /// Creates the stage directory and returns the path of `rel` in it.
    fn output(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(p)
    }

    fn front(&self) -> &Camera {
        &self.cameras[0]
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Map files come with a sibling PGM mask.
fn with_mask(rel: &str) -> [PathBuf; 2] {
    let p = PathBuf::from(rel);
    [p.clone(), p.with_extension("pgm")]
}

pub(super) fn run(stage: Stage, ctx: &Context, accessed: &mut BTreeSet<usize>) -> Result<Vec<PathBuf>> {
    match stage {
        Stage::Fit => fit(ctx, accessed),
        Stage::Prior => prior(ctx),
        Stage::Normals => normals(ctx, accessed),
        Stage::Integrate => integrate_depth(ctx),
        Stage::Lift => lift(ctx),
        Stage::Fuse => fuse_surfaces(ctx),
        Stage::Evaluate => evaluate(ctx),
    }
}

/// Joint fit over the selected views, started from the average of their
/// per-view estimates.
fn fit(ctx: &Context, accessed: &mut BTreeSet<usize>) -> Result<Vec<PathBuf>> {
    let inputs = load_inputs(&ctx.cfg.scene, Some(ctx.views))?;
    accessed.extend(ctx.views);
    let init = average_params(&inputs.estimates)?;
    let result = optimize(ctx.model, &inputs.observations, &init, &ctx.cfg.jmbo)?;
    log::info!(
        "fit: total loss {:.5} -> {:.5} in {} iterations",
        result.initial_loss().total,
        result.final_loss().total,
        result.iterations_run
    );
    init.write(&ctx.output("fit/init_params.json")?)?;
    result.params.write(&ctx.output("fit/params.json")?)?;
    result.write_trace_csv(&ctx.output(LOSS_TRACE)?)?;
    write_json(&ctx.output("fit/jmbo.json")?, &result)?;
    write_ply(&ctx.model.skin(&result.params)?, &ctx.output(BODY)?)?;
    Ok([
        "fit/init_params.json",
        "fit/params.json",
        LOSS_TRACE,
        "fit/jmbo.json",
        BODY,
    ]
    .map(PathBuf::from)
    .to_vec())
}

/// Depth and back normals of the fitted body seen from the front camera.
fn prior(ctx: &Context) -> Result<Vec<PathBuf>> {
    let body = read_ply(&ctx.path(BODY))?;
    let front = rasterize(&body, ctx.front(), Layer::Front);
    let back = rasterize(&body, ctx.front(), Layer::Back);
    if front.masked_count() == 0 {
        return Err(Error::EmptySurface(
            "the fitted body is not visible from the front camera".into(),
        ));
    }
    write_depth_field(&ctx.output(PRIOR_FRONT)?, &front.depth_field())?;
    write_depth_field(&ctx.output(PRIOR_BACK)?, &back.depth_field())?;
    ClothedNormalMap::from_raster(&back, 0).write(&ctx.output(PRIOR_NORMALS_BACK)?)?;
    Ok([PRIOR_FRONT, PRIOR_BACK, PRIOR_NORMALS_BACK]
        .iter()
        .flat_map(|r| with_mask(r))
        .collect())
}

fn provider_normals(
    ctx: &Context,
    view: usize,
    gt_clothed: &Option<crate::geometry::TriMesh>,
) -> Result<ClothedNormalMap> {
    let cam = &ctx.cameras[view];
    match (ctx.cfg.provider, gt_clothed) {
        (ProviderKind::Oracle, Some(mesh)) => OracleProvider { clothed: mesh }.normals(view, cam, Layer::Front),
        _ => FileProvider {
            root: ctx.cfg.scene.clone(),
        }
        .normals(view, cam, Layer::Front),
    }
}

/// Front clothed normals from view 0. The back map is the back view's
/// clothed normals moved onto the front grid through the body's back
/// depth; without a back view it is the body prior's own back layer.
fn normals(ctx: &Context, accessed: &mut BTreeSet<usize>) -> Result<Vec<PathBuf>> {
    let gt_clothed = match ctx.cfg.provider {
        ProviderKind::Oracle => Some(read_ply(&ctx.cfg.scene.join("gt_clothed.ply"))?),
        ProviderKind::File => None,
    };
    let front = provider_normals(ctx, 0, &gt_clothed)?;
    accessed.insert(0);
    let back = match ctx.back_view {
        Some(b) => {
            let source = provider_normals(ctx, b, &gt_clothed)?;
            accessed.insert(b);
            let proxy = read_depth_map(&ctx.path(PRIOR_BACK))?;
            transfer_normal_map(&source, &ctx.cameras[b], ctx.front(), 0, &proxy)?
        }
        None => load_normal_map(&ctx.path(PRIOR_NORMALS_BACK), ctx.front(), 0)?.0,
    };
    front.write(&ctx.output(NORMALS_FRONT)?)?;
    back.write(&ctx.output(NORMALS_BACK)?)?;
    Ok([NORMALS_FRONT, NORMALS_BACK]
        .iter()
        .flat_map(|r| with_mask(r))
        .collect())
}

fn integrate_depth(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cam = ctx.front();
    let problem = DbiniProblem::new(
        load_normal_map(&ctx.path(NORMALS_FRONT), cam, 0)?.0,
        load_normal_map(&ctx.path(NORMALS_BACK), cam, 0)?.0,
        read_depth_map(&ctx.path(PRIOR_FRONT))?,
        read_depth_map(&ctx.path(PRIOR_BACK))?,
        cam.clone(),
    )?;
    let out = integrate(&problem, &ctx.cfg.dbini)?;
    let dir = ctx.output("integrate/dbini_report.json")?;
    out.write(dir.parent().expect("stage directory"))?;
    let mut files: Vec<PathBuf> = ["integrate/depth_front.pfm", "integrate/depth_back.pfm"]
        .iter()
        .flat_map(|r| with_mask(r))
        .collect();
    files.push("integrate/dbini_report.json".into());
    Ok(files)
}

fn lift(ctx: &Context) -> Result<Vec<PathBuf>> {
    for (src, dst, facing) in [
        ("integrate/depth_front.pfm", LIFT_FRONT, Layer::Front),
        ("integrate/depth_back.pfm", LIFT_BACK, Layer::Back),
    ] {
        let field = read_depth_map(&ctx.path(src))?;
        let mesh = depth_to_mesh_with(&field, ctx.front(), None, facing)?;
        write_ply(&mesh, &ctx.output(dst)?)?;
    }
    Ok(vec![LIFT_FRONT.into(), LIFT_BACK.into()])
}

fn fuse_surfaces(ctx: &Context) -> Result<Vec<PathBuf>> {
    let front = read_ply(&ctx.path(LIFT_FRONT))?;
    let back = read_ply(&ctx.path(LIFT_BACK))?;
    let body = read_ply(&ctx.path(BODY))?;
    let cloud = assemble_cloud(&front, &back, &body, &ctx.cfg.fuse)?;
    let (mesh, diagnostics) = fuse(&cloud, &ctx.cfg.fuse)?;
    write_ply(&mesh, &ctx.output(FINAL_MESH)?)?;
    diagnostics.write(&ctx.output("fuse/diagnostics.json")?)?;
    Ok(vec![FINAL_MESH.into(), "fuse/diagnostics.json".into()])
}

/// Region scores that complement the whole-surface metric report.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RegionReport {
    /// Completeness over the ground-truth back bump, when the scene has one.
    pub hood_completeness_mm: Option<f64>,
    pub hood_triangles: usize,
    pub body_param_distance: f64,
}

pub const REGION_REPORT: &str = "evaluate/regions.json";

fn evaluate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let rec = read_ply(&ctx.path(FINAL_MESH))?;
    let gt = load_ground_truth(&ctx.cfg.scene)?;
    let metric = MetricConfig {
        samples: ctx.cfg.metric_samples,
        seed: ctx.cfg.seed,
    };
    let report = evaluate_pair(&rec, &gt.clothed, &metric)?;
    report.write_json(&ctx.output(METRIC_REPORT)?)?;
    let hood = region_mesh(&gt.clothed, &gt.hood_weight, ctx.cfg.hood_threshold).ok();
    let fitted = BodyParams::read(&ctx.path("fit/params.json"))?;
    let regions = RegionReport {
        hood_completeness_mm: hood
            .as_ref()
            .map(|h| p2s_completeness(&rec, h, metric.samples, metric.seed))
            .transpose()?,
        hood_triangles: hood.map_or(0, |h| h.triangle_count()),
        body_param_distance: crate::synth::param_distance(&fitted, &gt.params),
    };
    write_json(&ctx.output(REGION_REPORT)?, &regions)?;
    Ok(vec![METRIC_REPORT.into(), REGION_REPORT.into()])
}
