//! Staged reconstruction of a scene directory: body fit, body-prior
//! rendering, clothed normals, depth integration, lifting, fusion and
//! evaluation.
//!
//! Every stage reads its inputs from files written by earlier stages, so a
//! resumed run sees exactly the data an uninterrupted run does.

mod compare;
mod stages;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body::BodyModel;
use crate::dbini::DbiniConfig;
use crate::error::{Error, Result};
use crate::fuse::FuseConfig;
use crate::jmbo::JmboConfig;
use crate::metrics::MetricReport;
use crate::normals::ProviderKind;
use crate::synth::load_cameras;

pub use compare::{compare_aggregate, compare_runs, run_label, Comparison, ComparisonRow};
pub use stages::{RegionReport, REGION_REPORT};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Fit,
    Prior,
    Normals,
    Integrate,
    Lift,
    Fuse,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Fit,
        Stage::Prior,
        Stage::Normals,
        Stage::Integrate,
        Stage::Lift,
        Stage::Fuse,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Fit => "fit",
            Stage::Prior => "prior",
            Stage::Normals => "normals",
            Stage::Integrate => "integrate",
            Stage::Lift => "lift",
            Stage::Fuse => "fuse",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Which rig views a run may use.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSelection {
    #[default]
    All,
    /// `k` evenly spaced views starting at the front: 1 is the front alone,
    /// 2 is front and back.
    Count(usize),
    /// Explicit rig indices; the front view 0 must be among them.
    Indices(Vec<usize>),
}

impl ViewSelection {
    pub fn resolve(&self, rig_size: usize) -> Result<Vec<usize>> {
        let views: Vec<usize> = match self {
            ViewSelection::All => (0..rig_size).collect(),
            ViewSelection::Count(k) => {
                if *k == 0 || *k > rig_size || !rig_size.is_multiple_of(*k) {
                    return Err(Error::Config(format!(
                        "cannot pick {k} evenly spaced views from {rig_size}"
                    )));
                }
                (0..*k).map(|i| i * rig_size / k).collect()
            }
            ViewSelection::Indices(v) => {
                if let Some(bad) = v.iter().find(|&&i| i >= rig_size) {
                    return Err(Error::Config(format!("view {bad} is not in a rig of {rig_size}")));
                }
                if v.iter().collect::<BTreeSet<_>>().len() != v.len() {
                    return Err(Error::Config(format!("repeated view in {v:?}")));
                }
                v.clone()
            }
        };
        if !views.contains(&0) {
            return Err(Error::Config("the front view 0 must be selected".into()));
        }
        Ok(views)
    }
}

impl FromStr for ViewSelection {
    type Err = Error;

    /// `all`, a view count such as `2`, or a comma list such as `0,2,4`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(ViewSelection::All);
        }
        let bad = || Error::Config(format!("view selection {s:?} is not `all`, a count or a comma list"));
        if s.contains(',') {
            let v = s
                .split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            return Ok(ViewSelection::Indices(v));
        }
        s.parse().map(ViewSelection::Count).map_err(|_| bad())
    }
}

/// The view opposite the front one, when the selection includes it.
pub fn back_view(rig_size: usize, views: &[usize]) -> Option<usize> {
    (rig_size >= 2 && rig_size.is_multiple_of(2) && views.contains(&(rig_size / 2))).then_some(rig_size / 2)
}

/// Prior weight used by the pipeline. With perspective residuals in pixel
/// units the module default lets long integration paths drift by
/// centimetres.
pub const PIPELINE_LAMBDA_PRIOR: f64 = 1e-3;
/// Coupling weight used by the pipeline. Silhouette-ring pixels sit where
/// the true front/back gap is still several centimetres at this pixel
/// size, so a strong coupling flattens the whole surface toward the ring.
pub const PIPELINE_LAMBDA_COUPLE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Scene directory as written by the synthesizer.
    pub scene: PathBuf,
    pub out: PathBuf,
    pub views: ViewSelection,
    pub provider: ProviderKind,
    /// Root seed; the only randomness in a run is metric sampling.
    pub seed: u64,
    /// Body model JSON; the built-in model when unset.
    pub model: Option<PathBuf>,
    pub jmbo: JmboConfig,
    pub dbini: DbiniConfig,
    pub fuse: FuseConfig,
    pub metric_samples: usize,
    pub evaluate: bool,
    /// Minimum mean vertex weight of a ground-truth triangle in the back
    /// bump region.
    pub hood_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scene: PathBuf::new(),
            out: PathBuf::new(),
            views: ViewSelection::All,
            provider: ProviderKind::File,
            seed: 0,
            model: None,
            jmbo: JmboConfig::default(),
            dbini: DbiniConfig {
                lambda_prior: PIPELINE_LAMBDA_PRIOR,
                lambda_couple: PIPELINE_LAMBDA_COUPLE,
                ..DbiniConfig::perspective()
            },
            fuse: FuseConfig::default(),
            metric_samples: 100_000,
            evaluate: true,
            hood_threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scene.as_os_str().is_empty() || self.out.as_os_str().is_empty() {
            return Err(Error::Config(
                "a scene directory and an output directory are required".into(),
            ));
        }
        if self.metric_samples == 0 {
            return Err(Error::Config("metric_samples must be positive".into()));
        }
        if !(self.hood_threshold > 0.0 && self.hood_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "hood_threshold {} must lie in (0, 1]",
                self.hood_threshold
            )));
        }
        self.jmbo.validate()?;
        self.dbini.validate()?;
        self.fuse.validate()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Options that steer one invocation without changing its results.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Reuse completed stages recorded in an existing manifest.
    pub resume: bool,
    /// Stop after this stage.
    pub until: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seconds: f64,
    /// Paths relative to the run directory.
    pub outputs: Vec<PathBuf>,
    /// Taken over from an earlier invocation rather than executed.
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub rig_size: usize,
    pub views: Vec<usize>,
    pub back_view: Option<usize>,
    /// Views whose observation files this run has read.
    pub accessed_views: Vec<usize>,
    pub ground_truth: GroundTruthRef,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    pub loss_trace: Option<PathBuf>,
    pub final_mesh: Option<PathBuf>,
    pub metric_report: Option<PathBuf>,
    pub error: Option<String>,
    /// Directory the relative paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl RunManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn is_complete(&self) -> bool {
        let last = if self.config.evaluate {
            Stage::Evaluate
        } else {
            Stage::Fuse
        };
        self.error.is_none() && self.record(last).is_some()
    }

    fn referenced(&self) -> impl Iterator<Item = &PathBuf> {
        self.stages
            .iter()
            .flat_map(|r| &r.outputs)
            .chain(&self.loss_trace)
            .chain(&self.final_mesh)
            .chain(&self.metric_report)
    }

    /// Writes `manifest.json` into the run directory after checking that
    /// every referenced file exists.
    pub fn write(&self) -> Result<()> {
        for rel in self.referenced() {
            let p = self.resolve(rel);
            if !p.is_file() {
                return Err(Error::io(p, std::io::ErrorKind::NotFound.into()));
            }
        }
        let path = self.root.join(MANIFEST_FILE);
        let s = serde_json::to_string_pretty(self)?;
        fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }

    /// Reads a manifest from a run directory or a manifest file path.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let s = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut m: RunManifest = serde_json::from_str(&s).map_err(|e| Error::parse(&file, e.to_string()))?;
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn regions(&self) -> Result<RegionReport> {
        let path = self.resolve(Path::new(REGION_REPORT));
        let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::parse(&path, e.to_string()))
    }

    pub fn metrics(&self) -> Result<MetricReport> {
        let rel = self
            .metric_report
            .as_ref()
            .ok_or_else(|| Error::Comparison(format!("run in {} has no evaluation", self.root.display())))?;
        MetricReport::read_json(&self.resolve(rel))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs (or resumes) the stages in order, writing the manifest after each.
/// A failing stage leaves a manifest carrying the error and the stages
/// that did finish.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let owned_model;
    let model = match &cfg.model {
        Some(p) => {
            owned_model = BodyModel::read(p)?;
            &owned_model
        }
        None => BodyModel::standard(),
    };
    let cameras = load_cameras(&cfg.scene)?;
    let views = cfg.views.resolve(cameras.len())?;
    let back = back_view(cameras.len(), &views);
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;

    let previous = match opts.resume && cfg.out.join(MANIFEST_FILE).is_file() {
        true => Some(RunManifest::read(&cfg.out)?),
        false => None,
    };
    if let Some(p) = &previous {
        if p.config != *cfg {
            return Err(Error::Config("configuration differs from the run being resumed".into()));
        }
    }

    let gt_path = cfg.scene.join("gt_clothed.ply");
    let mut manifest = RunManifest {
        config: cfg.clone(),
        rig_size: cameras.len(),
        views: views.clone(),
        back_view: back,
        accessed_views: previous.as_ref().map(|p| p.accessed_views.clone()).unwrap_or_default(),
        ground_truth: GroundTruthRef {
            sha256: sha256_file(&gt_path)?,
            path: gt_path,
        },
        seeds: BTreeMap::from([("root".to_string(), cfg.seed), ("metrics".to_string(), cfg.seed)]),
        stages: Vec::new(),
        loss_trace: None,
        final_mesh: None,
        metric_report: None,
        error: None,
        root: cfg.out.clone(),
    };
    let ctx = stages::Context {
        cfg,
        model,
        cameras: &cameras,
        views: &views,
        back_view: back,
    };

    let mut executing = false;
    for stage in Stage::ALL {
        if stage == Stage::Evaluate && !cfg.evaluate {
            break;
        }
        let reusable = previous
            .as_ref()
            .and_then(|p| p.record(stage))
            .filter(|r| !executing && r.outputs.iter().all(|o| cfg.out.join(o).is_file()));
        if let Some(r) = reusable {
            log::info!("stage {stage}: reusing earlier outputs");
            manifest.stages.push(StageRecord {
                resumed: true,
                ..r.clone()
            });
        } else {
            executing = true;
            log::info!("stage {stage}: running");
            let started = Instant::now();
            let mut accessed: BTreeSet<usize> = manifest.accessed_views.iter().copied().collect();
            let outcome = stages::run(stage, &ctx, &mut accessed);
            manifest.accessed_views = accessed.into_iter().collect();
            match outcome {
                Ok(outputs) => manifest.stages.push(StageRecord {
                    stage,
                    seconds: started.elapsed().as_secs_f64(),
                    outputs,
                    resumed: false,
                }),
                Err(e) => {
                    manifest.error = Some(format!("stage `{stage}` failed: {e}"));
                    manifest.write()?;
                    return Err(Error::Stage {
                        stage: stage.name().into(),
                        source: Box::new(e),
                    });
                }
            }
        }
        match stage {
            Stage::Fit => manifest.loss_trace = Some(stages::LOSS_TRACE.into()),
            Stage::Fuse => manifest.final_mesh = Some(stages::FINAL_MESH.into()),
            Stage::Evaluate => manifest.metric_report = Some(stages::METRIC_REPORT.into()),
            _ => {}
        }
        manifest.write()?;
        if opts.until == Some(stage) {
            break;
        }
    }
    Ok(manifest)
}
