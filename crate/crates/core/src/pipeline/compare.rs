use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aggregate, format_table, write_csv, MetricReport};

use super::RunManifest;

const METRIC_NAMES: [&str; 4] = ["Chamfer", "P2S accuracy", "P2S completeness", "normal consistency"];

/// Row label for a run on `views` views. The single-view run is this
/// pipeline's own degenerate mode and is labelled as such.
pub fn run_label(views: usize) -> String {
    match views {
        1 => "1-view (degenerate mode)".into(),
        n => format!("{n}-view"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub views: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// One line per metric and pair of rows where more views did not score
    /// strictly better.
    pub violations: Vec<String>,
}

impl Comparison {
    fn new(rows: Vec<ComparisonRow>) -> Self {
        let mut violations = Vec::new();
        for (i, fewer) in rows.iter().enumerate() {
            for more in rows.iter().skip(i + 1) {
                let (lo, hi) = match fewer.views.cmp(&more.views) {
                    std::cmp::Ordering::Less => (fewer, more),
                    std::cmp::Ordering::Greater => (more, fewer),
                    std::cmp::Ordering::Equal => continue,
                };
                for (k, name) in METRIC_NAMES.iter().enumerate() {
                    let (a, b) = (lo.report.values()[k], hi.report.values()[k]);
                    if b >= a {
                        violations.push(format!(
                            "{name}: {} ({b:.2}) is not below {} ({a:.2})",
                            hi.label, lo.label
                        ));
                    }
                }
            }
        }
        Comparison { rows, violations }
    }

    fn labelled(&self) -> Vec<(String, MetricReport)> {
        self.rows.iter().map(|r| (r.label.clone(), r.report.clone())).collect()
    }

    /// Metric table followed by the hierarchy verdict.
    pub fn table(&self) -> String {
        let mut out = format_table(&self.labelled());
        if self.violations.is_empty() {
            out.push_str("view-count hierarchy holds\n");
        }
        for v in &self.violations {
            out.push_str(&format!("hierarchy violated: {v}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(&self.labelled(), path)
    }

    pub fn hierarchy_holds(&self) -> bool {
        self.violations.is_empty()
    }
}

fn same_ground_truth<'a>(runs: impl IntoIterator<Item = &'a RunManifest>) -> Result<()> {
    let mut it = runs.into_iter();
    let Some(first) = it.next() else { return Ok(()) };
    for m in it {
        if m.ground_truth.sha256 != first.ground_truth.sha256 {
            return Err(Error::Comparison(format!(
                "runs reference different ground truth ({} vs {})",
                first.ground_truth.path.display(),
                m.ground_truth.path.display()
            )));
        }
    }
    Ok(())
}

/// Metric rows of runs on one subject, in the order given.
pub fn compare_runs(manifests: &[RunManifest]) -> Result<Comparison> {
    if manifests.len() < 2 {
        return Err(Error::Comparison("need at least two runs to compare".into()));
    }
    same_ground_truth(manifests)?;
    let rows = manifests
        .iter()
        .map(|m| {
            Ok(ComparisonRow {
                label: run_label(m.views.len()),
                views: m.views.len(),
                report: m.metrics()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Comparison::new(rows))
}

/// Per-metric means of each group of runs. Groups are configurations and
/// must cover the same subjects in the same order.
pub fn compare_aggregate(groups: &[Vec<RunManifest>]) -> Result<Comparison> {
    if groups.len() < 2 {
        return Err(Error::Comparison("need at least two groups of runs".into()));
    }
    let subjects = groups[0].len();
    if subjects == 0 || groups.iter().any(|g| g.len() != subjects) {
        return Err(Error::Comparison(
            "every group needs the same, nonzero number of runs".into(),
        ));
    }
    for k in 0..subjects {
        same_ground_truth(groups.iter().map(|g| &g[k]))?;
    }
    let rows = groups
        .iter()
        .map(|g| {
            let views = g[0].views.len();
            if g.iter().any(|m| m.views.len() != views) {
                return Err(Error::Comparison("a group mixes view counts".into()));
            }
            let reports = g.iter().map(RunManifest::metrics).collect::<Result<Vec<_>>>()?;
            Ok(ComparisonRow {
                label: format!("{} mean of {subjects}", run_label(views)),
                views,
                report: aggregate(&reports)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Comparison::new(rows))
}
