use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How [`MetricReport::chamfer_mm`] combines the two directions.
pub const CHAMFER_CONVENTION: &str = "mean_of_directional_means";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer_mm: f64,
    pub p2s_accuracy_mm: f64,
    pub p2s_completeness_mm: f64,
    pub normal_consistency_deg: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub chamfer_convention: String,
}

impl MetricReport {
    pub fn values(&self) -> [f64; 4] {
        [
            self.chamfer_mm,
            self.p2s_accuracy_mm,
            self.p2s_completeness_mm,
            self.normal_consistency_deg,
        ]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::parse(path, e.to_string()))
    }
}

/// Arithmetic mean of each metric. Sample count and seed come from the
/// first report.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::EmptyInput("no reports to aggregate".into()))?;
    let n = reports.len() as f64;
    let mut sums = [0.0; 4];
    for r in reports {
        for (s, v) in sums.iter_mut().zip(r.values()) {
            *s += v;
        }
    }
    let [chamfer_mm, p2s_accuracy_mm, p2s_completeness_mm, normal_consistency_deg] = sums.map(|s| s / n);
    Ok(MetricReport {
        chamfer_mm,
        p2s_accuracy_mm,
        p2s_completeness_mm,
        normal_consistency_deg,
        ..first.clone()
    })
}

const HEADERS: [&str; 4] = ["Chamfer (mm)", "P2S acc. (mm)", "P2S compl. (mm)", "Normal cons. (deg)"];

/// Aligned text table: one row per labelled report, one column per metric.
pub fn format_table(rows: &[(String, MetricReport)]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.len()).chain([6]).max().unwrap_or(6);
    let mut out = format!("{:<label_width$}", "Method");
    for h in HEADERS {
        out.push_str(&format!("  {h:>18}"));
    }
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&format!("{label:<label_width$}"));
        for v in r.values() {
            out.push_str(&format!("  {v:>18.2}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct CsvRow<'a> {
    label: &'a str,
    chamfer_mm: f64,
    p2s_accuracy_mm: f64,
    p2s_completeness_mm: f64,
    normal_consistency_deg: f64,
    sample_count: usize,
    seed: u64,
}

pub fn write_csv(rows: &[(String, MetricReport)], path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::parse(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for (label, r) in rows {
        w.serialize(CsvRow {
            label,
            chamfer_mm: r.chamfer_mm,
            p2s_accuracy_mm: r.p2s_accuracy_mm,
            p2s_completeness_mm: r.p2s_completeness_mm,
            normal_consistency_deg: r.normal_consistency_deg,
            sample_count: r.sample_count,
            seed: r.seed,
        })
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
