//! Evaluation reports and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fca_core::EvalReport;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a report: a class or the macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub class: String,
    pub auroc: f64,
    pub pro_03: f64,
    pub f1_max: f64,
    pub image_auroc: Option<f64>,
    pub threshold_at_f1: f64,
}

impl ReportRow {
    pub fn new(class: &str, r: &EvalReport) -> Self {
        Self {
            class: class.to_string(),
            auroc: r.auroc,
            pro_03: r.pro_03,
            f1_max: r.f1_max,
            image_auroc: r.image_auroc,
            threshold_at_f1: r.threshold_at_f1,
        }
    }

    /// `class=... auroc=... pro_03=... f1_max=... image_auroc=...`; an
    /// undefined image AUROC is written as `none`.
    pub fn key_values(&self) -> String {
        let image = self.image_auroc.map_or("none".to_string(), |v| format!("{v:.6}"));
        format!(
            "class={} auroc={:.6} pro_03={:.6} f1_max={:.6} image_auroc={} threshold_at_f1={:.6}",
            self.class, self.auroc, self.pro_03, self.f1_max, image, self.threshold_at_f1
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub classes: Vec<ReportRow>,
    pub mean: ReportRow,
}

impl Report {
    /// Per-class rows plus their macro average. `None` for no classes.
    pub fn from_classes(per_class: &[(String, EvalReport)]) -> Option<Self> {
        let reports: Vec<EvalReport> = per_class.iter().map(|(_, r)| *r).collect();
        let mean = EvalReport::mean(&reports)?;
        Some(Self {
            classes: per_class.iter().map(|(n, r)| ReportRow::new(n, r)).collect(),
            mean: ReportRow::new("mean", &mean),
        })
    }

    pub fn to_text(&self) -> String {
        self.classes
            .iter()
            .chain(std::iter::once(&self.mean))
            .map(|r| r.key_values() + "\n")
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }

    /// Writes `report.txt` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("report.txt"), &self.to_text())?;
        write_file(&dir.join("report.json"), &self.to_json())
    }
}

/// Everything needed to repeat an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Fully resolved pipeline settings, as `key = value` entries.
    pub config: BTreeMap<String, String>,
    pub dataset_root: PathBuf,
    pub layout: String,
    pub seed: u64,
    pub threads: usize,
    pub timestamp_unix: u64,
    pub output_dir: PathBuf,
    /// Directory of per-image `FMP1` feature files, if deep features were used.
    pub features_dir: Option<PathBuf>,
    pub score_maps: Vec<PathBuf>,
    pub report: Report,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &serde_json::to_string_pretty(self).unwrap())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Index(format!("{}: {e}", path.display())))
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::io(path))
}
