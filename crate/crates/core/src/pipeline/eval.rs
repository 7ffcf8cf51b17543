use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::train::{extract_features, Bundle, ImageFeatures, PhaseTimings, Sample};
use crate::error::{Error, Result};
use crate::kernels::kernel_row;
use crate::svm::predict;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RowStatus {
    Ok,
    /// Classified through the all-zero kernel row.
    ZeroKeypoints,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub image_id: String,
    pub true_class: usize,
    pub predicted: Option<usize>,
    pub scores: Vec<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EvalTimings {
    pub detect: f64,
    pub describe: f64,
    pub classify: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub rows: Vec<EvalRow>,
    /// `confusion[true][predicted]` over evaluated images.
    pub confusion: Vec<Vec<usize>>,
    pub evaluated: usize,
    pub failed: usize,
    /// Percentage of evaluated images classified correctly.
    pub rate: f64,
    /// Per-class recall; `None` for classes absent from the test set.
    pub recall: Vec<Option<f64>>,
    pub timings: EvalTimings,
}

impl EvalReport {
    pub fn from_rows(classes: Vec<String>, rows: Vec<EvalRow>, timings: EvalTimings) -> Self {
        let n = classes.len();
        let mut confusion = vec![vec![0usize; n]; n];
        let mut failed = 0;
        for r in &rows {
            match r.predicted {
                Some(p) => confusion[r.true_class][p] += 1,
                None => failed += 1,
            }
        }
        let evaluated = rows.len() - failed;
        let trace: usize = (0..n).map(|c| confusion[c][c]).sum();
        let rate = if evaluated == 0 {
            0.0
        } else {
            100.0 * trace as f64 / evaluated as f64
        };
        let recall = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[c] as f64 / total as f64)
            })
            .collect();
        EvalReport {
            classes,
            rows,
            confusion,
            evaluated,
            failed,
            rate,
            recall,
            timings,
        }
    }

    pub fn accuracy(&self) -> f64 {
        self.rate / 100.0
    }

    pub fn report_csv(&self) -> String {
        let mut out = String::from("image_id,true_label,predicted_label,status");
        for c in &self.classes {
            write!(out, ",score_{c}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            let predicted = r.predicted.map_or("", |p| self.classes[p].as_str());
            let status = match &r.status {
                RowStatus::Ok => "ok".to_string(),
                RowStatus::ZeroKeypoints => "zero_keypoints".to_string(),
                RowStatus::Failed(m) => format!("failed: {}", m.replace([',', '\n'], ";")),
            };
            write!(out, "{},{},{predicted},{status}", r.image_id, self.classes[r.true_class]).unwrap();
            for c in 0..self.classes.len() {
                match r.scores.get(c) {
                    Some(s) => write!(out, ",{s:.9}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for c in &self.classes {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            out.push_str(c);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        writeln!(out, "average recognition rate: {:.2}%", self.rate).unwrap();
        writeln!(out, "evaluated images: {}", self.evaluated).unwrap();
        writeln!(out, "failed images: {}", self.failed).unwrap();
        let zero = self.rows.iter().filter(|r| r.status == RowStatus::ZeroKeypoints).count();
        writeln!(out, "zero-keypoint images: {zero}").unwrap();
        writeln!(out, "per-class recall:").unwrap();
        for (c, r) in self.classes.iter().zip(&self.recall) {
            match r {
                Some(r) => writeln!(out, "  {c}: {:.2}%", 100.0 * r).unwrap(),
                None => writeln!(out, "  {c}: n/a").unwrap(),
            }
        }
        out
    }

    /// Writes `report.csv`, `confusion.csv` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("report.csv", self.report_csv()),
            ("confusion.csv", self.confusion_csv()),
            ("summary.txt", self.summary()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Checks that no test identity was seen in training and every label is known.
pub fn check_test_set(bundle: &Bundle, samples: &[Sample]) -> Result<()> {
    let train: BTreeSet<&str> = bundle.meta.training_identities.iter().map(String::as_str).collect();
    let overlap: BTreeSet<&str> = samples
        .iter()
        .map(|s| s.identity.as_str())
        .filter(|i| train.contains(i))
        .collect();
    if !overlap.is_empty() {
        return Err(Error::InvalidInput(format!(
            "test identities overlap the training identities: {}",
            overlap.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    if let Some(s) = samples.iter().find(|s| !bundle.model.classes.contains(&s.label)) {
        return Err(Error::InvalidInput(format!(
            "test image {} has label `{}` unknown to the model",
            s.id, s.label
        )));
    }
    Ok(())
}

/// Classifies pre-extracted test features.
pub fn classify_features(bundle: &Bundle, samples: &[Sample], features: Vec<Result<ImageFeatures>>) -> Vec<EvalRow> {
    samples
        .par_iter()
        .zip(features.into_par_iter())
        .map(|(s, f)| {
            let true_class = bundle
                .model
                .classes
                .iter()
                .position(|c| *c == s.label)
                .expect("labels checked");
            let outcome = f.and_then(|f| {
                let sig = bundle.encode(&f).map_err(|e| Error::stage("encode", &s.id, e))?;
                let row = kernel_row(&sig, &bundle.signatures, bundle.model.kernel)?;
                let p = predict(&bundle.model, &row)?;
                Ok((p, f.keypoints.is_empty()))
            });
            match outcome {
                Ok((p, zero)) => EvalRow {
                    image_id: s.id.clone(),
                    true_class,
                    predicted: Some(p.class),
                    scores: p.scores,
                    status: if zero { RowStatus::ZeroKeypoints } else { RowStatus::Ok },
                },
                Err(e) => EvalRow {
                    image_id: s.id.clone(),
                    true_class,
                    predicted: None,
                    scores: Vec::new(),
                    status: RowStatus::Failed(e.to_string()),
                },
            }
        })
        .collect()
}

/// Classifies every test image. Unloadable images become failed rows and are
/// excluded from the rate.
pub fn evaluate(bundle: &Bundle, samples: &[Sample]) -> Result<EvalReport> {
    check_test_set(bundle, samples)?;
    let mut phases = PhaseTimings::default();
    let features = extract_features(samples, &bundle.config.detector_config(), &mut phases);
    let start = Instant::now();
    let rows = classify_features(bundle, samples, features);
    let timings = EvalTimings {
        detect: phases.detect,
        describe: phases.describe,
        classify: start.elapsed().as_secs_f64(),
    };
    for r in &rows {
        if let RowStatus::Failed(m) = &r.status {
            log::warn!("{m}");
        }
    }
    Ok(EvalReport::from_rows(bundle.model.classes.clone(), rows, timings))
}
