use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::train::{
    encode_image, extract_features, fit_model, fit_representation, manifest_hash, ImageFeatures, PhaseTimings,
    Sample,
};
use crate::error::{Error, Result};
use crate::kernels::kernel_row;
use crate::svm::predict;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldScore {
    pub held_out_identity: String,
    /// Fraction in `[0, 1]`; `None` when the fold failed.
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub config: RunConfig,
    pub folds: Vec<FoldScore>,
    /// Mean accuracy over the folds that completed.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub points: Vec<GridResult>,
    pub best: usize,
}

impl CvResult {
    pub fn best_config(&self) -> &RunConfig {
        &self.points[self.best].config
    }

    pub fn folds_csv(&self) -> String {
        let mut out = String::from("grid_index,c,vocab_size,fold,held_out_identity,accuracy,error\n");
        for (g, p) in self.points.iter().enumerate() {
            for (f, s) in p.folds.iter().enumerate() {
                let acc = s.accuracy.map_or(String::new(), |a| format!("{a:.6}"));
                let err = s.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
                writeln!(
                    out,
                    "{g},{},{},{f},{},{acc},{err}",
                    p.config.c, p.config.vocab_size, s.held_out_identity
                )
                .unwrap();
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "grid_index,c,vocab_size,grouping_threshold,neighbors,pyramid_level,mean_accuracy,failed_folds,best\n",
        );
        for (g, p) in self.points.iter().enumerate() {
            let c = &p.config;
            let mean = p.mean.map_or(String::new(), |m| format!("{m:.6}"));
            let failed = p.folds.iter().filter(|f| f.accuracy.is_none()).count();
            writeln!(
                out,
                "{g},{},{},{},{},{},{mean},{failed},{}",
                c.c,
                c.vocab_size,
                c.grouping_threshold,
                c.neighbors,
                c.pyramid_level,
                g == self.best
            )
            .unwrap();
        }
        out
    }

    /// Writes `cv_folds.csv`, `cv_summary.csv` and `best_config.toml`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("cv_folds.csv", self.folds_csv()),
            ("cv_summary.csv", self.summary_csv()),
            ("best_config.toml", self.best_config().to_toml()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Indices of each identity's samples, identities in order of first appearance.
fn identity_folds(samples: &[Sample]) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match order.iter_mut().find(|(id, _)| *id == s.identity) {
            Some((_, v)) => v.push(i),
            None => order.push((s.identity.clone(), vec![i])),
        }
    }
    order
}

fn key<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serialisable")
}

/// Accuracy of every config in `group` on one fold. Configs in a group share
/// everything except the SVM parameters, so the representation is fitted once.
fn run_fold(
    grid: &[RunConfig],
    group: &[usize],
    samples: &[Sample],
    features: &[Result<ImageFeatures>],
    held_out: &[usize],
) -> Vec<std::result::Result<f64, String>> {
    let fail_all = |m: String| vec![Err(m); group.len()];
    let train_idx: Vec<usize> = (0..samples.len()).filter(|i| !held_out.contains(i)).collect();
    let train_samples: Vec<Sample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let mut train_feats = Vec::with_capacity(train_idx.len());
    for &i in &train_idx {
        match &features[i] {
            Ok(f) => train_feats.push(f),
            Err(e) => return fail_all(e.to_string()),
        }
    }
    let base = &grid[group[0]];
    let mut timings = PhaseTimings::default();
    let rep = match fit_representation(base, &train_samples, &train_feats, &manifest_hash(&train_samples), &mut timings) {
        Ok(r) => r,
        Err(e) => return fail_all(e.to_string()),
    };
    let signatures: Vec<_> = held_out
        .iter()
        .map(|&i| {
            let f = features[i].as_ref().map_err(|e| e.to_string())?;
            encode_image(base, &rep.codebook, rep.artifacts.as_ref(), f).map_err(|e| e.to_string())
        })
        .collect();
    group
        .iter()
        .map(|&g| {
            let model = fit_model(&grid[g], &rep, &train_samples, &mut timings).map_err(|e| e.to_string())?;
            let (mut correct, mut evaluated) = (0usize, 0usize);
            for (&i, sig) in held_out.iter().zip(&signatures) {
                let Ok(sig) = sig else { continue };
                let truth = model
                    .classes
                    .iter()
                    .position(|c| *c == samples[i].label)
                    .ok_or_else(|| format!("class `{}` missing from the fold's training side", samples[i].label))?;
                let row = kernel_row(sig, &rep.signatures, model.kernel).map_err(|e| e.to_string())?;
                let p = predict(&model, &row).map_err(|e| e.to_string())?;
                evaluated += 1;
                correct += usize::from(p.class == truth);
            }
            if evaluated == 0 {
                return Err("no held-out image could be evaluated".to_string());
            }
            Ok(correct as f64 / evaluated as f64)
        })
        .collect()
}

/// Identity-level leave-one-out over `samples` for every grid point. The best
/// point has the highest mean accuracy; ties go to smaller C, then smaller vocabulary.
pub fn cross_validate(grid: &[RunConfig], samples: &[Sample]) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Config("cross-validation grid is empty".into()));
    }
    for c in grid {
        c.validate()?;
    }
    let folds = identity_folds(samples);
    if folds.len() < 2 {
        return Err(Error::InvalidInput(
            "leave-one-identity-out needs at least 2 identities".into(),
        ));
    }

    // Feature extraction depends only on the detector settings.
    let mut feature_cache: BTreeMap<String, Vec<Result<ImageFeatures>>> = BTreeMap::new();
    for c in grid {
        let det = c.detector_config();
        feature_cache
            .entry(key(&det))
            .or_insert_with(|| extract_features(samples, &det, &mut PhaseTimings::default()));
    }

    // Grid points that differ only in SVM parameters share one representation per fold.
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in grid.iter().enumerate() {
        let mut k = c.clone();
        k.c = 0.0;
        k.svm_tol = 0.0;
        groups.entry(key(&k)).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();

    let per_fold: Vec<Vec<(usize, std::result::Result<f64, String>)>> = folds
        .par_iter()
        .map(|(_, held_out)| {
            groups
                .iter()
                .flat_map(|group| {
                    let feats = &feature_cache[&key(&grid[group[0]].detector_config())];
                    let scores = run_fold(grid, group, samples, feats, held_out);
                    group.iter().copied().zip(scores).collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();

    let mut points: Vec<GridResult> = grid
        .iter()
        .map(|c| GridResult {
            config: c.clone(),
            folds: Vec::with_capacity(folds.len()),
            mean: None,
        })
        .collect();
    for ((identity, _), scores) in folds.iter().zip(per_fold) {
        let mut scores = scores;
        scores.sort_by_key(|s| s.0);
        for (g, s) in scores {
            let (accuracy, error) = match s {
                Ok(a) => (Some(a), None),
                Err(e) => {
                    log::warn!("fold {identity} failed: {e}");
                    (None, Some(e))
                }
            };
            points[g].folds.push(FoldScore {
                held_out_identity: identity.clone(),
                accuracy,
                error,
            });
        }
    }
    for p in &mut points {
        let ok: Vec<f64> = p.folds.iter().filter_map(|f| f.accuracy).collect();
        p.mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    }

    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        let Some(m) = p.mean else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let (bm, bc) = (points[b].mean.unwrap(), &points[b].config);
                m > bm
                    || (m == bm && p.config.c < bc.c)
                    || (m == bm && p.config.c == bc.c && p.config.vocab_size < bc.vocab_size)
            }
        };
        if better {
            best = Some(i);
        }
    }
    let best = best.ok_or_else(|| Error::InvalidInput("every cross-validation fold failed".into()))?;
    Ok(CvResult { points, best })
}
