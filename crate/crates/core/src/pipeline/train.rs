use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{sha256_hex, Mode, RunConfig};
use crate::clustering::{build_codebook, load_codebook, save_codebook, Codebook, Matrix};
use crate::dataset::{load_grayscale, Manifest, ManifestEntry, MANIFEST_HEADER};
use crate::encoding::{
    build_signature, fit_encoding, quantize, signatures_csv, EncodingArtifacts, GroupingMap, IdfVector,
    QuantizedImage, Signature, SignatureMode,
};
use crate::error::{Error, Result};
use crate::features::{describe_all, detect, Descriptor, DetectorConfig, Keypoint, DESCRIPTOR_LEN};
use crate::kernels::{gram_matrix, save_gram, KernelKind, KernelMatrix, PyramidFeatures};
use crate::svm::{load_model, ova_train, save_model, ModelSidecar, MultiModel, SmoParams};

/// One manifest row with its path resolved against the manifest directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Image path as written in the manifest.
    pub id: String,
    pub path: PathBuf,
    pub label: String,
    pub identity: String,
}

pub fn samples(manifest: &Manifest, entries: &[ManifestEntry]) -> Vec<Sample> {
    entries
        .iter()
        .map(|e| Sample {
            id: e.image_path.display().to_string(),
            path: manifest.resolve(e),
            label: e.class_label.clone(),
            identity: e.identity.clone(),
        })
        .collect()
}

/// SHA-256 over the manifest rows in canonical CSV form.
pub fn manifest_hash(samples: &[Sample]) -> String {
    let mut text = format!("{MANIFEST_HEADER}\n");
    for s in samples {
        writeln!(text, "{},{},{}", s.id, s.label, s.identity).unwrap();
    }
    sha256_hex(text.as_bytes())
}

/// Wall-clock seconds per training phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub detect: f64,
    pub describe: f64,
    pub cluster: f64,
    pub encode: f64,
    pub gram: f64,
    pub svm: f64,
}

impl PhaseTimings {
    pub const NAMES: [&'static str; 6] = ["detect", "describe", "cluster", "encode", "gram", "svm"];

    pub fn values(&self) -> [f64; 6] {
        [self.detect, self.describe, self.cluster, self.encode, self.gram, self.svm]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        PhaseTimings {
            detect: v[0],
            describe: v[1],
            cluster: v[2],
            encode: v[3],
            gram: v[4],
            svm: v[5],
        }
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("phase,seconds\n");
        for (n, v) in Self::NAMES.iter().zip(self.values()) {
            writeln!(out, "{n},{v:.6}").unwrap();
        }
        writeln!(out, "total,{:.6}", self.total()).unwrap();
        out
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed().as_secs_f64();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
    pub width: usize,
    pub height: usize,
}

/// Loads, detects and describes every sample. Failures are returned per image,
/// already tagged with the stage and image id.
pub fn extract_features(
    samples: &[Sample],
    detector: &DetectorConfig,
    timings: &mut PhaseTimings,
) -> Vec<Result<ImageFeatures>> {
    let detected: Vec<Result<_>> = timed(&mut timings.detect, || {
        samples
            .par_iter()
            .map(|s| {
                let image = load_grayscale(&s.path).map_err(|e| Error::stage("load", &s.id, e))?;
                let kps = detect(&image, detector).map_err(|e| Error::stage("detect", &s.id, e))?;
                Ok((image, kps))
            })
            .collect()
    });
    timed(&mut timings.describe, || {
        detected
            .into_par_iter()
            .map(|r| {
                let (image, kps) = r?;
                let (keypoints, descriptors) = describe_all(&image, &kps);
                Ok(ImageFeatures {
                    keypoints,
                    descriptors,
                    width: image.width(),
                    height: image.height(),
                })
            })
            .collect()
    })
}

/// Everything learned from the training images before the SVM.
#[derive(Debug, Clone)]
pub struct Representation {
    pub codebook: Codebook,
    pub artifacts: Option<EncodingArtifacts>,
    pub signatures: Vec<Signature>,
    pub gram: KernelMatrix,
    pub signature_dim: u64,
}

fn signature_dim(config: &RunConfig, codebook_size: usize, artifacts: Option<&EncodingArtifacts>) -> u64 {
    let g = artifacts.map_or(codebook_size, |a| a.grouping.group_count) as u64;
    match config.signature_mode() {
        SignatureMode::SBoVW => codebook_size as u64,
        SignatureMode::ImpBoVW => g * (g + 1) / 2,
        SignatureMode::ImpBoVWFlat => g,
        SignatureMode::SP => {
            let cells: u64 = (0..=config.pyramid_level).map(|l| 1u64 << (2 * l)).sum();
            codebook_size as u64 * cells
        }
    }
}

fn quantize_image(f: &ImageFeatures, codebook: &Codebook) -> Result<QuantizedImage> {
    let positions: Vec<(f32, f32)> = f.keypoints.iter().map(|k| (k.x, k.y)).collect();
    quantize(&f.descriptors, &positions, codebook)
}

/// Signature of one image against fitted corpus statistics.
pub fn encode_image(
    config: &RunConfig,
    codebook: &Codebook,
    artifacts: Option<&EncodingArtifacts>,
    f: &ImageFeatures,
) -> Result<Signature> {
    let q = quantize_image(f, codebook)?;
    encode_quantized(config, codebook.k(), artifacts, &q, f.width, f.height)
}

fn encode_quantized(
    config: &RunConfig,
    k: usize,
    artifacts: Option<&EncodingArtifacts>,
    q: &QuantizedImage,
    width: usize,
    height: usize,
) -> Result<Signature> {
    match config.mode {
        Mode::Sp => PyramidFeatures::from_quantized(q, k, width, height)?.to_signature(config.pyramid_level),
        _ => build_signature(q, config.signature_mode(), k, artifacts),
    }
}

/// Codebook, corpus statistics, signatures and Gram matrix from training features.
pub fn fit_representation(
    config: &RunConfig,
    samples: &[Sample],
    features: &[&ImageFeatures],
    provenance: &str,
    timings: &mut PhaseTimings,
) -> Result<Representation> {
    config.validate()?;
    let k = config.codebook_size();
    let codebook = timed(&mut timings.cluster, || {
        let pooled: Vec<&[f32]> = features
            .iter()
            .flat_map(|f| f.descriptors.iter().map(Descriptor::as_slice))
            .collect();
        let points = Matrix::from_rows(&pooled, DESCRIPTOR_LEN)?;
        build_codebook(&points, k, config.seed, config.clustering, &config.kmeans)
            .map_err(|e| Error::stage("cluster", "<training set>", e))
    })?;

    let (artifacts, signatures) = timed(&mut timings.encode, || -> Result<_> {
        let quantized = features
            .iter()
            .zip(samples)
            .map(|(f, s)| quantize_image(f, &codebook).map_err(|e| Error::stage("quantize", &s.id, e)))
            .collect::<Result<Vec<_>>>()?;
        let artifacts = if config.mode == Mode::Impbovw {
            Some(
                fit_encoding(&quantized, k, config.neighbors, config.grouping_threshold, provenance)
                    .map_err(|e| Error::stage("encode", "<training set>", e))?,
            )
        } else {
            None
        };
        let signatures = quantized
            .par_iter()
            .zip(features.par_iter())
            .zip(samples.par_iter())
            .map(|((q, f), s)| {
                encode_quantized(config, k, artifacts.as_ref(), q, f.width, f.height)
                    .map_err(|e| Error::stage("encode", &s.id, e))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((artifacts, signatures))
    })?;

    let dim = signature_dim(config, k, artifacts.as_ref());
    let kernel = config.kernel_kind(dim as usize);
    let ids = samples.iter().map(|s| s.id.clone()).collect();
    let gram = timed(&mut timings.gram, || gram_matrix(&signatures, kernel, ids))
        .map_err(|e| Error::stage("gram", "<training set>", e))?;
    Ok(Representation {
        codebook,
        artifacts,
        signatures,
        gram,
        signature_dim: dim,
    })
}

/// Class list (sorted) and per-sample class indices.
pub fn class_indices(samples: &[Sample]) -> (Vec<String>, Vec<usize>) {
    let classes: Vec<String> = samples
        .iter()
        .map(|s| s.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = samples
        .iter()
        .map(|s| classes.binary_search(&s.label).expect("label collected above"))
        .collect();
    (classes, labels)
}

pub fn fit_model(config: &RunConfig, rep: &Representation, samples: &[Sample], timings: &mut PhaseTimings) -> Result<MultiModel> {
    let (classes, labels) = class_indices(samples);
    let params = SmoParams {
        c: config.c,
        tol: config.svm_tol,
        max_iter: 0,
    };
    timed(&mut timings.svm, || ova_train(&rep.gram, &labels, &classes, &params))
        .map_err(|e| Error::stage("svm", "<training set>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    pub config_hash: String,
    pub training_manifest_hash: String,
    pub classes: Vec<String>,
    pub training_identities: Vec<String>,
    pub image_ids: Vec<String>,
    pub image_labels: Vec<String>,
    pub zero_keypoint_images: Vec<String>,
    pub kernel: KernelKind,
    pub signature_mode: SignatureMode,
    pub signature_dim: u64,
    pub codebook_size: usize,
    pub group_count: Option<usize>,
    pub svm_converged: bool,
}

/// A trained pipeline: everything needed to classify new images.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub config: RunConfig,
    pub meta: BundleMeta,
    pub codebook: Codebook,
    pub artifacts: Option<EncodingArtifacts>,
    pub signatures: Vec<Signature>,
    pub model: MultiModel,
    /// Present after training; not reloaded from disk.
    pub gram: Option<KernelMatrix>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: Bundle,
    pub timings: PhaseTimings,
}

const BUNDLE_FORMAT: u32 = 1;

/// Trains on already-extracted features. Any image that failed extraction aborts.
pub fn train_on_features(
    config: &RunConfig,
    samples: &[Sample],
    features: &[&ImageFeatures],
    timings: &mut PhaseTimings,
) -> Result<Bundle> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let hash = manifest_hash(samples);
    let rep = fit_representation(config, samples, features, &hash, timings)?;
    let model = fit_model(config, &rep, samples, timings)?;
    let zero_keypoint_images = samples
        .iter()
        .zip(features)
        .filter(|(_, f)| f.keypoints.is_empty())
        .map(|(s, _)| s.id.clone())
        .collect();
    let meta = BundleMeta {
        format_version: BUNDLE_FORMAT,
        config_hash: config.hash(),
        training_manifest_hash: hash,
        classes: model.classes.clone(),
        training_identities: samples
            .iter()
            .map(|s| s.identity.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        image_ids: samples.iter().map(|s| s.id.clone()).collect(),
        image_labels: samples.iter().map(|s| s.label.clone()).collect(),
        zero_keypoint_images,
        kernel: rep.gram.kernel,
        signature_mode: config.signature_mode(),
        signature_dim: rep.signature_dim,
        codebook_size: rep.codebook.k(),
        group_count: rep.artifacts.as_ref().map(|a| a.grouping.group_count),
        svm_converged: model.models.iter().all(|m| m.converged),
    };
    Ok(Bundle {
        config: config.clone(),
        meta,
        codebook: rep.codebook,
        artifacts: rep.artifacts,
        signatures: rep.signatures,
        model,
        gram: Some(rep.gram),
    })
}

/// detect → describe → cluster → quantize → (RCM + TF-IDF) → Gram → one-vs-all SVM.
pub fn train_pipeline(config: &RunConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    config.validate()?;
    let mut timings = PhaseTimings::default();
    let features = extract_features(samples, &config.detector_config(), &mut timings)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ImageFeatures> = features.iter().collect();
    let bundle = train_on_features(config, samples, &refs, &mut timings)?;
    for id in &bundle.meta.zero_keypoint_images {
        log::warn!("training image {id} has no describable keypoints");
    }
    Ok(TrainOutcome { bundle, timings })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn idf_csv(idf: &IdfVector) -> String {
    let mut out = String::from("group_id,doc_count,idf\n");
    for (g, (n, v)) in idf.doc_counts.iter().zip(&idf.idf).enumerate() {
        writeln!(out, "{g},{n},{v}").unwrap();
    }
    out
}

fn parse_idf_csv(text: &str, total_images: usize, provenance: &str) -> Result<IdfVector> {
    let bad = |m: String| Error::Format { what: "idf table", message: m };
    let mut lines = text.lines();
    if lines.next() != Some("group_id,doc_count,idf") {
        return Err(bad("bad header".into()));
    }
    let (mut doc_counts, mut idf) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 || f[0].parse::<usize>().ok() != Some(i) {
            return Err(bad(format!("line {}: malformed", i + 2)));
        }
        doc_counts.push(f[1].parse().map_err(|_| bad(format!("line {}: doc count", i + 2)))?);
        idf.push(f[2].parse().map_err(|_| bad(format!("line {}: idf", i + 2)))?);
    }
    Ok(IdfVector {
        idf,
        total_images,
        doc_counts,
        provenance: provenance.to_string(),
    })
}

fn parse_signatures_csv(text: &str, ids: &[String], mode: SignatureMode) -> Result<Vec<Signature>> {
    let bad = |m: String| Error::Format { what: "signature table", message: m };
    let mut lines = text.lines();
    if lines.next() != Some("image_id,feature_id,weight") {
        return Err(bad("bad header".into()));
    }
    let mut features: Vec<Vec<(u64, f64)>> = vec![Vec::new(); ids.len()];
    let mut cursor = 0usize;
    for (i, line) in lines.enumerate() {
        let (rest, weight) = line.rsplit_once(',').ok_or_else(|| bad(format!("line {}", i + 2)))?;
        let (id, feature) = rest.rsplit_once(',').ok_or_else(|| bad(format!("line {}", i + 2)))?;
        while cursor < ids.len() && ids[cursor] != id {
            cursor += 1;
        }
        if cursor == ids.len() {
            return Err(bad(format!("line {}: unknown or out-of-order image `{id}`", i + 2)));
        }
        let f = feature.parse().map_err(|_| bad(format!("line {}: feature id", i + 2)))?;
        let w = weight.parse().map_err(|_| bad(format!("line {}: weight", i + 2)))?;
        features[cursor].push((f, w));
    }
    features
        .into_iter()
        .map(|f| Signature::from_pairs(mode, f))
        .collect()
}

impl Bundle {
    /// Writes the bundle directory. Every file is a pure function of the
    /// config, seed and training data.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serialises");
        write(&dir.join("bundle.json"), meta + "\n")?;
        write(&dir.join("config.toml"), self.config.to_toml())?;
        save_codebook(&self.codebook, dir, "codebook")?;
        if let Some(a) = &self.artifacts {
            write(&dir.join("grouping.csv"), a.grouping.csv())?;
            write(&dir.join("idf.csv"), idf_csv(&a.idf))?;
        }
        let rows = self.meta.image_ids.iter().map(String::as_str).zip(&self.signatures);
        write(&dir.join("signatures.csv"), signatures_csv(rows))?;
        let sidecar = ModelSidecar {
            c: self.config.c,
            tol: self.config.svm_tol,
            seed: self.config.seed,
            training_manifest_hash: self.meta.training_manifest_hash.clone(),
            kernel: self.model.kernel,
            classes: self.model.classes.clone(),
        };
        save_model(&self.model, &sidecar, dir)?;
        if let Some(g) = &self.gram {
            save_gram(g, dir, "gram")?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Bundle> {
        let meta_text = read_text(&dir.join("bundle.json"))?;
        let meta: BundleMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Format {
            what: "bundle metadata",
            message: e.to_string(),
        })?;
        if meta.format_version != BUNDLE_FORMAT {
            return Err(Error::Format {
                what: "bundle metadata",
                message: format!("unsupported bundle version {}", meta.format_version),
            });
        }
        let config = RunConfig::from_toml(&read_text(&dir.join("config.toml"))?)?;
        if config.hash() != meta.config_hash {
            return Err(Error::Format {
                what: "bundle",
                message: "config.toml does not match the recorded config hash".into(),
            });
        }
        let codebook = load_codebook(dir, "codebook")?;
        let artifacts = if config.mode == Mode::Impbovw {
            let prov = &meta.training_manifest_hash;
            let grouping = GroupingMap::from_csv(&read_text(&dir.join("grouping.csv"))?, prov)?;
            let idf = parse_idf_csv(&read_text(&dir.join("idf.csv"))?, meta.image_ids.len(), prov)?;
            Some(EncodingArtifacts {
                grouping,
                idf,
                neighbors: config.neighbors,
            })
        } else {
            None
        };
        let signatures = parse_signatures_csv(
            &read_text(&dir.join("signatures.csv"))?,
            &meta.image_ids,
            meta.signature_mode,
        )?;
        let (model, sidecar) = load_model(dir)?;
        if sidecar.training_manifest_hash != meta.training_manifest_hash || model.classes != meta.classes {
            return Err(Error::Format {
                what: "bundle",
                message: "model sidecar disagrees with bundle metadata".into(),
            });
        }
        Ok(Bundle {
            config,
            meta,
            codebook,
            artifacts,
            signatures,
            model,
            gram: None,
        })
    }

    pub fn encode(&self, f: &ImageFeatures) -> Result<Signature> {
        encode_image(&self.config, &self.codebook, self.artifacts.as_ref(), f)
    }
}
