use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{ClusteringMethod, KMeansParams, DEFAULT_VOCAB_SIZE};
use crate::encoding::{SignatureMode, DEFAULT_GROUPING_THRESHOLD, DEFAULT_NEIGHBORS};
use crate::error::{Error, Result};
use crate::features::{DetectorConfig, DetectorKind, DogParams, HarrisParams, DESCRIPTOR_BASE_SCALE};
use crate::kernels::{KernelKind, DEFAULT_PYRAMID_LEVEL, DEFAULT_SP_CHANNELS};
use crate::svm::{DEFAULT_C, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sbovw,
    Impbovw,
    Sp,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Sbovw => "sbovw",
            Mode::Impbovw => "impbovw",
            Mode::Sp => "sp",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Intersection,
    Rbf,
    SpatialPyramid,
}

impl KernelChoice {
    pub fn name(&self) -> &'static str {
        match self {
            KernelChoice::Intersection => "intersection",
            KernelChoice::Rbf => "rbf",
            KernelChoice::SpatialPyramid => "spatial_pyramid",
        }
    }
}

/// Where the spatial-pyramid channels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSource {
    /// A dedicated codebook with `sp_channels` words.
    Separate,
    /// The main codebook, so `M = vocab_size`.
    Vocab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseParams {
    pub step: usize,
    pub scale: f32,
}

impl Default for DenseParams {
    fn default() -> Self {
        DenseParams {
            step: 5,
            scale: DESCRIPTOR_BASE_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub detector: DetectorKind,
    pub vocab_size: usize,
    pub clustering: ClusteringMethod,
    /// Defaults to `spatial_pyramid` in sp mode and `intersection` otherwise.
    pub kernel: Option<KernelChoice>,
    pub c: f64,
    pub neighbors: usize,
    pub grouping_threshold: f64,
    pub pyramid_level: usize,
    pub seed: u64,
    pub sp_channels: usize,
    pub sp_channel_source: ChannelSource,
    /// Use the grouped TF-IDF histogram instead of the conjunction features.
    pub rcm_flat: bool,
    /// Defaults to the reciprocal of the signature dimension.
    pub rbf_gamma: Option<f64>,
    pub svm_tol: f64,
    pub kmeans: KMeansParams,
    pub harris: HarrisParams,
    pub dog: DogParams,
    pub dense: DenseParams,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Impbovw,
            detector: DetectorKind::Harris,
            vocab_size: DEFAULT_VOCAB_SIZE,
            clustering: ClusteringMethod::KMeansPlusPlus,
            kernel: None,
            c: DEFAULT_C,
            neighbors: DEFAULT_NEIGHBORS,
            grouping_threshold: DEFAULT_GROUPING_THRESHOLD,
            pyramid_level: DEFAULT_PYRAMID_LEVEL,
            seed: 0,
            sp_channels: DEFAULT_SP_CHANNELS,
            sp_channel_source: ChannelSource::Separate,
            rcm_flat: false,
            rbf_gamma: None,
            svm_tol: DEFAULT_TOL,
            kmeans: KMeansParams::default(),
            harris: HarrisParams::default(),
            dog: DogParams::default(),
            dense: DenseParams::default(),
            train_manifest: None,
            test_manifest: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let config: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn kernel_choice(&self) -> KernelChoice {
        self.kernel.unwrap_or(match self.mode {
            Mode::Sp => KernelChoice::SpatialPyramid,
            _ => KernelChoice::Intersection,
        })
    }

    pub fn signature_mode(&self) -> SignatureMode {
        match self.mode {
            Mode::Sbovw => SignatureMode::SBoVW,
            Mode::Impbovw if self.rcm_flat => SignatureMode::ImpBoVWFlat,
            Mode::Impbovw => SignatureMode::ImpBoVW,
            Mode::Sp => SignatureMode::SP,
        }
    }

    /// Number of codebook words actually learned.
    pub fn codebook_size(&self) -> usize {
        match (self.mode, self.sp_channel_source) {
            (Mode::Sp, ChannelSource::Separate) => self.sp_channels,
            _ => self.vocab_size,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            kind: self.detector,
            harris: self.harris,
            dog: self.dog,
            dense_step: self.dense.step,
            dense_scale: self.dense.scale,
        }
    }

    /// Resolves the kernel for signatures of dimension `dim`.
    pub fn kernel_kind(&self, dim: usize) -> KernelKind {
        match self.kernel_choice() {
            KernelChoice::Intersection => KernelKind::Intersection,
            KernelChoice::SpatialPyramid => KernelKind::SpatialPyramid,
            KernelChoice::Rbf => KernelKind::Rbf {
                gamma: self.rbf_gamma.unwrap_or(1.0 / dim.max(1) as f64),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let sp_kernel = self.kernel_choice() == KernelChoice::SpatialPyramid;
        if (self.mode == Mode::Sp) != sp_kernel {
            return fail(format!(
                "mode `{}` is incompatible with kernel `{}`",
                self.mode,
                self.kernel_choice().name()
            ));
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be ≥ 2, got {}", self.vocab_size));
        }
        if self.mode == Mode::Sp && self.sp_channels < 1 {
            return fail("sp_channels must be ≥ 1".into());
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return fail(format!("C must be positive, got {}", self.c));
        }
        if !(self.svm_tol > 0.0) {
            return fail(format!("svm_tol must be positive, got {}", self.svm_tol));
        }
        if self.neighbors < 1 {
            return fail("neighbors must be ≥ 1".into());
        }
        if !(self.grouping_threshold > 0.0 && self.grouping_threshold.is_finite()) {
            return fail(format!(
                "grouping_threshold must be positive, got {}",
                self.grouping_threshold
            ));
        }
        if self.pyramid_level > 8 {
            return fail(format!("pyramid_level must be ≤ 8, got {}", self.pyramid_level));
        }
        if let Some(g) = self.rbf_gamma {
            if !(g > 0.0 && g.is_finite()) {
                return fail(format!("rbf_gamma must be positive, got {g}"));
            }
        }
        if self.kmeans.max_iter < 1 || !(self.kmeans.tol >= 0.0) || self.kmeans.max_points < 1 {
            return fail(format!("invalid kmeans parameters {:?}", self.kmeans));
        }
        if self.dense.step < 1 || !(self.dense.scale > 0.0) {
            return fail(format!("invalid dense parameters {:?}", self.dense));
        }
        self.harris.validate()?;
        self.dog.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }

    pub fn label(&self) -> String {
        format!(
            "{} {} {} {} k={} C={}",
            self.mode,
            self.detector,
            self.clustering,
            self.kernel_choice().name(),
            self.codebook_size(),
            self.c
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hyper-parameter grid for cross-validation. Axes left out keep the base value,
/// except `c`, which defaults to `{0.1, 1, 10, 100}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub c: Vec<f64>,
    pub vocab_size: Vec<usize>,
    pub grouping_threshold: Vec<f64>,
    pub neighbors: Vec<usize>,
    pub pyramid_level: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            c: vec![0.1, 1.0, 10.0, 100.0],
            vocab_size: Vec::new(),
            grouping_threshold: Vec::new(),
            neighbors: Vec::new(),
            pyramid_level: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridFile {
    pub base: RunConfig,
    pub grid: GridSpec,
}

impl GridFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: GridFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.base.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Cartesian product in a fixed order: `c` varies fastest.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let b = &self.base;
        let mut out = Vec::new();
        for &level in &axis(&self.grid.pyramid_level, b.pyramid_level) {
            for &neighbors in &axis(&self.grid.neighbors, b.neighbors) {
                for &threshold in &axis(&self.grid.grouping_threshold, b.grouping_threshold) {
                    for &vocab in &axis(&self.grid.vocab_size, b.vocab_size) {
                        for &c in &axis(&self.grid.c, b.c) {
                            let mut cfg = b.clone();
                            cfg.pyramid_level = level;
                            cfg.neighbors = neighbors;
                            cfg.grouping_threshold = threshold;
                            cfg.vocab_size = vocab;
                            if b.mode == Mode::Sp && b.sp_channel_source == ChannelSource::Separate {
                                cfg.sp_channels = if self.grid.vocab_size.is_empty() { b.sp_channels } else { vocab };
                            }
                            cfg.c = c;
                            cfg.validate()?;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A named configuration in a benchmark file.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchVariant {
    pub label: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchFile {
    pub runs: usize,
    pub variants: Vec<BenchVariant>,
}

impl BenchFile {
    /// Parses `runs = n`, a `[base]` table and `[[variant]]` tables; each
    /// variant overrides base keys and carries a `label`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg_err = |e: toml::de::Error| Error::Config(e.to_string());
        let mut root: toml::Table = text.parse().map_err(cfg_err)?;
        let runs = match root.remove("runs") {
            None => 5,
            Some(toml::Value::Integer(n)) if n >= 1 => n as usize,
            Some(v) => return Err(Error::Config(format!("runs must be a positive integer, got {v}"))),
        };
        let base = match root.remove("base") {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(Error::Config("`base` must be a table".into())),
        };
        let raw = match root.remove("variant") {
            Some(toml::Value::Array(a)) => a,
            _ => return Err(Error::Config("benchmark file needs at least one [[variant]]".into())),
        };
        if let Some(key) = root.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}` in benchmark file")));
        }
        let mut variants = Vec::new();
        for (i, v) in raw.into_iter().enumerate() {
            let toml::Value::Table(mut t) = v else {
                return Err(Error::Config(format!("variant {i} is not a table")));
            };
            let label = match t.remove("label") {
                Some(toml::Value::String(s)) => s,
                None => format!("variant {i}"),
                Some(_) => return Err(Error::Config(format!("variant {i}: label must be a string"))),
            };
            let mut merged = base.clone();
            merge_tables(&mut merged, t);
            let config = RunConfig::from_table(merged)
                .map_err(|e| Error::Config(format!("variant `{label}`: {e}")))?;
            variants.push(BenchVariant { label, config });
        }
        if variants.is_empty() {
            return Err(Error::Config("benchmark file needs at least one [[variant]]".into()));
        }
        Ok(BenchFile { runs, variants })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

fn merge_tables(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge_tables(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.mode, Mode::Impbovw);
        assert_eq!(c.vocab_size, 2000);
        assert_eq!(c.c, 10.0);
        assert_eq!(c.grouping_threshold, 0.6);
        assert_eq!(c.neighbors, 5);
        assert_eq!(c.pyramid_level, 2);
        assert_eq!(c.kernel_choice(), KernelChoice::Intersection);
    }

    #[test]
    fn sp_mode_needs_pyramid_kernel() {
        assert_eq!(
            RunConfig::from_toml("mode = \"sp\"").unwrap().kernel_choice(),
            KernelChoice::SpatialPyramid
        );
        let err = RunConfig::from_toml("mode = \"sp\"\nkernel = \"intersection\"").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(RunConfig::from_toml("kernel = \"spatial_pyramid\"").is_err());
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        assert!(RunConfig::from_toml("c = 0.0").is_err());
        assert!(RunConfig::from_toml("vocab = 3").is_err());
        assert!(RunConfig::from_toml("[harris]\nk = 0.5").is_err());
        let nested = RunConfig::from_toml("[harris]\nmax_points = 20\n[kmeans]\nmax_iter = 7").unwrap();
        assert_eq!((nested.harris.max_points, nested.kmeans.max_iter), (20, 7));
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = RunConfig {
            kernel: Some(KernelChoice::Rbf),
            rbf_gamma: Some(0.5),
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
    }

    #[test]
    fn rbf_gamma_defaults_to_reciprocal_dimension() {
        let c = RunConfig {
            kernel: Some(KernelChoice::Rbf),
            ..RunConfig::default()
        };
        assert_eq!(c.kernel_kind(256), KernelKind::Rbf { gamma: 1.0 / 256.0 });
    }

    #[test]
    fn grid_expansion() {
        let g = GridFile::from_toml("[base]\nvocab_size = 64\n[grid]\nc = [1.0, 10.0]\nvocab_size = [32, 64]").unwrap();
        let cfgs = g.expand().unwrap();
        let pts: Vec<(usize, f64)> = cfgs.iter().map(|c| (c.vocab_size, c.c)).collect();
        assert_eq!(pts, vec![(32, 1.0), (32, 10.0), (64, 1.0), (64, 10.0)]);
        let d = GridFile::from_toml("").unwrap().expand().unwrap();
        assert_eq!(d.iter().map(|c| c.c).collect::<Vec<_>>(), vec![0.1, 1.0, 10.0, 100.0]);
    }

    #[test]
    fn bench_file_overrides_base() {
        let text = "runs = 3\n[base]\nvocab_size = 64\n[base.harris]\nmax_points = 50\n\
                    [[variant]]\nlabel = \"a\"\nclustering = \"kmeans\"\n\
                    [[variant]]\nlabel = \"b\"\nkernel = \"rbf\"\n[variant.harris]\nk = 0.05\n";
        let b = BenchFile::from_toml(text).unwrap();
        assert_eq!(b.runs, 3);
        assert_eq!(b.variants[0].config.clustering, ClusteringMethod::KMeans);
        assert_eq!(b.variants[1].config.kernel_choice(), KernelChoice::Rbf);
        assert_eq!(b.variants[1].config.harris.max_points, 50);
        assert_eq!(b.variants[1].config.harris.k, 0.05);
        assert!(BenchFile::from_toml("runs = 2").is_err());
    }
}
