//! End-to-end training, evaluation, cross-validation and timing runs.

pub mod bench;
pub mod config;
pub mod cv;
pub mod eval;
pub mod svg;
pub mod synth;
pub mod train;

pub use bench::{benchmark_timing, BenchRow, BenchTable};
pub use config::{BenchFile, BenchVariant, ChannelSource, GridFile, GridSpec, KernelChoice, Mode, RunConfig};
pub use cv::{cross_validate, CvResult, FoldScore, GridResult};
pub use eval::{evaluate, EvalReport, EvalRow, RowStatus};
pub use synth::{generate, write_corpus, SynthParams};
pub use train::{
    extract_features, manifest_hash, samples, train_pipeline, Bundle, BundleMeta, ImageFeatures, PhaseTimings,
    Sample, TrainOutcome,
};
