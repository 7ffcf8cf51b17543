//! Bag-of-visual-words image classification: keypoint detection, SIFT-style
//! description, k-means++ codebooks, relative conjunction matrices with TF-IDF
//! weighting, spatial pyramid and histogram intersection kernels, and
//! one-vs-all kernel SVMs.

pub mod clustering;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod features;
pub mod kernels;
pub mod pipeline;
pub mod svm;

pub use error::{Error, Result};
