//! Keypoint detection (Harris, DoG, dense grid) and SIFT-style description.

mod dog;
pub mod filter;
mod harris;
mod sift;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dog::{detect_dog, DogParams};
pub use harris::{detect_harris, harris_response, HarrisParams};
pub use sift::{describe_sift, dominant_orientation, has_support};

use crate::dataset::Image;
use crate::error::{Error, Result};

pub const DESCRIPTOR_LEN: usize = 128;
/// Scale at which the descriptor grid spacing is one pixel.
pub const DESCRIPTOR_BASE_SCALE: f32 = 1.6;
/// Half-width, in grid samples, of the descriptor window.
pub const DESCRIPTOR_HALF_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Gaussian sigma in pixels.
    pub scale: f32,
    /// Radians in `[0, 2π)`.
    pub orientation: f32,
    pub response: f32,
}

#[derive(Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn zero() -> Self {
        Descriptor([0.0; DESCRIPTOR_LEN])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

impl std::fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Descriptor(norm={:.4})", self.norm())
    }
}

/// Grid keypoints at `margin + i * step` along both axes, where the margin is
/// the descriptor half-window at `scale`. Emitted in row-major order.
pub fn detect_dense(image: &Image, step: usize, scale: f32) -> Result<Vec<Keypoint>> {
    if step == 0 {
        return Err(Error::Config("dense step must be ≥ 1".into()));
    }
    if scale <= 0.0 {
        return Err(Error::Config("dense scale must be positive".into()));
    }
    let margin = (DESCRIPTOR_HALF_WINDOW as f32 * scale / DESCRIPTOR_BASE_SCALE).ceil() as usize;
    let (w, h) = (image.width(), image.height());
    if w < 2 * margin || h < 2 * margin {
        return Ok(Vec::new());
    }
    let xs: Vec<usize> = (margin..=w - margin).step_by(step).filter(|&x| x < w).collect();
    let ys: Vec<usize> = (margin..=h - margin).step_by(step).filter(|&y| y < h).collect();
    Ok(ys
        .iter()
        .flat_map(|&y| {
            xs.iter().map(move |&x| Keypoint {
                x: x as f32,
                y: y as f32,
                scale,
                orientation: 0.0,
                response: 0.0,
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Harris,
    Dog,
    Dense,
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harris" => Ok(DetectorKind::Harris),
            "dog" => Ok(DetectorKind::Dog),
            "dense" => Ok(DetectorKind::Dense),
            other => Err(Error::Config(format!("unknown detector `{other}`"))),
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DetectorKind::Harris => "harris",
            DetectorKind::Dog => "dog",
            DetectorKind::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub harris: HarrisParams,
    pub dog: DogParams,
    pub dense_step: usize,
    pub dense_scale: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kind: DetectorKind::Harris,
            harris: HarrisParams::default(),
            dog: DogParams::default(),
            dense_step: 5,
            dense_scale: DESCRIPTOR_BASE_SCALE,
        }
    }
}

pub fn detect(image: &Image, config: &DetectorConfig) -> Result<Vec<Keypoint>> {
    match config.kind {
        DetectorKind::Harris => detect_harris(image, &config.harris),
        DetectorKind::Dog => detect_dog(image, &config.dog),
        DetectorKind::Dense => detect_dense(image, config.dense_step, config.dense_scale),
    }
}

/// Assigns each keypoint its dominant orientation and describes it. Keypoints
/// without full descriptor support are dropped; order is preserved otherwise.
pub fn describe_all(image: &Image, keypoints: &[Keypoint]) -> (Vec<Keypoint>, Vec<Descriptor>) {
    keypoints
        .par_iter()
        .filter(|kp| has_support(image, kp))
        .map(|kp| {
            let mut kp = *kp;
            kp.orientation = dominant_orientation(image, &kp);
            let d = describe_sift(image, &kp).expect("support checked above");
            (kp, d)
        })
        .unzip()
}

pub fn keypoints_csv(keypoints: &[Keypoint]) -> String {
    let mut out = String::from("x,y,scale,orientation,response\n");
    for k in keypoints {
        writeln!(out, "{},{},{},{},{}", k.x, k.y, k.scale, k.orientation, k.response).unwrap();
    }
    out
}

pub fn write_keypoints_csv(keypoints: &[Keypoint], path: &Path) -> Result<()> {
    std::fs::write(path, keypoints_csv(keypoints)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_count_on_64() {
        let img = Image::constant(64, 64, 0.0);
        let kps = detect_dense(&img, 5, DESCRIPTOR_BASE_SCALE).unwrap();
        assert_eq!(kps.len(), 48usize.div_ceil(5).pow(2));
        assert_eq!((kps[0].x, kps[0].y), (8.0, 8.0));
        assert_eq!((kps[1].x, kps[1].y), (13.0, 8.0));
    }

    #[test]
    fn dense_step_equal_to_width() {
        let img = Image::constant(64, 64, 0.0);
        assert!(detect_dense(&img, 64, DESCRIPTOR_BASE_SCALE).unwrap().len() <= 1);
    }

    #[test]
    fn dense_sixteen_pixels_single_centre() {
        let img = Image::constant(16, 16, 0.0);
        let kps = detect_dense(&img, 5, DESCRIPTOR_BASE_SCALE).unwrap();
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].x, kps[0].y), (8.0, 8.0));
        let (kept, descs) = describe_all(&img, &kps);
        assert_eq!((kept.len(), descs.len()), (1, 1));
    }

    #[test]
    fn dense_too_small() {
        let img = Image::constant(15, 40, 0.0);
        assert!(detect_dense(&img, 5, DESCRIPTOR_BASE_SCALE).unwrap().is_empty());
        assert!(detect_dense(&img, 0, DESCRIPTOR_BASE_SCALE).is_err());
    }

    #[test]
    fn keypoint_csv_format() {
        let kp = Keypoint {
            x: 1.5,
            y: 2.0,
            scale: 1.6,
            orientation: 0.25,
            response: 3.0,
        };
        assert_eq!(
            keypoints_csv(&[kp]),
            "x,y,scale,orientation,response\n1.5,2,1.6,0.25,3\n"
        );
    }
}
