//! Histogram intersection, pyramid match and spatial pyramid kernels, plus
//! Gram-matrix assembly.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{QuantizedImage, Signature, SignatureMode};
use crate::error::{Error, Result};

pub const DEFAULT_PYRAMID_LEVEL: usize = 2;
pub const DEFAULT_SP_CHANNELS: usize = 200;

fn check_non_negative(v: &[(u64, f64)]) -> Result<()> {
    match v.iter().find(|f| !(f.1 >= 0.0)) {
        Some(f) => Err(Error::InvalidInput(format!(
            "intersection kernel needs non-negative weights, found {}",
            f.1
        ))),
        None => Ok(()),
    }
}

/// Merge over two id-sorted sparse vectors, calling `both` on shared ids and
/// `only` on ids present in just one side.
#[inline]
fn merge(a: &[(u64, f64)], b: &[(u64, f64)], mut both: impl FnMut(f64, f64), mut only: impl FnMut(f64)) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                only(a[i].1);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                only(b[j].1);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                both(a[i].1, b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    a[i..].iter().chain(&b[j..]).for_each(|f| only(f.1));
}

#[inline]
fn intersection_unchecked(a: &[(u64, f64)], b: &[(u64, f64)]) -> f64 {
    let mut sum = 0.0;
    merge(a, b, |x, y| sum += x.min(y), |_| {});
    sum
}

/// `Σ_i min(a_i, b_i)` over two id-sorted sparse vectors.
pub fn intersection_kernel(a: &[(u64, f64)], b: &[(u64, f64)]) -> Result<f64> {
    check_non_negative(a)?;
    check_non_negative(b)?;
    Ok(intersection_unchecked(a, b))
}

pub fn intersection_dense(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidInput("intersection kernel needs non-negative weights".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.min(*y)).sum())
}

pub fn squared_euclidean_sparse(a: &[(u64, f64)], b: &[(u64, f64)]) -> f64 {
    let sum = std::cell::Cell::new(0.0);
    merge(a, b, |x, y| sum.set(sum.get() + (x - y) * (x - y)), |x| sum.set(sum.get() + x * x));
    sum.get()
}

pub fn rbf_kernel(a: &[(u64, f64)], b: &[(u64, f64)], gamma: f64) -> f64 {
    (-gamma * squared_euclidean_sparse(a, b)).exp()
}

/// Counts per cell of the `2^l x 2^l` grid over `[0,1)^2`, row-major in `y`.
pub fn grid_histogram(points: &[(f64, f64)], level: usize) -> Result<Vec<u32>> {
    let side = 1usize << level;
    let mut cells = vec![0u32; side * side];
    for &(x, y) in points {
        if !(0.0..1.0).contains(&x) || !(0.0..1.0).contains(&y) {
            return Err(Error::InvalidInput(format!(
                "pyramid coordinate ({x}, {y}) outside [0, 1)"
            )));
        }
        let cx = (x * side as f64).floor() as usize;
        let cy = (y * side as f64).floor() as usize;
        cells[cy * side + cx] += 1;
    }
    Ok(cells)
}

fn level_intersections(x: &[(f64, f64)], y: &[(f64, f64)], max_level: usize) -> Result<Vec<f64>> {
    (0..=max_level)
        .map(|l| {
            let (hx, hy) = (grid_histogram(x, l)?, grid_histogram(y, l)?);
            Ok(hx.iter().zip(&hy).map(|(a, b)| a.min(b)).sum::<u32>() as f64)
        })
        .collect()
}

/// Weight of level `l` in the closed form `I^0 / 2^L + Σ_{l≥1} I^l / 2^(L-l+1)`.
pub fn level_weight(level: usize, max_level: usize) -> f64 {
    if level == 0 {
        1.0 / (1u64 << max_level) as f64
    } else {
        1.0 / (1u64 << (max_level - level + 1)) as f64
    }
}

/// Pyramid match kernel, summed-weights form.
pub fn pyramid_match_kernel(x: &[(f64, f64)], y: &[(f64, f64)], max_level: usize) -> Result<f64> {
    let inter = level_intersections(x, y, max_level)?;
    Ok(inter
        .iter()
        .enumerate()
        .map(|(l, i)| level_weight(l, max_level) * i)
        .sum())
}

/// Pyramid match kernel, new-matches form: `I^L + Σ_{l<L} (I^l - I^(l+1)) / 2^(L-l)`.
pub fn pyramid_match_kernel_incremental(
    x: &[(f64, f64)],
    y: &[(f64, f64)],
    max_level: usize,
) -> Result<f64> {
    let inter = level_intersections(x, y, max_level)?;
    let mut k = inter[max_level];
    for l in 0..max_level {
        k += (inter[l] - inter[l + 1]) / (1u64 << (max_level - l)) as f64;
    }
    Ok(k)
}

/// Keypoint positions split by channel, normalised to `[0, 1)^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidFeatures {
    pub channels: Vec<Vec<(f64, f64)>>,
}

impl PyramidFeatures {
    pub fn new(channels: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        for &(x, y) in channels.iter().flatten() {
            if !(0.0..1.0).contains(&x) || !(0.0..1.0).contains(&y) {
                return Err(Error::InvalidInput(format!(
                    "pyramid coordinate ({x}, {y}) outside [0, 1)"
                )));
            }
        }
        Ok(PyramidFeatures { channels })
    }

    /// Channel `m` holds the positions of keypoints quantized to channel `m`;
    /// pixel coordinates are divided by the image size.
    pub fn from_quantized(q: &QuantizedImage, channels: usize, width: usize, height: usize) -> Result<Self> {
        let mut out = vec![Vec::new(); channels];
        for (&w, &(x, y)) in q.words.iter().zip(&q.positions) {
            let slot = out.get_mut(w as usize).ok_or(Error::DimensionMismatch {
                expected: channels,
                actual: w as usize + 1,
            })?;
            slot.push((x as f64 / width as f64, y as f64 / height as f64));
        }
        PyramidFeatures::new(out)
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn point_count(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }

    /// Sparse vector whose intersection with another reproduces
    /// [`spatial_pyramid_kernel`]: one feature per (level, channel, cell),
    /// weighted by the level weight.
    pub fn to_signature(&self, max_level: usize) -> Result<Signature> {
        let m = self.channel_count() as u64;
        let mut features = Vec::new();
        let mut offset = 0u64;
        for l in 0..=max_level {
            let cells = 1u64 << (2 * l);
            let weight = level_weight(l, max_level);
            for (c, points) in self.channels.iter().enumerate() {
                if points.is_empty() {
                    continue;
                }
                for (cell, &count) in grid_histogram(points, l)?.iter().enumerate() {
                    if count > 0 {
                        features.push((offset + c as u64 * cells + cell as u64, weight * count as f64));
                    }
                }
            }
            offset += m * cells;
        }
        Signature::from_pairs(SignatureMode::SP, features)
    }
}

/// Sum over channels of the per-channel pyramid match kernels.
pub fn spatial_pyramid_kernel(x: &PyramidFeatures, y: &PyramidFeatures, max_level: usize) -> Result<f64> {
    if x.channel_count() != y.channel_count() {
        return Err(Error::DimensionMismatch {
            expected: x.channel_count(),
            actual: y.channel_count(),
        });
    }
    x.channels
        .iter()
        .zip(&y.channels)
        .map(|(a, b)| pyramid_match_kernel(a, b, max_level))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum KernelKind {
    Intersection,
    Rbf { gamma: f64 },
    SpatialPyramid,
}

impl KernelKind {
    pub fn id(&self) -> u32 {
        match self {
            KernelKind::Intersection => 0,
            KernelKind::Rbf { .. } => 1,
            KernelKind::SpatialPyramid => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Intersection => "intersection",
            KernelKind::Rbf { .. } => "rbf",
            KernelKind::SpatialPyramid => "spatial_pyramid",
        }
    }

    pub fn accepts(&self, mode: SignatureMode) -> bool {
        match self {
            KernelKind::SpatialPyramid => mode == SignatureMode::SP,
            _ => mode != SignatureMode::SP,
        }
    }

    /// Kernel value between two signatures of a compatible mode.
    #[inline]
    pub fn eval(&self, a: &Signature, b: &Signature) -> f64 {
        match *self {
            KernelKind::Intersection | KernelKind::SpatialPyramid => {
                intersection_unchecked(&a.features, &b.features)
            }
            KernelKind::Rbf { gamma } => rbf_kernel(&a.features, &b.features, gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub n: usize,
    /// Row-major `n x n` values.
    pub values: Vec<f64>,
    pub kernel: KernelKind,
    pub ids: Vec<String>,
}

impl KernelMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Wraps a precomputed matrix, checking shape, finiteness and symmetry.
    pub fn from_values(n: usize, values: Vec<f64>, kernel: KernelKind) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite kernel value".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (values[i * n + j] - values[j * n + i]).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!("kernel matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(KernelMatrix {
            n,
            values,
            kernel,
            ids: (0..n).map(|i| i.to_string()).collect(),
        })
    }
}

fn check_modes(signatures: &[Signature], kernel: &KernelKind) -> Result<()> {
    if let Some(bad) = signatures.iter().find(|s| !kernel.accepts(s.mode)) {
        return Err(Error::InvalidInput(format!(
            "{} kernel cannot be used with {:?} signatures",
            kernel.name(),
            bad.mode
        )));
    }
    if let Some(first) = signatures.first() {
        if signatures.iter().any(|s| s.mode != first.mode) {
            return Err(Error::InvalidInput("mixed signature modes".into()));
        }
    }
    Ok(())
}

/// Symmetric Gram matrix; each upper-triangle entry is computed once and mirrored.
pub fn gram_matrix(signatures: &[Signature], kernel: KernelKind, ids: Vec<String>) -> Result<KernelMatrix> {
    check_modes(signatures, &kernel)?;
    let n = signatures.len();
    if ids.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: ids.len(),
        });
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| kernel.eval(&signatures[i], &signatures[j])).collect())
        .collect();
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite kernel value".into()));
    }
    Ok(KernelMatrix {
        n,
        values,
        kernel,
        ids,
    })
}

/// Gram matrix of the spatial pyramid kernel evaluated channel by channel.
pub fn gram_matrix_pyramids(features: &[PyramidFeatures], max_level: usize) -> Result<KernelMatrix> {
    let n = features.len();
    let upper = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| spatial_pyramid_kernel(&features[i], &features[j], max_level))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            values[i * n + i + off] = v;
            values[(i + off) * n + i] = v;
        }
    }
    Ok(KernelMatrix {
        n,
        values,
        kernel: KernelKind::SpatialPyramid,
        ids: (0..n).map(|i| i.to_string()).collect(),
    })
}

/// Kernel values of one signature against every training signature.
pub fn kernel_row(query: &Signature, train: &[Signature], kernel: KernelKind) -> Result<Vec<f64>> {
    check_modes(std::slice::from_ref(query), &kernel)?;
    Ok(train.iter().map(|t| kernel.eval(query, t)).collect())
}

const GRAM_MAGIC: &[u8; 4] = b"VVGM";

pub fn encode_gram(matrix: &KernelMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + matrix.values.len() * 8);
    out.extend_from_slice(GRAM_MAGIC);
    out.extend_from_slice(&(matrix.n as u32).to_le_bytes());
    for v in &matrix.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_gram(bytes: &[u8], kernel: KernelKind, ids: Vec<String>) -> Result<KernelMatrix> {
    let bad = |message: &str| Error::Format {
        what: "gram matrix",
        message: message.into(),
    };
    if bytes.len() < 8 || &bytes[..4] != GRAM_MAGIC {
        return Err(bad("missing VVGM magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + n * n * 8 || ids.len() != n {
        return Err(bad("size mismatch"));
    }
    let values = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(KernelMatrix {
        n,
        values,
        kernel,
        ids,
    })
}

/// Writes `<stem>.bin` and a `<stem>.ids` sidecar with one image id per line.
pub fn save_gram(matrix: &KernelMatrix, dir: &Path, stem: &str) -> Result<()> {
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, encode_gram(matrix)).map_err(|e| Error::io(&bin, e))?;
    let ids = dir.join(format!("{stem}.ids"));
    let mut text = matrix.ids.join("\n");
    text.push('\n');
    fs::write(&ids, text).map_err(|e| Error::io(&ids, e))
}
