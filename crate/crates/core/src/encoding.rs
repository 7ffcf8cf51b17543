//! Visual-word encoding: nearest-word quantization, term-frequency histograms,
//! the relative conjunction matrix (spatial co-occurrence of words among
//! neighbouring keypoints), correlation-based word grouping, TF-IDF weights
//! and the per-image sparse signatures fed to the kernels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{nearest, Codebook};
use crate::error::{Error, Result};
use crate::features::Descriptor;

pub const DEFAULT_NEIGHBORS: usize = 5;
pub const DEFAULT_GROUPING_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantizedImage {
    pub words: Vec<u32>,
    pub positions: Vec<(f32, f32)>,
}

impl QuantizedImage {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Same positions, words replaced through `map`.
    pub fn remap(&self, map: &[u32]) -> QuantizedImage {
        QuantizedImage {
            words: self.words.iter().map(|&w| map[w as usize]).collect(),
            positions: self.positions.clone(),
        }
    }
}

pub fn quantize(
    descriptors: &[Descriptor],
    positions: &[(f32, f32)],
    codebook: &Codebook,
) -> Result<QuantizedImage> {
    if descriptors.len() != positions.len() {
        return Err(Error::DimensionMismatch {
            expected: descriptors.len(),
            actual: positions.len(),
        });
    }
    if codebook.dim() != crate::features::DESCRIPTOR_LEN {
        return Err(Error::DimensionMismatch {
            expected: crate::features::DESCRIPTOR_LEN,
            actual: codebook.dim(),
        });
    }
    let words = descriptors
        .par_iter()
        .map(|d| nearest(&codebook.centroids, d.as_slice()).0 as u32)
        .collect();
    Ok(QuantizedImage {
        words,
        positions: positions.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<f64>,
    pub normalized: bool,
}

/// Word frequencies divided by the number of words; all zeros for an empty image.
pub fn tf_histogram(words: &[u32], vocab_size: usize) -> Result<Histogram> {
    let mut bins = vec![0.0; vocab_size];
    for &w in words {
        *bins.get_mut(w as usize).ok_or(Error::DimensionMismatch {
            expected: vocab_size,
            actual: w as usize + 1,
        })? += 1.0;
    }
    if words.is_empty() {
        return Ok(Histogram {
            bins,
            normalized: false,
        });
    }
    let total = words.len() as f64;
    bins.iter_mut().for_each(|b| *b /= total);
    Ok(Histogram {
        bins,
        normalized: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfVector {
    pub idf: Vec<f64>,
    pub total_images: usize,
    pub doc_counts: Vec<usize>,
    /// Hash of the training manifest the statistics were computed from.
    pub provenance: String,
}

impl IdfVector {
    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }
}

/// Natural-log inverse document frequency, `ln(T / max(n_w, 1))`, where `n_w`
/// counts the images containing word `w` at least once.
pub fn compute_idf<W: AsRef<[u32]>>(
    images: &[W],
    vocab_size: usize,
    provenance: &str,
) -> Result<IdfVector> {
    if images.is_empty() {
        return Err(Error::InvalidInput("idf needs at least one training image".into()));
    }
    let mut doc_counts = vec![0usize; vocab_size];
    for words in images {
        let present: BTreeSet<u32> = words.as_ref().iter().copied().collect();
        for w in present {
            *doc_counts.get_mut(w as usize).ok_or(Error::DimensionMismatch {
                expected: vocab_size,
                actual: w as usize + 1,
            })? += 1;
        }
    }
    let t = images.len() as f64;
    let idf = doc_counts
        .iter()
        .map(|&n| (t / n.max(1) as f64).ln())
        .collect();
    Ok(IdfVector {
        idf,
        total_images: images.len(),
        doc_counts,
        provenance: provenance.to_string(),
    })
}

pub fn tfidf_weight(histogram: &Histogram, idf: &IdfVector) -> Result<Vec<f64>> {
    if histogram.bins.len() != idf.len() {
        return Err(Error::DimensionMismatch {
            expected: idf.len(),
            actual: histogram.bins.len(),
        });
    }
    Ok(histogram
        .bins
        .iter()
        .zip(&idf.idf)
        .map(|(tf, w)| tf * w)
        .collect())
}

/// Sparse upper-triangular co-occurrence counts keyed by `(i, j)` with `i <= j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConjunctionMatrix {
    pub size: usize,
    pub entries: BTreeMap<(u32, u32), u32>,
}

impl ConjunctionMatrix {
    pub fn get(&self, i: u32, j: u32) -> u32 {
        let key = (i.min(j), i.max(j));
        self.entries.get(&key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.entries.values().map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The `k` nearest other keypoints of keypoint `p`; ties go to the lower index.
fn nearest_keypoints(positions: &[(f32, f32)], p: usize, k: usize) -> Vec<usize> {
    let (px, py) = (positions[p].0 as f64, positions[p].1 as f64);
    let mut others: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .filter(|&(q, _)| q != p)
        .map(|(q, &(x, y))| ((x as f64 - px).powi(2) + (y as f64 - py).powi(2), q))
        .collect();
    let k = k.min(others.len());
    if k < others.len() {
        others.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        others.truncate(k);
    }
    others.into_iter().map(|(_, q)| q).collect()
}

/// Every keypoint is linked to its `k` nearest keypoints; each linked unordered
/// keypoint pair adds one count to the entry of its two words.
pub fn conjunction_matrix(q: &QuantizedImage, vocab_size: usize, k: usize) -> Result<ConjunctionMatrix> {
    if k == 0 {
        return Err(Error::Config("neighbour count must be ≥ 1".into()));
    }
    if q.words.len() != q.positions.len() {
        return Err(Error::DimensionMismatch {
            expected: q.words.len(),
            actual: q.positions.len(),
        });
    }
    if let Some(&w) = q.words.iter().find(|&&w| w as usize >= vocab_size) {
        return Err(Error::DimensionMismatch {
            expected: vocab_size,
            actual: w as usize + 1,
        });
    }
    let mut matrix = ConjunctionMatrix {
        size: vocab_size,
        entries: BTreeMap::new(),
    };
    if q.len() < 2 {
        return Ok(matrix);
    }
    let mut pairs = BTreeSet::new();
    for p in 0..q.len() {
        for n in nearest_keypoints(&q.positions, p, k) {
            pairs.insert((p.min(n), p.max(n)));
        }
    }
    for (a, b) in pairs {
        let (wa, wb) = (q.words[a], q.words[b]);
        *matrix.entries.entry((wa.min(wb), wa.max(wb))).or_default() += 1;
    }
    Ok(matrix)
}

/// Sums per-image matrices into a dense symmetric `size x size` row-major
/// matrix: each row is the corpus-wide co-occurrence profile of one word.
pub fn aggregate_rows(matrices: &[ConjunctionMatrix], size: usize) -> Vec<f64> {
    let mut dense = vec![0.0f64; size * size];
    for m in matrices {
        for (&(i, j), &c) in &m.entries {
            let (i, j) = (i as usize, j as usize);
            dense[i * size + j] += c as f64;
            if i != j {
                dense[j * size + i] += c as f64;
            }
        }
    }
    dense
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingMap {
    /// Group id of every word.
    pub groups: Vec<u32>,
    pub group_count: usize,
    pub provenance: String,
}

impl GroupingMap {
    pub fn identity(size: usize, provenance: &str) -> Self {
        GroupingMap {
            groups: (0..size as u32).collect(),
            group_count: size,
            provenance: provenance.to_string(),
        }
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("word_id,group_id\n");
        for (w, g) in self.groups.iter().enumerate() {
            writeln!(out, "{w},{g}").unwrap();
        }
        out
    }

    pub fn from_csv(text: &str, provenance: &str) -> Result<Self> {
        let bad = |message: String| Error::Format {
            what: "grouping csv",
            message,
        };
        let mut lines = text.lines();
        if lines.next() != Some("word_id,group_id") {
            return Err(bad("missing header".into()));
        }
        let mut groups = Vec::new();
        for (i, line) in lines.enumerate() {
            let (w, g) = line.split_once(',').ok_or_else(|| bad(format!("line {}", i + 2)))?;
            let w: usize = w.parse().map_err(|_| bad(format!("line {}", i + 2)))?;
            let g: u32 = g.parse().map_err(|_| bad(format!("line {}", i + 2)))?;
            if w != groups.len() {
                return Err(bad(format!("word ids out of order at line {}", i + 2)));
            }
            groups.push(g);
        }
        let group_count = groups.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
        Ok(GroupingMap {
            groups,
            group_count,
            provenance: provenance.to_string(),
        })
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Pearson correlation of two rows; `None` if either has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Joins words whose co-occurrence rows correlate at or above `threshold`;
/// groups are the connected components of that graph, numbered by their
/// smallest word id. Rows with zero variance stay singletons.
pub fn word_grouping(rows: &[f64], size: usize, threshold: f64, provenance: &str) -> Result<GroupingMap> {
    if rows.len() != size * size {
        return Err(Error::DimensionMismatch {
            expected: size * size,
            actual: rows.len(),
        });
    }
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("grouping threshold must be > 0, got {threshold}")));
    }

    // Centre and scale each row once so correlations become dot products.
    let standardized: Vec<Option<Vec<f64>>> = (0..size)
        .into_par_iter()
        .map(|i| {
            let row = &rows[i * size..(i + 1) * size];
            let mean = row.iter().sum::<f64>() / size as f64;
            let centred: Vec<f64> = row.iter().map(|v| v - mean).collect();
            let norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm > 0.0).then(|| centred.into_iter().map(|v| v / norm).collect())
        })
        .collect();

    let edges: Vec<Vec<usize>> = (0..size)
        .into_par_iter()
        .map(|i| {
            let Some(zi) = &standardized[i] else {
                return Vec::new();
            };
            (i + 1..size)
                .filter(|&j| {
                    let Some(zj) = &standardized[j] else {
                        return false;
                    };
                    let corr = if zi == zj {
                        1.0
                    } else {
                        zi.iter().zip(zj).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)
                    };
                    corr >= threshold
                })
                .collect()
        })
        .collect();

    let mut sets = DisjointSet::new(size);
    for (i, js) in edges.iter().enumerate() {
        for &j in js {
            sets.union(i, j);
        }
    }
    let mut ids = BTreeMap::new();
    let groups = (0..size)
        .map(|w| {
            let root = sets.find(w);
            let next = ids.len() as u32;
            *ids.entry(root).or_insert(next)
        })
        .collect();
    Ok(GroupingMap {
        groups,
        group_count: ids.len(),
        provenance: provenance.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignatureMode {
    /// Normalised word histogram.
    SBoVW,
    /// TF-IDF weighted diagonal and upper triangle of the grouped conjunction matrix.
    ImpBoVW,
    /// TF-IDF weighted histogram of word groups.
    ImpBoVWFlat,
    /// Level-weighted spatial pyramid cell counts.
    SP,
}

/// Sparse non-negative feature vector, sorted by feature id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub mode: SignatureMode,
    pub features: Vec<(u64, f64)>,
}

impl Signature {
    pub fn empty(mode: SignatureMode) -> Self {
        Signature {
            mode,
            features: Vec::new(),
        }
    }

    /// Builds a signature from unsorted pairs, rejecting duplicates and invalid weights.
    pub fn from_pairs(mode: SignatureMode, mut features: Vec<(u64, f64)>) -> Result<Self> {
        features.sort_by_key(|f| f.0);
        if features.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput("duplicate feature id".into()));
        }
        if let Some(f) = features.iter().find(|f| !f.1.is_finite() || f.1 < 0.0) {
            return Err(Error::InvalidInput(format!("invalid feature weight {}", f.1)));
        }
        Ok(Signature { mode, features })
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.features.iter().map(|f| f.1).sum()
    }

    pub fn dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for &(id, w) in &self.features {
            out[id as usize] = w;
        }
        out
    }
}

/// Index of `(i, j)`, `i <= j`, in the row-major packed upper triangle of a `g x g` matrix.
pub fn triangular_index(i: u64, j: u64, g: u64) -> u64 {
    debug_assert!(i <= j && j < g);
    i * (2 * g - i + 1) / 2 + (j - i)
}

/// Corpus statistics a signature is encoded against.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingArtifacts {
    pub grouping: GroupingMap,
    /// IDF over word groups.
    pub idf: IdfVector,
    pub neighbors: usize,
}

/// Learns the word grouping and group-level IDF from training images only.
pub fn fit_encoding(
    train: &[QuantizedImage],
    vocab_size: usize,
    neighbors: usize,
    threshold: f64,
    provenance: &str,
) -> Result<EncodingArtifacts> {
    let matrices = train
        .par_iter()
        .map(|q| conjunction_matrix(q, vocab_size, neighbors))
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate_rows(&matrices, vocab_size);
    let grouping = word_grouping(&rows, vocab_size, threshold, provenance)?;
    let grouped: Vec<Vec<u32>> = train.iter().map(|q| q.remap(&grouping.groups).words).collect();
    let idf = compute_idf(&grouped, grouping.group_count, provenance)?;
    Ok(EncodingArtifacts {
        grouping,
        idf,
        neighbors,
    })
}

pub fn build_signature(
    q: &QuantizedImage,
    mode: SignatureMode,
    vocab_size: usize,
    artifacts: Option<&EncodingArtifacts>,
) -> Result<Signature> {
    match mode {
        SignatureMode::SBoVW => {
            let h = tf_histogram(&q.words, vocab_size)?;
            let features = h
                .bins
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(i, &v)| (i as u64, v))
                .collect();
            Ok(Signature { mode, features })
        }
        SignatureMode::ImpBoVW | SignatureMode::ImpBoVWFlat => {
            let a = artifacts.ok_or_else(|| {
                Error::InvalidInput("improved signatures need grouping and idf artifacts".into())
            })?;
            if a.grouping.provenance != a.idf.provenance {
                return Err(Error::InvalidInput(
                    "grouping and idf were fitted on different training sets".into(),
                ));
            }
            if a.grouping.groups.len() != vocab_size {
                return Err(Error::DimensionMismatch {
                    expected: vocab_size,
                    actual: a.grouping.groups.len(),
                });
            }
            let g = a.grouping.group_count;
            if a.idf.len() != g {
                return Err(Error::DimensionMismatch {
                    expected: g,
                    actual: a.idf.len(),
                });
            }
            let grouped = q.remap(&a.grouping.groups);
            if mode == SignatureMode::ImpBoVWFlat {
                let h = tf_histogram(&grouped.words, g)?;
                let w = tfidf_weight(&h, &a.idf)?;
                let features = h
                    .bins
                    .iter()
                    .zip(w)
                    .enumerate()
                    .filter(|(_, (&tf, _))| tf > 0.0)
                    .map(|(i, (_, w))| (i as u64, w))
                    .collect();
                return Ok(Signature { mode, features });
            }
            let matrix = conjunction_matrix(&grouped, g, a.neighbors)?;
            let total = matrix.total() as f64;
            let features = matrix
                .entries
                .iter()
                .map(|(&(i, j), &c)| {
                    let weight = c as f64 / total * a.idf.idf[i as usize] * a.idf.idf[j as usize];
                    (triangular_index(i as u64, j as u64, g as u64), weight)
                })
                .collect();
            Ok(Signature { mode, features })
        }
        SignatureMode::SP => Err(Error::InvalidInput(
            "spatial pyramid signatures are built from pyramid features".into(),
        )),
    }
}

pub fn signatures_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a Signature)>) -> String {
    let mut out = String::from("image_id,feature_id,weight\n");
    for (id, sig) in rows {
        for (f, w) in &sig.features {
            writeln!(out, "{id},{f},{w}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{ClusteringMethod, Matrix};
    use crate::features::DESCRIPTOR_LEN;

    fn q(words: &[u32], positions: &[(f32, f32)]) -> QuantizedImage {
        QuantizedImage {
            words: words.to_vec(),
            positions: positions.to_vec(),
        }
    }

    fn codebook(rows: Vec<[f32; DESCRIPTOR_LEN]>) -> Codebook {
        Codebook {
            centroids: Matrix::from_rows(&rows, DESCRIPTOR_LEN).unwrap(),
            inertia: 0.0,
            seed: 0,
            method: ClusteringMethod::KMeans,
            iterations: 0,
        }
    }

    #[test]
    fn quantize_exact_and_tie() {
        let rows: Vec<[f32; DESCRIPTOR_LEN]> = (0..8)
            .map(|i| {
                let mut r = [0.0; DESCRIPTOR_LEN];
                r[i] = 1.0;
                r
            })
            .collect();
        let cb = codebook(rows.clone());
        let exact = Descriptor(rows[7]);
        let mut tie = [0.0; DESCRIPTOR_LEN];
        tie[2] = 0.5;
        tie[5] = 0.5;
        let out = quantize(&[exact, Descriptor(tie)], &[(0.0, 0.0), (1.0, 1.0)], &cb).unwrap();
        assert_eq!(out.words, vec![7, 2]);
        let empty = quantize(&[], &[], &cb).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn tf_examples() {
        let h = tf_histogram(&[0, 0, 1], 3).unwrap();
        assert_eq!(h.bins, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert!(h.normalized);
        let e = tf_histogram(&[], 3).unwrap();
        assert_eq!(e.bins, vec![0.0; 3]);
        assert!(!e.normalized);
        assert!(tf_histogram(&[3], 3).is_err());
    }

    #[test]
    fn idf_examples() {
        let mut images = vec![vec![0u32, 1]; 2];
        images.extend(vec![vec![0u32]; 6]);
        let idf = compute_idf(&images, 3, "p").unwrap();
        assert_eq!(idf.idf[0], 0.0);
        assert!((idf.idf[1] - 4f64.ln()).abs() < 1e-12);
        assert!((idf.idf[1] - 1.3863).abs() < 1e-4);
        assert_eq!(idf.idf[2], 8f64.ln());
        assert_eq!(idf.doc_counts, vec![8, 2, 0]);

        let h = Histogram {
            bins: vec![0.5, 0.25, 0.0],
            normalized: false,
        };
        let w = tfidf_weight(&h, &idf).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 0.3466).abs() < 1e-4);
        let zero = tfidf_weight(&Histogram { bins: vec![0.0; 3], normalized: false }, &idf).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conjunction_examples() {
        let single = conjunction_matrix(&q(&[4], &[(0.0, 0.0)]), 5, 3).unwrap();
        assert!(single.is_empty());

        let pair = conjunction_matrix(&q(&[3, 3], &[(0.0, 0.0), (4.0, 1.0)]), 5, 1).unwrap();
        assert_eq!(pair.entries.len(), 1);
        assert_eq!(pair.get(3, 3), 1);

        let line = q(&[0, 1, 1], &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let m = conjunction_matrix(&line, 2, 1).unwrap();
        assert_eq!(m.get(0, 1), 1);
        assert_eq!(m.get(1, 1), 1);
        assert_eq!(m.total(), 2);
        assert!(conjunction_matrix(&line, 2, 0).is_err());
    }

    #[test]
    fn grouping_examples() {
        // Words 0 and 1 share a profile; word 2 differs.
        let rows = vec![
            1.0, 2.0, 0.0, //
            1.0, 2.0, 0.0, //
            0.0, 0.0, 5.0,
        ];
        let g = word_grouping(&rows, 3, 0.6, "p").unwrap();
        assert_eq!(g.groups[0], g.groups[1]);
        assert_ne!(g.groups[0], g.groups[2]);
        assert_eq!(g.group_count, 2);

        let basis = vec![
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0,
        ];
        assert!(pearson(&basis[0..3], &basis[3..6]).unwrap() < 0.0);
        assert_eq!(word_grouping(&basis, 3, 0.6, "p").unwrap().group_count, 3);

        let flat = vec![1.0, 1.0, 1.0, 1.0];
        let g = word_grouping(&flat, 2, 0.1, "p").unwrap();
        assert_eq!(g.group_count, 2);
    }

    #[test]
    fn grouping_is_transitive() {
        // a~b and b~c correlate above 0.6, a~c does not.
        let a = [1.0, 0.0, 0.0, 0.0];
        let b = [1.0, 1.0, 0.0, 0.0];
        let c = [0.0, 1.0, 0.0, 0.0];
        let rab = pearson(&a, &b).unwrap();
        let rbc = pearson(&b, &c).unwrap();
        let rac = pearson(&a, &c).unwrap();
        assert!(rab >= 0.5 && rbc >= 0.5 && rac < 0.5, "{rab} {rbc} {rac}");
        let mut rows = Vec::new();
        for r in [a, b, c, [0.0, 0.0, 0.0, 3.0]] {
            rows.extend_from_slice(&r);
        }
        let g = word_grouping(&rows, 4, 0.5, "p").unwrap();
        assert_eq!(g.groups[..3], [0, 0, 0]);
        assert_eq!(g.groups[3], 1);
    }

    #[test]
    fn grouping_csv_round_trip() {
        let g = GroupingMap {
            groups: vec![0, 1, 0, 2],
            group_count: 3,
            provenance: "x".into(),
        };
        assert_eq!(GroupingMap::from_csv(&g.csv(), "x").unwrap(), g);
    }

    #[test]
    fn triangular_indices_are_dense() {
        let g = 5;
        let mut ids = Vec::new();
        for i in 0..g {
            for j in i..g {
                ids.push(triangular_index(i, j, g));
            }
        }
        assert_eq!(ids, (0..g * (g + 1) / 2).collect::<Vec<_>>());
    }

    #[test]
    fn sbovw_signature_is_tf() {
        let img = q(&[0, 2, 2, 3], &[(0.0, 0.0); 4]);
        let sig = build_signature(&img, SignatureMode::SBoVW, 4, None).unwrap();
        let h = tf_histogram(&img.words, 4).unwrap();
        assert_eq!(sig.dense(4), h.bins);
        let empty = build_signature(&QuantizedImage::default(), SignatureMode::SBoVW, 4, None).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn improved_signature_requires_matching_provenance() {
        let img = q(&[0, 1], &[(0.0, 0.0), (1.0, 0.0)]);
        let artifacts = EncodingArtifacts {
            grouping: GroupingMap::identity(2, "train-a"),
            idf: compute_idf(&[vec![0u32], vec![1]], 2, "train-b").unwrap(),
            neighbors: 1,
        };
        assert!(build_signature(&img, SignatureMode::ImpBoVW, 2, Some(&artifacts)).is_err());
        assert!(build_signature(&img, SignatureMode::ImpBoVW, 2, None).is_err());
    }

    #[test]
    fn signature_from_pairs_validates() {
        assert!(Signature::from_pairs(SignatureMode::SBoVW, vec![(1, 0.5), (1, 0.2)]).is_err());
        assert!(Signature::from_pairs(SignatureMode::SBoVW, vec![(1, -0.5)]).is_err());
        let s = Signature::from_pairs(SignatureMode::SBoVW, vec![(4, 0.5), (1, 0.2)]).unwrap();
        assert_eq!(s.features, vec![(1, 0.2), (4, 0.5)]);
        assert_eq!(
            signatures_csv([("img", &s)]),
            "image_id,feature_id,weight\nimg,1,0.2\nimg,4,0.5\n"
        );
    }
}
