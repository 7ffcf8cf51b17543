//! Visual vocabulary learning: k-means++ seeding followed by Lloyd iterations.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f32` matrix; one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of and squared distance to the nearest centroid; ties go to the lowest index.
#[inline]
pub fn nearest(centroids: &Matrix, x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = squared_distance(centroids.row(c), x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    (0..points.rows())
        .into_par_iter()
        .map(|i| nearest(centroids, points.row(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusteringMethod {
    /// Uniformly random distinct initial centroids.
    #[serde(rename = "kmeans")]
    KMeans,
    #[serde(rename = "kmeans++")]
    KMeansPlusPlus,
}

impl std::str::FromStr for ClusteringMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ClusteringMethod::KMeans),
            "kmeans++" => Ok(ClusteringMethod::KMeansPlusPlus),
            other => Err(Error::Config(format!("unknown clustering method `{other}`"))),
        }
    }
}

impl std::fmt::Display for ClusteringMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusteringMethod::KMeans => "kmeans",
            ClusteringMethod::KMeansPlusPlus => "kmeans++",
        })
    }
}

/// Row indices chosen by k-means++ seeding: the first uniformly, each later one
/// with probability proportional to its squared distance to the nearest chosen center.
pub fn kmeanspp_indices<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::InvalidInput("k must be ≥ 1".into()));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("cannot seed {k} centers from {n} points")));
    }
    if !points.all_finite() {
        return Err(Error::InvalidInput("non-finite point".into()));
    }

    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut d2: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| squared_distance(points.row(i), points.row(first)))
        .collect();
    // Position in `chosen` of each point's nearest center.
    let mut owner = vec![0usize; n];

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateData);
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a positive weight");
        let center = points.row(pick);
        // A point whose current center is at least 2·D(x) away from the new
        // one cannot get closer to it (triangle inequality), so skip it.
        let between: Vec<f64> = chosen.iter().map(|&c| squared_distance(points.row(c), center)).collect();
        let slot = chosen.len();
        chosen.push(pick);
        d2.par_iter_mut().zip(owner.par_iter_mut()).enumerate().for_each(|(i, (d, o))| {
            if between[*o] > 4.0001 * *d {
                return;
            }
            let nd = squared_distance(points.row(i), center);
            if nd < *d {
                *d = nd;
                *o = slot;
            }
        });
    }
    Ok(chosen)
}

pub fn kmeanspp_seed<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Result<Matrix> {
    Ok(points.select(&kmeanspp_indices(points, k, rng)?))
}

fn row_key(row: &[f32]) -> Vec<u32> {
    row.iter().map(|v| v.to_bits()).collect()
}

/// `k` uniformly random points with pairwise distinct values.
pub fn uniform_indices<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = points.rows();
    if k == 0 || n < k {
        return Err(Error::InvalidInput(format!("cannot seed {k} centers from {n} points")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut seen = HashSet::new();
    let mut chosen = Vec::with_capacity(k);
    for i in order {
        if seen.insert(row_key(points.row(i))) {
            chosen.push(i);
            if chosen.len() == k {
                return Ok(chosen);
            }
        }
    }
    Err(Error::DegenerateData)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Matrix,
    pub inertia: f64,
    pub seed: u64,
    pub method: ClusteringMethod,
    pub iterations: usize,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydOutcome {
    pub centroids: Matrix,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after each assignment step, ending with the final assignment.
    pub inertia_history: Vec<f64>,
}

/// Lloyd iterations from `init` until the largest centroid displacement drops
/// below `tol` or `max_iter` is reached. Clusters that lose all points take
/// the point farthest from its current centroid.
pub fn lloyd(points: &Matrix, init: &Matrix, max_iter: usize, tol: f64) -> Result<LloydOutcome> {
    let (n, k, dim) = (points.rows(), init.rows(), points.cols());
    if init.cols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: init.cols(),
        });
    }
    if max_iter == 0 || k == 0 {
        return Err(Error::InvalidInput("lloyd needs k ≥ 1 and max_iter ≥ 1".into()));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("{n} points cannot fill {k} clusters")));
    }
    if !points.all_finite() || !init.all_finite() {
        return Err(Error::InvalidInput("non-finite input to lloyd".into()));
    }
    let mut distinct = HashSet::new();
    if !(0..k).all(|c| distinct.insert(row_key(init.row(c)))) {
        return Err(Error::InvalidInput("initial centroids are not distinct".into()));
    }

    let mut centroids = init.clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut assignment = assign(points, &centroids);
        history.push(assignment.iter().map(|a| a.1).sum());

        let mut counts = vec![0usize; k];
        for &(c, _) in &assignment {
            counts[c] += 1;
        }
        for empty in (0..k).filter(|&c| counts[c] == 0).collect::<Vec<_>>() {
            let donor = (0..n)
                .filter(|&i| counts[assignment[i].0] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if assignment[b].1 >= assignment[i].1 => Some(b),
                    _ => Some(i),
                })
                .ok_or_else(|| Error::Numerical("cannot repair empty cluster".into()))?;
            counts[assignment[donor].0] -= 1;
            counts[empty] = 1;
            assignment[donor] = (empty, 0.0);
        }

        let mut sums = vec![0.0f64; k * dim];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += v as f64;
            }
        }
        let mut shift = 0.0f64;
        let mut next = Vec::with_capacity(k * dim);
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            let mut moved = 0.0;
            for (d, &s) in sums[c * dim..(c + 1) * dim].iter().enumerate() {
                let v = (s * inv) as f32;
                let delta = v as f64 - centroids.row(c)[d] as f64;
                moved += delta * delta;
                next.push(v);
            }
            shift = shift.max(moved.sqrt());
        }
        centroids = Matrix::new(k, dim, next)?;
        if !centroids.all_finite() {
            return Err(Error::Numerical("non-finite centroid".into()));
        }
        if shift < tol {
            converged = true;
            break;
        }
    }
    let inertia = assign(points, &centroids).iter().map(|a| a.1).sum();
    history.push(inertia);
    Ok(LloydOutcome {
        centroids,
        inertia,
        iterations,
        converged,
        inertia_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
    /// Pooled descriptors beyond this count are uniformly subsampled.
    pub max_points: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iter: 100,
            tol: 1e-4,
            max_points: 200_000,
        }
    }
}

pub const DEFAULT_VOCAB_SIZE: usize = 2000;

pub fn build_codebook(
    descriptors: &Matrix,
    k: usize,
    seed: u64,
    method: ClusteringMethod,
    params: &KMeansParams,
) -> Result<Codebook> {
    if descriptors.rows() < k {
        return Err(Error::InvalidInput(format!(
            "{} pooled descriptors are fewer than the vocabulary size {k}",
            descriptors.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsampled;
    let points = if descriptors.rows() > params.max_points {
        let mut picked = index::sample(&mut rng, descriptors.rows(), params.max_points).into_vec();
        picked.sort_unstable();
        subsampled = descriptors.select(&picked);
        &subsampled
    } else {
        descriptors
    };
    let init = match method {
        ClusteringMethod::KMeans => points.select(&uniform_indices(points, k, &mut rng)?),
        ClusteringMethod::KMeansPlusPlus => kmeanspp_seed(points, k, &mut rng)?,
    };
    let outcome = lloyd(points, &init, params.max_iter, params.tol)?;
    if !outcome.converged {
        log::warn!(
            "k-means stopped after {} iterations without converging",
            outcome.iterations
        );
    }
    Ok(Codebook {
        centroids: outcome.centroids,
        inertia: outcome.inertia,
        seed,
        method,
        iterations: outcome.iterations,
    })
}

const CODEBOOK_MAGIC: &[u8; 4] = b"VVCB";
const CODEBOOK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CodebookSidecar {
    k: usize,
    dim: usize,
    seed: u64,
    inertia: f64,
    method: ClusteringMethod,
    iterations: usize,
}

pub fn encode_codebook(codebook: &Codebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + codebook.centroids.as_slice().len() * 4);
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
    out.extend_from_slice(&(codebook.k() as u32).to_le_bytes());
    out.extend_from_slice(&(codebook.dim() as u32).to_le_bytes());
    for v in codebook.centroids.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_centroids(bytes: &[u8]) -> Result<Matrix> {
    let bad = |message: &str| Error::Format {
        what: "codebook",
        message: message.into(),
    };
    if bytes.len() < 16 || &bytes[..4] != CODEBOOK_MAGIC {
        return Err(bad("missing VVCB magic"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    if word(4) != CODEBOOK_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (k, dim) = (word(8), word(12));
    if bytes.len() != 16 + k * dim * 4 {
        return Err(bad("truncated payload"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(k, dim, data)
}

/// Writes `<stem>.bin` and the `<stem>.json` sidecar.
pub fn save_codebook(codebook: &Codebook, dir: &Path, stem: &str) -> Result<()> {
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, encode_codebook(codebook)).map_err(|e| Error::io(&bin, e))?;
    let sidecar = CodebookSidecar {
        k: codebook.k(),
        dim: codebook.dim(),
        seed: codebook.seed,
        inertia: codebook.inertia,
        method: codebook.method,
        iterations: codebook.iterations,
    };
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    fs::write(&json, text).map_err(|e| Error::io(&json, e))
}

pub fn load_codebook(dir: &Path, stem: &str) -> Result<Codebook> {
    let bin = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let centroids = decode_centroids(&bytes)?;
    let json = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: CodebookSidecar = serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "codebook sidecar",
        message: e.to_string(),
    })?;
    Ok(Codebook {
        centroids,
        inertia: sidecar.inertia,
        seed: sidecar.seed,
        method: sidecar.method,
        iterations: sidecar.iterations,
    })
}
