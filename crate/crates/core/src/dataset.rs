//! Corpus ingestion: manifests, grayscale image loading, identity-disjoint
//! splitting and identity-level leave-one-out folds.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "path,label,identity";

/// Row-major luminance raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image has zero extent".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        if let Some(p) = pixels.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(Error::InvalidInput(format!(
                "pixel value {p} outside [0, 1]"
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from a generator, clamping values into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[y * self.width + x]
    }

    /// Bilinear interpolation with edge replication. Pixel `i` is centred at coordinate `i`.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }

    pub fn is_constant(&self) -> bool {
        let first = self.pixels[0];
        self.pixels.iter().all(|&p| p == first)
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// ITU-R BT.601 luma of an 8-bit RGB triple, scaled to `[0, 1]`.
pub fn luminance(r: u8, g: u8, b: u8) -> f32 {
    let y = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0;
    y.clamp(0.0, 1.0) as f32
}

/// Loads an 8-bit PGM (P5) or PNG file as a luminance image.
pub fn load_grayscale(path: &Path) -> Result<Image> {
    let err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        Some(other) => return Err(err(format!("unsupported format {other:?}"))),
        None => return Err(err("unrecognised image format".into())),
    }
    let decoded = reader.decode().map_err(|e| err(e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let pixels: Vec<f32> = if decoded.color().has_color() {
        decoded
            .to_rgb8()
            .pixels()
            .map(|p| luminance(p[0], p[1], p[2]))
            .collect()
    } else {
        decoded
            .to_luma8()
            .pixels()
            .map(|p| p[0] as f32 / 255.0)
            .collect()
    };
    Image::new(width, height, pixels).map_err(|e| err(e.to_string()))
}

/// Writes a binary PGM (P5).
pub fn save_pgm(image: &Image, path: &Path) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.extend(image.to_gray8());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub class_label: String,
    pub identity: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Sorted, de-duplicated class labels.
    pub labels: Vec<String>,
    /// Directory that relative image paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn from_entries(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        let labels = label_set(&entries);
        Manifest {
            entries,
            labels,
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.image_path.is_absolute() {
            entry.image_path.clone()
        } else {
            self.base_dir.join(&entry.image_path)
        }
    }
}

pub fn label_set(entries: &[ManifestEntry]) -> Vec<String> {
    entries
        .iter()
        .map(|e| e.class_label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn identity_set(entries: &[ManifestEntry]) -> BTreeSet<String> {
    entries.iter().map(|e| e.identity.clone()).collect()
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let entries = parse_manifest(&text).map_err(|message| Error::Manifest {
        path: path.to_path_buf(),
        message,
    })?;
    Ok(Manifest::from_entries(entries, base_dir))
}

pub fn parse_manifest(text: &str) -> std::result::Result<Vec<ManifestEntry>, String> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l.trim().trim_start_matches('\u{feff}'),
            None => return Err("empty manifest".into()),
        }
    };
    if header != MANIFEST_HEADER {
        return Err(format!("expected header `{MANIFEST_HEADER}`, found `{header}`"));
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(format!(
                "line {line_no}: expected 3 columns (path,label,identity), found {}",
                fields.len()
            ));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(format!("line {line_no}: empty field"));
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(format!("line {line_no}: duplicate image path `{}`", fields[0]));
        }
        entries.push(ManifestEntry {
            image_path: PathBuf::from(fields[0]),
            class_label: fields[1].to_string(),
            identity: fields[2].to_string(),
        });
    }
    if entries.is_empty() {
        return Err("empty manifest".into());
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{MANIFEST_HEADER}").unwrap();
    for e in entries {
        writeln!(
            out,
            "{},{},{}",
            e.image_path.display(),
            e.class_label,
            e.identity
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

/// Distinct identities in order of first appearance.
fn ordered_identities(entries: &[ManifestEntry]) -> Vec<&str> {
    let mut seen = HashSet::new();
    entries
        .iter()
        .filter(|e| seen.insert(e.identity.as_str()))
        .map(|e| e.identity.as_str())
        .collect()
}

/// Shuffles identities with a seeded RNG and fills the training side until it
/// holds at least `train_fraction` of all images. All images of one identity
/// travel together, and at least one identity always ends up on each side.
pub fn split_identity_disjoint(
    entries: &[ManifestEntry],
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut identities = ordered_identities(entries);
    if identities.len() < 2 {
        return Err(Error::InvalidInput(
            "identity-disjoint split needs at least 2 identities".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    identities.shuffle(&mut rng);

    let mut per_identity: HashMap<&str, usize> = HashMap::new();
    for e in entries {
        *per_identity.entry(e.identity.as_str()).or_default() += 1;
    }
    let target = train_fraction * entries.len() as f64 - 1e-9;
    let mut train_ids = HashSet::new();
    let mut count = 0usize;
    for id in &identities[..identities.len() - 1] {
        if count as f64 >= target {
            break;
        }
        train_ids.insert(*id);
        count += per_identity[id];
    }

    let (train, test) = entries
        .iter()
        .cloned()
        .partition(|e| train_ids.contains(e.identity.as_str()));
    Ok(DatasetSplit { train, test })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub held_out_identity: String,
    pub held_out: Vec<ManifestEntry>,
    pub remainder: Vec<ManifestEntry>,
}

/// One fold per distinct identity, in order of first appearance.
pub fn loo_folds(train: &[ManifestEntry]) -> Result<Vec<Fold>> {
    let identities = ordered_identities(train);
    if identities.len() < 2 {
        return Err(Error::InvalidInput(
            "leave-one-identity-out needs at least 2 identities".into(),
        ));
    }
    Ok(identities
        .into_iter()
        .map(|id| {
            let (held_out, remainder) = train.iter().cloned().partition(|e| e.identity == id);
            Fold {
                held_out_identity: id.to_string(),
                held_out,
                remainder,
            }
        })
        .collect())
}
