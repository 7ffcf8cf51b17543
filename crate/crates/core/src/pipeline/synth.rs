//! Synthetic textured-pattern corpus: each image scatters pairs of adjacent
//! shapes over a background whose brightness, contrast and texture depend on
//! the identity. Classes differ in which shape families are paired.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::{save_pgm, write_manifest, Image, ManifestEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub classes: usize,
    pub per_class: usize,
    pub identities: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            classes: 3,
            per_class: 60,
            identities: 20,
            size: 128,
            seed: 0,
        }
    }
}

/// Appearance shared by all images of one identity.
#[derive(Debug, Clone, Copy)]
struct Style {
    background: f64,
    contrast: f64,
    texture_amp: f64,
    freq: (f64, f64),
    phase: f64,
    scale: f64,
}

impl Style {
    fn sample(rng: &mut impl Rng) -> Self {
        Style {
            background: rng.random_range(0.15..0.4),
            contrast: rng.random_range(0.35..0.55),
            texture_amp: rng.random_range(0.02..0.06),
            freq: (rng.random_range(0.02..0.08), rng.random_range(0.02..0.08)),
            phase: rng.random_range(0.0..TAU),
            scale: rng.random_range(0.85..1.15),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Square,
    Triangle,
    Checker,
    Cross,
    Ring,
}

const MOTIFS: std::ops::RangeInclusive<usize> = 4..=6;
const NOISE_SIGMA: f64 = 0.03;

const FAMILIES: [Shape; 5] = [Shape::Square, Shape::Triangle, Shape::Checker, Shape::Cross, Shape::Ring];

/// Signed coverage of one shape at `(u, v)` in its rotated local frame,
/// `s` being the half size: 1 inside, -1 for the dark cells of a checker, 0 outside.
fn shape_value(shape: Shape, u: f64, v: f64, s: f64) -> f64 {
    let inside = |c: bool| if c { 1.0 } else { 0.0 };
    match shape {
        Shape::Square => inside(u.abs() <= s && v.abs() <= s),
        Shape::Triangle => {
            // Equilateral, circumradius s·1.3, pointing up.
            let r = 1.3 * s;
            let edges = (0..3).all(|k| {
                let a = PI / 2.0 + TAU * (k as f64 + 0.5) / 3.0;
                u * a.cos() + v * a.sin() <= r / 2.0
            });
            inside(edges)
        }
        Shape::Checker => {
            if u.abs() <= s && v.abs() <= s {
                if u * v >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        }
        Shape::Cross => inside((u.abs() <= s && v.abs() <= s / 3.0) || (v.abs() <= s && u.abs() <= s / 3.0)),
        Shape::Ring => {
            let d = u.hypot(v);
            inside(d <= s && d >= 0.55 * s)
        }
    }
}

struct Placed {
    shape: Shape,
    cx: f64,
    cy: f64,
    half: f64,
    cos: f64,
    sin: f64,
}

/// Family offset between the two shapes of every motif of `class`: class 0
/// pairs a shape with its own family, class 1 with the next family, class 2
/// with the one after. Every family is equally frequent in every class, so
/// only the pairing of neighbouring shapes tells the classes apart.
fn partner_offset(class: usize) -> usize {
    class % 3
}

/// Renders one image of `class` in the given style with 2x2 supersampling.
fn render(class: usize, style: &Style, size: usize, rng: &mut ChaCha8Rng) -> Image {
    let offset = partner_offset(class);
    // Classes beyond the first three reuse the pairings at a different size.
    let size_boost = 1.0 + 0.35 * (class / 3) as f64;
    let unit = size as f64 / 96.0;
    let area = unit * unit;
    let motifs = (rng.random_range(MOTIFS) as f64 * area).round() as usize;
    let lo = 12.0 * unit;
    let hi = size as f64 - lo;
    let mut placed: Vec<Placed> = Vec::new();
    let mut attempts = 0;
    while placed.len() < 2 * motifs && attempts < 500 {
        attempts += 1;
        let first = rng.random_range(0..FAMILIES.len());
        let second = (first + offset) % FAMILIES.len();
        let ha = rng.random_range(3.5..5.0) * style.scale * size_boost * unit;
        let hb = rng.random_range(3.5..5.0) * style.scale * size_boost * unit;
        let cx = rng.random_range(lo..hi);
        let cy = rng.random_range(lo..hi);
        // The partner sits just beside the first shape in a random direction.
        let axis: f64 = rng.random_range(0.0..TAU);
        let gap = ha + hb + rng.random_range(2.0..4.0) * unit;
        let (px, py) = (cx + gap * axis.cos(), cy + gap * axis.sin());
        if !(lo..hi).contains(&px) || !(lo..hi).contains(&py) {
            continue;
        }
        let reach = gap + ha.max(hb);
        let clear = placed
            .iter()
            .step_by(2)
            .zip(placed.iter().skip(1).step_by(2))
            .all(|(a, b)| {
                let (mx, my) = (0.5 * (a.cx + b.cx), 0.5 * (a.cy + b.cy));
                let r = 0.5 * (a.cx - b.cx).hypot(a.cy - b.cy) + a.half.max(b.half);
                (mx - 0.5 * (cx + px)).hypot(my - 0.5 * (cy + py)) > r + 0.5 * reach + 6.0 * unit
            });
        if !clear {
            continue;
        }
        for (shape, x, y, half) in [(FAMILIES[first], cx, cy, ha), (FAMILIES[second], px, py, hb)] {
            let theta: f64 = rng.random_range(-0.35..0.35);
            placed.push(Placed {
                shape,
                cx: x,
                cy: y,
                half,
                cos: theta.cos(),
                sin: theta.sin(),
            });
        }
    }
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let shade = rng.random_range(0.85..1.0) * style.contrast;
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (ox, oy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                let (px, py) = (x as f64 + ox, y as f64 + oy);
                let mut v = style.background
                    + style.texture_amp * (style.freq.0 * px + style.freq.1 * py + style.phase).sin();
                for p in &placed {
                    let (dx, dy) = (px - p.cx, py - p.cy);
                    let u = p.cos * dx + p.sin * dy;
                    let w = -p.sin * dx + p.cos * dy;
                    let s = shape_value(p.shape, u, w, p.half);
                    if s > 0.0 {
                        v += shade;
                    } else if s < 0.0 {
                        v -= 0.5 * style.background;
                    }
                }
                acc += v;
            }
            let value = acc / 4.0 + noise.sample(rng);
            pixels.push(value.clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(size, size, pixels).expect("pixels clamped to [0, 1]")
}

/// Manifest rows and images for the synthetic corpus, in memory. Image `k` of
/// class `c` belongs to identity `k mod identities`.
pub fn generate(params: &SynthParams) -> Result<Vec<(ManifestEntry, Image)>> {
    if params.classes < 2 || params.per_class < 1 || params.identities < 1 {
        return Err(Error::Config(format!("invalid synthetic corpus parameters {params:?}")));
    }
    if params.size < 48 {
        return Err(Error::Config("synthetic images must be at least 48 pixels wide".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let styles: Vec<Style> = (0..params.identities).map(|_| Style::sample(&mut rng)).collect();
    let jobs: Vec<(usize, usize, u64)> = (0..params.classes)
        .flat_map(|c| (0..params.per_class).map(move |k| (c, k)))
        .map(|(c, k)| (c, k, rng.random::<u64>()))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(c, k, seed)| {
            let identity = k % params.identities;
            let mut image_rng = ChaCha8Rng::seed_from_u64(seed);
            let image = render(c, &styles[identity], params.size, &mut image_rng);
            let entry = ManifestEntry {
                image_path: PathBuf::from(format!("images/c{c}_s{identity:02}_{k:03}.pgm")),
                class_label: format!("class{c}"),
                identity: format!("s{identity:02}"),
            };
            (entry, image)
        })
        .collect())
}

/// Writes `manifest.csv` and `images/*.pgm` under `out`; returns the manifest path.
pub fn write_corpus(params: &SynthParams, out: &Path) -> Result<PathBuf> {
    let corpus = generate(params)?;
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    corpus
        .par_iter()
        .try_for_each(|(entry, image)| save_pgm(image, &out.join(&entry.image_path)))?;
    let manifest = out.join("manifest.csv");
    let entries: Vec<ManifestEntry> = corpus.into_iter().map(|(e, _)| e).collect();
    write_manifest(&entries, &manifest)?;
    Ok(manifest)
}
