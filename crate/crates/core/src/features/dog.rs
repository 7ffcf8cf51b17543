//! Difference-of-Gaussians scale-space extrema.
//!
//! Extrema are taken at pixel and level resolution; there is no quadratic
//! sub-pixel refinement. The reported scale is the Gaussian sigma of the DoG
//! level the extremum was found on, expressed in input-image pixels.

use serde::{Deserialize, Serialize};

use super::filter::{gaussian_blur, Plane};
use super::Keypoint;
use crate::dataset::Image;
use crate::error::{Error, Result};

/// Blur assumed to be already present in the input image.
const INPUT_BLUR: f32 = 0.5;
/// Smallest octave side we are willing to search.
const MIN_OCTAVE_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DogParams {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub base_sigma: f32,
    /// Minimum absolute DoG value.
    pub contrast: f32,
    /// Maximum ratio of principal curvatures.
    pub edge_ratio: f32,
    pub max_points: usize,
}

impl Default for DogParams {
    fn default() -> Self {
        DogParams {
            octaves: 4,
            scales_per_octave: 3,
            base_sigma: 1.6,
            contrast: 0.03,
            edge_ratio: 10.0,
            max_points: 500,
        }
    }
}

impl DogParams {
    pub fn validate(&self) -> Result<()> {
        if self.octaves == 0 || self.scales_per_octave == 0 {
            return Err(Error::Config("dog octaves and scales_per_octave must be ≥ 1".into()));
        }
        if self.base_sigma <= INPUT_BLUR || self.contrast < 0.0 || self.edge_ratio <= 1.0 {
            return Err(Error::Config(format!("invalid dog parameters {self:?}")));
        }
        Ok(())
    }

    /// Smallest image side that still leaves `MIN_OCTAVE_SIDE` pixels in the last octave.
    pub fn min_image_side(&self) -> usize {
        MIN_OCTAVE_SIDE << (self.octaves - 1)
    }
}

struct Octave {
    dogs: Vec<Plane>,
}

fn build_pyramid(image: &Image, params: &DogParams) -> Vec<Octave> {
    let s = params.scales_per_octave;
    let k = 2f32.powf(1.0 / s as f32);
    let initial = (params.base_sigma.powi(2) - INPUT_BLUR.powi(2)).sqrt();
    let mut base = gaussian_blur(&Plane::from_image(image), initial);

    let mut octaves = Vec::with_capacity(params.octaves);
    for o in 0..params.octaves {
        let mut gaussians = Vec::with_capacity(s + 3);
        gaussians.push(base.clone());
        for i in 1..s + 3 {
            let prev = params.base_sigma * k.powi(i as i32 - 1);
            let next = prev * k;
            let step = (next * next - prev * prev).sqrt();
            let blurred = gaussian_blur(&gaussians[i - 1], step);
            gaussians.push(blurred);
        }
        let dogs = gaussians.windows(2).map(|w| w[1].sub(&w[0])).collect();
        if o + 1 < params.octaves {
            base = gaussians[s].decimate();
        }
        octaves.push(Octave { dogs });
    }
    octaves
}

fn is_extremum(dogs: &[Plane], level: usize, x: usize, y: usize) -> bool {
    let v = dogs[level].at(x, y);
    let (mut is_max, mut is_min) = (true, true);
    for plane in &dogs[level - 1..=level + 1] {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let n = plane.at((x as isize + dx) as usize, (y as isize + dy) as usize);
                if std::ptr::eq(plane, &dogs[level]) && dx == 0 && dy == 0 {
                    continue;
                }
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    true
}

fn passes_edge_test(plane: &Plane, x: usize, y: usize, edge_ratio: f32) -> bool {
    let v = plane.at(x, y);
    let dxx = plane.at(x + 1, y) + plane.at(x - 1, y) - 2.0 * v;
    let dyy = plane.at(x, y + 1) + plane.at(x, y - 1) - 2.0 * v;
    let dxy = 0.25
        * (plane.at(x + 1, y + 1) - plane.at(x - 1, y + 1) - plane.at(x + 1, y - 1)
            + plane.at(x - 1, y - 1));
    let trace = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det > 0.0 && trace * trace * edge_ratio < (edge_ratio + 1.0).powi(2) * det
}

pub fn detect_dog(image: &Image, params: &DogParams) -> Result<Vec<Keypoint>> {
    params.validate()?;
    let min_side = params.min_image_side();
    if image.width() < min_side || image.height() < min_side {
        return Err(Error::InvalidInput(format!(
            "{}x{} image too small for {} DoG octaves (needs ≥ {min_side} px per side)",
            image.width(),
            image.height(),
            params.octaves
        )));
    }
    if image.is_constant() {
        return Ok(Vec::new());
    }

    let s = params.scales_per_octave;
    let mut points = Vec::new();
    for (o, octave) in build_pyramid(image, params).iter().enumerate() {
        let factor = (1usize << o) as f32;
        let (w, h) = (octave.dogs[0].width, octave.dogs[0].height);
        for level in 1..=s {
            let plane = &octave.dogs[level];
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = plane.at(x, y);
                    if v.abs() < params.contrast || !is_extremum(&octave.dogs, level, x, y) {
                        continue;
                    }
                    if !passes_edge_test(plane, x, y, params.edge_ratio) {
                        continue;
                    }
                    let (px, py) = (x as f32 * factor, y as f32 * factor);
                    if px >= image.width() as f32 || py >= image.height() as f32 {
                        continue;
                    }
                    points.push(Keypoint {
                        x: px,
                        y: py,
                        scale: params.base_sigma * 2f32.powf(o as f32 + level as f32 / s as f32),
                        orientation: 0.0,
                        response: v.abs(),
                    });
                }
            }
        }
    }
    points.sort_by(|a, b| b.response.total_cmp(&a.response));
    points.truncate(params.max_points);
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(size: usize, cx: f32, cy: f32, sigma: f32) -> Image {
        Image::from_fn(size, size, |x, y| {
            let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn constant_image_is_empty() {
        let img = Image::constant(64, 64, 0.3);
        assert!(detect_dog(&img, &DogParams::default()).unwrap().is_empty());
    }

    #[test]
    fn too_small_for_octaves() {
        let img = Image::constant(32, 32, 0.3);
        assert!(detect_dog(&img, &DogParams::default()).is_err());
        let params = DogParams {
            octaves: 2,
            ..Default::default()
        };
        assert!(detect_dog(&img, &params).is_ok());
    }

    #[test]
    fn single_blob_at_its_scale() {
        for sigma in [2.5f32, 4.0, 6.0] {
            let img = blob(96, 48.0, 48.0, sigma);
            let kps = detect_dog(&img, &DogParams::default()).unwrap();
            let top = kps.first().expect("a keypoint");
            assert!((top.x - 48.0).abs() <= 1.0 && (top.y - 48.0).abs() <= 1.0, "{top:?}");
            let rel = (top.scale - sigma).abs() / sigma;
            assert!(rel <= 0.25, "sigma {sigma}: detected {}", top.scale);
        }
    }

    #[test]
    fn sorted_by_response() {
        let img = Image::from_fn(64, 64, |x, y| {
            let a = (-((x as f32 - 20.0).powi(2) + (y as f32 - 20.0).powi(2)) / 18.0).exp();
            let b = 0.6 * (-((x as f32 - 44.0).powi(2) + (y as f32 - 40.0).powi(2)) / 18.0).exp();
            a + b
        });
        let kps = detect_dog(&img, &DogParams::default()).unwrap();
        assert!(kps.len() >= 2);
        assert!(kps.windows(2).all(|w| w[0].response >= w[1].response));
    }
}
