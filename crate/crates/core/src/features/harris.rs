//! Harris corner detector on the Gaussian-smoothed structure tensor.

use serde::{Deserialize, Serialize};

use super::filter::{gaussian_blur, Plane};
use super::{Keypoint, DESCRIPTOR_BASE_SCALE};
use crate::dataset::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarrisParams {
    /// Sensitivity in `R = det(M) - k * trace(M)^2`.
    pub k: f32,
    /// Standard deviation of the structure-tensor window.
    pub sigma: f32,
    /// Keypoints must reach this fraction of the strongest response.
    pub threshold_rel: f32,
    pub max_points: usize,
}

impl Default for HarrisParams {
    fn default() -> Self {
        HarrisParams {
            k: 0.04,
            sigma: 1.5,
            threshold_rel: 0.01,
            max_points: 500,
        }
    }
}

impl HarrisParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.04..=0.06).contains(&self.k) {
            return Err(Error::Config(format!("harris k must lie in [0.04, 0.06], got {}", self.k)));
        }
        if !(self.threshold_rel > 0.0 && self.threshold_rel < 1.0) {
            return Err(Error::Config(format!(
                "harris threshold_rel must lie in (0, 1), got {}",
                self.threshold_rel
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Config("harris sigma must be positive".into()));
        }
        Ok(())
    }
}

pub fn harris_response(image: &Image, params: &HarrisParams) -> Plane {
    let (gx, gy) = Plane::from_image(image).gradients();
    let product = |a: &Plane, b: &Plane| Plane {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    };
    let sxx = gaussian_blur(&product(&gx, &gx), params.sigma);
    let syy = gaussian_blur(&product(&gy, &gy), params.sigma);
    let sxy = gaussian_blur(&product(&gx, &gy), params.sigma);

    let data = (0..sxx.data.len())
        .map(|i| {
            let (a, b, c) = (sxx.data[i], syy.data[i], sxy.data[i]);
            let trace = a + b;
            a * b - c * c - params.k * trace * trace
        })
        .collect();
    Plane {
        width: image.width(),
        height: image.height(),
        data,
    }
}

/// A pixel survives 3x3 suppression if it beats the neighbours that precede it in
/// raster order and is not beaten by those that follow, so a plateau yields one point.
pub(crate) fn is_local_max(plane: &Plane, x: usize, y: usize) -> bool {
    let v = plane.at(x, y);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let n = plane.at((x as isize + dx) as usize, (y as isize + dy) as usize);
            let precedes = dy < 0 || (dy == 0 && dx < 0);
            if (precedes && n >= v) || (!precedes && n > v) {
                return false;
            }
        }
    }
    true
}

pub fn detect_harris(image: &Image, params: &HarrisParams) -> Result<Vec<Keypoint>> {
    params.validate()?;
    if image.width() < 3 || image.height() < 3 || image.is_constant() {
        return Ok(Vec::new());
    }
    let response = harris_response(image, params);
    let max = response.max();
    if !(max > 0.0) {
        return Ok(Vec::new());
    }
    let threshold = params.threshold_rel * max;

    let mut points = Vec::new();
    for y in 1..image.height() - 1 {
        for x in 1..image.width() - 1 {
            let r = response.at(x, y);
            if r >= threshold && r > 0.0 && is_local_max(&response, x, y) {
                points.push(Keypoint {
                    x: x as f32,
                    y: y as f32,
                    scale: DESCRIPTOR_BASE_SCALE,
                    orientation: 0.0,
                    response: r,
                });
            }
        }
    }
    // Stable sort keeps raster order among equal responses.
    points.sort_by(|a, b| b.response.total_cmp(&a.response));
    points.truncate(params.max_points);
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_corners() {
        let img = Image::constant(64, 64, 0.5);
        assert!(detect_harris(&img, &HarrisParams::default()).unwrap().is_empty());
    }

    #[test]
    fn rejects_out_of_range_k() {
        let img = Image::constant(32, 32, 0.5);
        let params = HarrisParams {
            k: 0.2,
            ..Default::default()
        };
        assert!(detect_harris(&img, &params).is_err());
    }

    #[test]
    fn centred_square_has_four_corners() {
        let img = Image::from_fn(64, 64, |x, y| {
            if (22..42).contains(&x) && (22..42).contains(&y) {
                1.0
            } else {
                0.0
            }
        });
        let kps = detect_harris(&img, &HarrisParams::default()).unwrap();
        assert_eq!(kps.len(), 4, "{kps:?}");
        // Corners of the square lie on pixel boundaries.
        let corners = [(21.5, 21.5), (41.5, 21.5), (21.5, 41.5), (41.5, 41.5)];
        for (cx, cy) in corners {
            assert!(
                kps.iter().any(|k| (k.x - cx).hypot(k.y - cy) <= 2.0),
                "no keypoint near ({cx}, {cy}): {kps:?}"
            );
        }
    }

    #[test]
    fn caps_and_sorts() {
        let img = Image::from_fn(64, 64, |x, y| (((x / 8) + (y / 8)) % 2) as f32);
        let params = HarrisParams {
            max_points: 10,
            ..Default::default()
        };
        let kps = detect_harris(&img, &params).unwrap();
        assert_eq!(kps.len(), 10);
        assert!(kps.windows(2).all(|w| w[0].response >= w[1].response));
    }
}
