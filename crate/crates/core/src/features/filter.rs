use crate::dataset::Image;

/// Real-valued single-channel buffer; unlike [`Image`] its values are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_image(image: &Image) -> Self {
        Plane {
            width: image.width(),
            height: image.height(),
            data: image.pixels().to_vec(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Keeps every second pixel in each direction.
    pub fn decimate(&self) -> Plane {
        let width = self.width.div_ceil(2);
        let height = self.height.div_ceil(2);
        let mut out = Plane::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                out.data[y * width + x] = self.at(2 * x, 2 * y);
            }
        }
        out
    }

    pub fn sub(&self, other: &Plane) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Central-difference gradients with replicated borders.
    pub fn gradients(&self) -> (Plane, Plane) {
        let mut gx = Plane::zeros(self.width, self.height);
        let mut gy = Plane::zeros(self.width, self.height);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let i = y as usize * self.width + x as usize;
                gx.data[i] = 0.5 * (self.clamped(x + 1, y) - self.clamped(x - 1, y));
                gy.data[i] = 0.5 * (self.clamped(x, y + 1) - self.clamped(x, y - 1));
            }
        }
        (gx, gy)
    }
}

pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-((i * i) as f32) / denom).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(plane: &Plane, sigma: f32) -> Plane {
    if sigma <= 0.0 {
        return plane.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (plane.width, plane.height);

    let mut tmp = Plane::zeros(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0f32;
            for (k, weight) in kernel.iter().enumerate() {
                acc += weight * plane.clamped(x + k as isize - radius, y);
            }
            tmp.data[y as usize * w + x as usize] = acc;
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0f32;
            for (k, weight) in kernel.iter().enumerate() {
                acc += weight * tmp.clamped(x, y + k as isize - radius);
            }
            out.data[y as usize * w + x as usize] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised() {
        for sigma in [0.5, 1.0, 1.6, 3.3] {
            let k = gaussian_kernel(sigma);
            assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert_eq!(k.len() % 2, 1);
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let p = Plane {
            width: 9,
            height: 7,
            data: vec![0.25; 63],
        };
        let b = gaussian_blur(&p, 2.0);
        assert!(b.data.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn gradient_of_ramp() {
        let p = Plane {
            width: 5,
            height: 3,
            data: (0..15).map(|i| (i % 5) as f32).collect(),
        };
        let (gx, gy) = p.gradients();
        assert_eq!(gx.at(2, 1), 1.0);
        assert_eq!(gx.at(0, 1), 0.5);
        assert_eq!(gy.at(2, 1), 0.0);
    }
}
