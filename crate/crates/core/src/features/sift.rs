//! SIFT-style 4x4x8 gradient-histogram descriptor and dominant orientation.
//!
//! The descriptor samples a 16x16 grid whose spacing grows linearly with the
//! keypoint scale (one pixel at the base scale of 1.6). Gradients are taken
//! along the rotated grid axes, so the whole construction turns with the
//! keypoint orientation.

use std::f32::consts::TAU;

use super::{Descriptor, Keypoint, DESCRIPTOR_BASE_SCALE, DESCRIPTOR_LEN};
use crate::dataset::Image;

const GRID: usize = 16;
const CELLS: usize = 4;
const ORIENT_BINS: usize = 8;
const CLAMP: f32 = 0.2;
const ORIENT_HIST_BINS: usize = 36;
const ORIENT_RADIUS: isize = 7;
/// Gaussian window of the orientation histogram, in grid samples.
const ORIENT_SIGMA: f32 = 1.5 * DESCRIPTOR_BASE_SCALE;

#[inline]
fn spacing(kp: &Keypoint) -> f32 {
    kp.scale / DESCRIPTOR_BASE_SCALE
}

/// Whether the unrotated descriptor window `[x − 8s, x + 8s]` (with `s` the
/// grid spacing) lies inside `[0, W] x [0, H]`. Samples that fall outside after
/// rotation are read with edge replication.
pub fn has_support(image: &Image, kp: &Keypoint) -> bool {
    let half = (GRID / 2) as f32 * spacing(kp);
    let (w, h) = (image.width() as f32, image.height() as f32);
    kp.x - half >= 0.0 && kp.x + half <= w && kp.y - half >= 0.0 && kp.y + half <= h
}

/// Peak of a Gaussian-weighted 36-bin gradient-orientation histogram, in `[0, 2π)`.
pub fn dominant_orientation(image: &Image, kp: &Keypoint) -> f32 {
    let step = spacing(kp);
    let mut hist = [0.0f32; ORIENT_HIST_BINS];
    for dy in -ORIENT_RADIUS..=ORIENT_RADIUS {
        for dx in -ORIENT_RADIUS..=ORIENT_RADIUS {
            let r2 = (dx * dx + dy * dy) as f32;
            if r2 > (ORIENT_RADIUS * ORIENT_RADIUS) as f32 {
                continue;
            }
            let px = kp.x + dx as f32 * step;
            let py = kp.y + dy as f32 * step;
            let gx = 0.5 * (image.sample(px + step, py) - image.sample(px - step, py));
            let gy = 0.5 * (image.sample(px, py + step) - image.sample(px, py - step));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let weight = (-r2 / (2.0 * ORIENT_SIGMA * ORIENT_SIGMA)).exp();
            // Bins are centred on multiples of the bin width; votes split linearly.
            let pos = gy.atan2(gx).rem_euclid(TAU) / TAU * ORIENT_HIST_BINS as f32;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % ORIENT_HIST_BINS;
            hist[lo] += weight * mag * (1.0 - frac);
            hist[(lo + 1) % ORIENT_HIST_BINS] += weight * mag * frac;
        }
    }

    // Two passes of a circular [1 4 6 4 1] / 16 smoother.
    for _ in 0..2 {
        let prev = hist;
        for i in 0..ORIENT_HIST_BINS {
            let at = |o: isize| prev[(i as isize + o).rem_euclid(ORIENT_HIST_BINS as isize) as usize];
            hist[i] = (at(-2) + at(2) + 4.0 * (at(-1) + at(1)) + 6.0 * at(0)) / 16.0;
        }
    }

    let (peak, &peak_val) = hist
        .iter()
        .enumerate()
        .fold((0, &f32::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    if peak_val <= 0.0 {
        return 0.0;
    }
    let left = hist[(peak + ORIENT_HIST_BINS - 1) % ORIENT_HIST_BINS];
    let right = hist[(peak + 1) % ORIENT_HIST_BINS];
    let denom = left - 2.0 * peak_val + right;
    let offset = if denom.abs() > f32::EPSILON {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let angle = (peak as f32 + offset) * TAU / ORIENT_HIST_BINS as f32;
    angle.rem_euclid(TAU)
}

/// Computes the descriptor at `kp` using `kp.orientation` as the reference
/// direction. Returns `None` when the sample grid does not fit in the image.
pub fn describe_sift(image: &Image, kp: &Keypoint) -> Option<Descriptor> {
    if !has_support(image, kp) {
        return None;
    }
    let step = spacing(kp);
    let (sin, cos) = kp.orientation.sin_cos();
    let (rx, ry) = (cos * step, sin * step);
    let (ux, uy) = (-sin * step, cos * step);
    let half = (GRID as f32 - 1.0) / 2.0;
    let window_sigma = GRID as f32 / 2.0;

    let mut hist = [0.0f32; DESCRIPTOR_LEN];
    for i in 0..GRID {
        for j in 0..GRID {
            let (u, v) = (j as f32 - half, i as f32 - half);
            let px = kp.x + u * rx + v * ux;
            let py = kp.y + u * ry + v * uy;
            let gu = 0.5 * (image.sample(px + rx, py + ry) - image.sample(px - rx, py - ry));
            let gv = 0.5 * (image.sample(px + ux, py + uy) - image.sample(px - ux, py - uy));
            let mag = gu.hypot(gv);
            if mag == 0.0 {
                continue;
            }
            let weight = (-(u * u + v * v) / (2.0 * window_sigma * window_sigma)).exp();
            let angle = gv.atan2(gu).rem_euclid(TAU);

            // Trilinear vote over (cell row, cell column, orientation bin).
            let cx = (j as f32 + 0.5) / (GRID / CELLS) as f32 - 0.5;
            let cy = (i as f32 + 0.5) / (GRID / CELLS) as f32 - 0.5;
            let ob = angle / TAU * ORIENT_BINS as f32;
            let (cx0, cy0, ob0) = (cx.floor(), cy.floor(), ob.floor());
            let (fx, fy, fo) = (cx - cx0, cy - cy0, ob - ob0);
            let value = weight * mag;
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                let row = cy0 as isize + dy;
                if !(0..CELLS as isize).contains(&row) {
                    continue;
                }
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let col = cx0 as isize + dx;
                    if !(0..CELLS as isize).contains(&col) {
                        continue;
                    }
                    for (d_o, wo) in [(0, 1.0 - fo), (1, fo)] {
                        let bin = (ob0 as usize + d_o) % ORIENT_BINS;
                        let idx = (row as usize * CELLS + col as usize) * ORIENT_BINS + bin;
                        hist[idx] += value * wy * wx * wo;
                    }
                }
            }
        }
    }
    Some(normalize_clamped(hist))
}

/// L2-normalises and clamps at 0.2 with a unit norm afterwards. This is the
/// fixed point of alternately clamping and re-normalising: the largest `k`
/// entries sit at the clamp and the rest share the remaining energy. A
/// histogram with fewer than 25 non-zero bins cannot satisfy both and ends up
/// with equal non-zero entries.
fn normalize_clamped(hist: [f32; DESCRIPTOR_LEN]) -> Descriptor {
    let energy: f64 = hist.iter().map(|&v| (v as f64).powi(2)).sum();
    if energy < 1e-12 {
        return Descriptor::zero();
    }
    let v: Vec<f64> = hist.iter().map(|&x| x as f64 / energy.sqrt()).collect();
    let mut order: Vec<usize> = (0..DESCRIPTOR_LEN).filter(|&i| v[i] > 0.0).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let clamp = CLAMP as f64;
    let mut rest: f64 = order.iter().map(|&i| v[i] * v[i]).sum();
    let mut out = [0.0f32; DESCRIPTOR_LEN];
    for (k, &top) in order.iter().enumerate() {
        let left = 1.0 - clamp * clamp * k as f64;
        if left <= 0.0 {
            break;
        }
        let scale = (left / rest).sqrt();
        if v[top] * scale <= clamp {
            for (r, &i) in order.iter().enumerate() {
                out[i] = if r < k { CLAMP } else { (v[i] * scale) as f32 };
            }
            return Descriptor(out);
        }
        rest -= v[top] * v[top];
    }
    let equal = (1.0 / (order.len() as f64).sqrt()) as f32;
    for &i in &order {
        out[i] = equal;
    }
    Descriptor(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(x: f32, y: f32) -> Keypoint {
        Keypoint {
            x,
            y,
            scale: DESCRIPTOR_BASE_SCALE,
            orientation: 0.0,
            response: 0.0,
        }
    }

    #[test]
    fn constant_patch_gives_zero() {
        let img = Image::constant(40, 40, 0.7);
        let d = describe_sift(&img, &kp(20.0, 20.0)).unwrap();
        assert!(d.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn support_boundaries() {
        let img = Image::constant(16, 16, 0.0);
        assert!(has_support(&img, &kp(8.0, 8.0)));
        assert!(!has_support(&img, &kp(7.0, 8.0)));
        assert!(describe_sift(&img, &kp(2.0, 2.0)).is_none());
    }

    #[test]
    fn ramp_orientation() {
        // Intensity grows with y, so the gradient points down the image (π/2).
        let img = Image::from_fn(40, 40, |_, y| y as f32 / 40.0);
        let theta = dominant_orientation(&img, &kp(20.0, 20.0));
        assert!((theta - std::f32::consts::FRAC_PI_2).abs() < 0.05, "{theta}");
    }

    #[test]
    fn sparse_histogram_keeps_unit_norm() {
        let mut h = [0.0f32; DESCRIPTOR_LEN];
        h[3] = 5.0;
        h[9] = 1.0;
        let d = normalize_clamped(h);
        assert!((d.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dense_histogram_satisfies_clamp() {
        let mut h = [0.01f32; DESCRIPTOR_LEN];
        h[0] = 10.0;
        h[1] = 3.0;
        let d = normalize_clamped(h);
        assert!((d.norm() - 1.0).abs() < 1e-6);
        assert!(d.0.iter().all(|&v| v <= CLAMP + 1e-6));
    }
}
