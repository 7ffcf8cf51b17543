use bovw::dataset::Image;
use bovw::features::{
    describe_all, detect_dense, detect_dog, detect_harris, DogParams, HarrisParams, Keypoint, DESCRIPTOR_LEN,
};

fn checkerboard(cells: usize, cell: usize, margin: usize) -> Image {
    let side = cells * cell + 2 * margin;
    Image::from_fn(side, side, |x, y| {
        if x < margin || y < margin || x >= side - margin || y >= side - margin {
            return 0.5;
        }
        let (cx, cy) = ((x - margin) / cell, (y - margin) / cell);
        if (cx + cy) % 2 == 0 {
            0.75
        } else {
            0.25
        }
    })
}

/// Analytic corners of the checkerboard: every grid-line crossing strictly inside the board.
fn interior_crossings(cells: usize, cell: usize, margin: usize) -> Vec<(f32, f32)> {
    let mut out = Vec::new();
    for i in 1..cells {
        for j in 1..cells {
            // The step sits between pixels `m + i*cell - 1` and `m + i*cell`.
            let x = (margin + i * cell) as f32 - 0.5;
            let y = (margin + j * cell) as f32 - 0.5;
            out.push((x, y));
        }
    }
    out
}

#[test]
fn harris_counts_checkerboard_crossings() {
    // Junctions along the board's outline also respond; only count the interior.
    let (cells, cell, margin) = (5, 12, 10);
    let img = checkerboard(cells, cell, margin);
    let kps = detect_harris(&img, &HarrisParams::default()).unwrap();
    let crossings = interior_crossings(cells, cell, margin);
    let interior: Vec<&Keypoint> = kps
        .iter()
        .filter(|k| {
            let lo = margin as f32 + cell as f32 / 2.0;
            let hi = (margin + cells * cell) as f32 - cell as f32 / 2.0;
            k.x > lo && k.x < hi && k.y > lo && k.y < hi
        })
        .collect();
    assert_eq!(interior.len(), crossings.len(), "{interior:?}");
    for (cx, cy) in crossings {
        assert!(
            interior.iter().any(|k| (k.x - cx).abs() <= 1.0 && (k.y - cy).abs() <= 1.0),
            "no keypoint at crossing ({cx}, {cy})"
        );
    }
}

#[test]
fn harris_locations_ignore_intensity_shift() {
    // Dyadic grey levels keep the shifted image exactly representable.
    let base = Image::from_fn(64, 64, |x, y| {
        let inside = |x0: usize, y0: usize, s: usize| x >= x0 && x < x0 + s && y >= y0 && y < y0 + s;
        if inside(12, 14, 14) || inside(36, 34, 16) {
            0.625
        } else {
            0.25
        }
    });
    let shifted = Image::from_fn(64, 64, |x, y| base.get(x, y) + 0.125);
    let p = HarrisParams::default();
    let a = detect_harris(&base, &p).unwrap();
    let b = detect_harris(&shifted, &p).unwrap();
    assert!(!a.is_empty());
    let loc = |v: &[Keypoint]| {
        let mut l: Vec<(i64, i64)> = v.iter().map(|k| (k.x.round() as i64, k.y.round() as i64)).collect();
        l.sort_unstable();
        l
    };
    assert_eq!(loc(&a), loc(&b));
}

fn textured(side: usize) -> Image {
    Image::from_fn(side, side, |x, y| {
        let (u, v) = (x as f32, y as f32);
        let blob = |cx: f32, cy: f32, s: f32| (-((u - cx).powi(2) + (v - cy).powi(2)) / (2.0 * s * s)).exp();
        (0.2 + 0.5 * blob(24.0, 28.0, 4.0) + 0.3 * blob(38.0, 36.0, 3.0) + 0.1 * (0.3 * u).sin().abs())
            .clamp(0.0, 1.0)
    })
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn descriptor_survives_quarter_turn() {
    let side = 65;
    let img = textured(side);
    // Pixel (x, y) moves to (y, side-1-x); the centre pixel stays put.
    let rotated = Image::from_fn(side, side, |x, y| img.get(side - 1 - y, x));
    let c = (side / 2) as f32;
    let kp = Keypoint {
        x: c,
        y: c,
        scale: 1.6,
        orientation: 0.0,
        response: 1.0,
    };
    let (_, da) = describe_all(&img, &[kp]);
    let (_, db) = describe_all(&rotated, &[kp]);
    assert_eq!((da.len(), db.len()), (1, 1));
    let cos = cosine(da[0].as_slice(), db[0].as_slice());
    assert!(cos >= 0.8, "cosine {cos}");
}

#[test]
fn descriptors_are_unit_and_clamped() {
    let img = textured(64);
    let kps = detect_dense(&img, 4, 1.6).unwrap();
    let (kept, descs) = describe_all(&img, &kps);
    assert_eq!(kept.len(), descs.len());
    for d in &descs {
        assert_eq!(d.as_slice().len(), DESCRIPTOR_LEN);
        let n = d.norm();
        assert!(n == 0.0 || (n - 1.0).abs() <= 1e-6, "norm {n}");
        assert!(d.as_slice().iter().all(|&v| v >= 0.0));
        // A unit vector with fewer than 25 non-zero entries cannot respect the clamp.
        if d.as_slice().iter().filter(|&&v| v > 0.0).count() >= 25 {
            assert!(d.as_slice().iter().all(|&v| v <= 0.2 + 1e-6));
        }
    }
}

fn blobs(side: usize, factor: f32) -> Image {
    // Continuous scene sampled at pixel centres; `factor` 2 renders the same
    // scene at twice the resolution.
    let spots = [
        (16.0, 18.0, 3.0, 0.7),
        (44.0, 20.0, 4.0, 0.6),
        (28.0, 44.0, 3.5, 0.8),
        (50.0, 48.0, 2.5, 0.5),
        (12.0, 50.0, 3.0, 0.6),
    ];
    Image::from_fn(side, side, |x, y| {
        let u = (x as f32 + 0.5) / factor - 0.5;
        let v = (y as f32 + 0.5) / factor - 0.5;
        let mut val = 0.1;
        for (cx, cy, s, a) in spots {
            val += a * (-((u - cx).powi(2) + (v - cy).powi(2)) / (2.0 * s * s)).exp();
        }
        val.min(1.0)
    })
}

#[test]
fn dog_repeats_under_upsampling() {
    let small = blobs(64, 1.0);
    let large = blobs(128, 2.0);
    let p = DogParams {
        octaves: 3,
        ..DogParams::default()
    };
    let a = detect_dog(&small, &p).unwrap();
    let b = detect_dog(&large, &p).unwrap();
    assert!(!a.is_empty());
    let matched = a
        .iter()
        .filter(|k| {
            let (x, y) = (2.0 * k.x + 0.5, 2.0 * k.y + 0.5);
            b.iter().any(|m| {
                (m.x - x).hypot(m.y - y) <= 3.0 && (m.scale / (2.0 * k.scale)).ln().abs() <= 0.5f32.ln().abs()
            })
        })
        .count();
    let rate = matched as f64 / a.len() as f64;
    assert!(rate >= 0.8, "repeatability {rate} ({matched}/{})", a.len());
}

#[test]
fn detectors_stay_inside_and_sorted() {
    let img = textured(64);
    for kps in [
        detect_harris(&img, &HarrisParams::default()).unwrap(),
        detect_dog(&img, &DogParams::default()).unwrap(),
    ] {
        assert!(kps.windows(2).all(|w| w[0].response >= w[1].response));
        assert!(kps.iter().all(|k| k.x >= 0.0 && k.x < 64.0 && k.y >= 0.0 && k.y < 64.0 && k.scale > 0.0));
    }
    let dense = detect_dense(&img, 5, 1.6).unwrap();
    assert!(dense.windows(2).all(|w| (w[0].y, w[0].x) < (w[1].y, w[1].x)));
}
