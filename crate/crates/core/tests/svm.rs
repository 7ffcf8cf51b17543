use bovw::kernels::{KernelKind, KernelMatrix};
use bovw::svm::{ova_train, predict, smo_train, SmoParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear_gram(points: &[[f64; 2]]) -> KernelMatrix {
    let n = points.len();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = points[i][0] * points[j][0] + points[i][1] * points[j][1];
        }
    }
    KernelMatrix::from_values(n, v, KernelKind::Intersection).unwrap()
}

fn linear_row(train: &[[f64; 2]], x: [f64; 2]) -> Vec<f64> {
    train.iter().map(|p| p[0] * x[0] + p[1] * x[1]).collect()
}

fn two_clouds(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 2]>, Vec<i8>) {
    let mut pts = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        pts.push([s * 2.0 + rng.random_range(-1.2..1.2), s * 1.0 + rng.random_range(-1.2..1.2)]);
        y.push(s as i8);
    }
    (pts, y)
}

#[test]
fn duplicating_training_points_keeps_decisions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (pts, y) = two_clouds(&mut rng, 30);
    let params = SmoParams {
        c: 1.0,
        tol: 1e-6,
        max_iter: 0,
    };
    let single = smo_train(&linear_gram(&pts), &y, &params).unwrap();
    let doubled_pts: Vec<[f64; 2]> = pts.iter().chain(&pts).copied().collect();
    let doubled_y: Vec<i8> = y.iter().chain(&y).copied().collect();
    // Doubling every point doubles the loss term, so halve C to keep the same optimum.
    let doubled = smo_train(&linear_gram(&doubled_pts), &doubled_y, &SmoParams { c: 0.5, ..params }).unwrap();
    for _ in 0..50 {
        let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let a = single.decision(&linear_row(&pts, x));
        let b = doubled.decision(&linear_row(&doubled_pts, x));
        assert!((a - b).abs() <= 1e-3, "{a} vs {b}");
    }
}

#[test]
fn duplicates_at_same_c_keep_separable_decisions() {
    // On separable data with a large C the hard-margin solution is unique
    // and unaffected by repeating points.
    let pts = vec![[2.0, 1.0], [3.0, 2.5], [2.5, -0.5], [-2.0, -1.0], [-3.0, 0.5], [-1.5, -2.0]];
    let y = vec![1, 1, 1, -1, -1, -1];
    let params = SmoParams {
        c: 1e3,
        tol: 1e-6,
        max_iter: 0,
    };
    let single = smo_train(&linear_gram(&pts), &y, &params).unwrap();
    let dp: Vec<[f64; 2]> = pts.iter().chain(&pts).copied().collect();
    let dy: Vec<i8> = y.iter().chain(&y).copied().collect();
    let doubled = smo_train(&linear_gram(&dp), &dy, &params).unwrap();
    for x in [[0.3, 0.1], [1.0, -1.0], [-0.5, 2.0], [4.0, 4.0]] {
        let a = single.decision(&linear_row(&pts, x));
        let b = doubled.decision(&linear_row(&dp, x));
        assert!((a - b).abs() <= 1e-3, "{a} vs {b}");
    }
}

#[test]
fn two_class_models_are_near_negations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (pts, y) = two_clouds(&mut rng, 40);
    let gram = linear_gram(&pts);
    let labels: Vec<usize> = y.iter().map(|&s| if s > 0 { 0 } else { 1 }).collect();
    let params = SmoParams {
        c: 1.0,
        tol: 1e-6,
        max_iter: 0,
    };
    let m = ova_train(&gram, &labels, &["pos".into(), "neg".into()], &params).unwrap();
    for i in 0..gram.n {
        let a = m.models[0].decision(gram.row(i));
        let b = m.models[1].decision(gram.row(i));
        assert!((a + b).abs() <= 1e-3, "row {i}: {a} vs {b}");
    }
}

#[test]
fn constraints_hold_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        let n = rng.random_range(10..60);
        let (pts, y) = two_clouds(&mut rng, n);
        let c = [0.1, 1.0, 10.0][trial % 3];
        let params = SmoParams {
            c,
            tol: 1e-3,
            max_iter: 0,
        };
        let gram = linear_gram(&pts);
        let m = smo_train(&gram, &y, &params).unwrap();
        assert!(m.converged);
        assert!(m.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let eq: f64 = m.alpha.iter().zip(&y).map(|(a, &s)| a * s as f64).sum();
        assert!(eq.abs() <= 1e-6, "Σ α y = {eq}");
        // Margin violations only at the upper bound.
        for i in 0..n {
            let margin = y[i] as f64 * m.decision(gram.row(i));
            if margin < 1.0 - 1e-2 {
                assert!((m.alpha[i] - c).abs() <= 1e-9, "violator {i} has α {}", m.alpha[i]);
            }
        }
    }
}

#[test]
fn training_order_does_not_change_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (pts, y) = two_clouds(&mut rng, 24);
    let params = SmoParams {
        c: 1.0,
        tol: 1e-6,
        max_iter: 0,
    };
    let a = smo_train(&linear_gram(&pts), &y, &params).unwrap();
    let b = smo_train(&linear_gram(&pts), &y, &params).unwrap();
    assert_eq!(a, b);
    let order: Vec<usize> = (0..pts.len()).rev().collect();
    let rp: Vec<[f64; 2]> = order.iter().map(|&i| pts[i]).collect();
    let ry: Vec<i8> = order.iter().map(|&i| y[i]).collect();
    let r = smo_train(&linear_gram(&rp), &ry, &params).unwrap();
    for _ in 0..30 {
        let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let da = a.decision(&linear_row(&pts, x));
        let dr = r.decision(&linear_row(&rp, x));
        assert!((da - dr).abs() <= 1e-3);
    }
}

#[test]
fn training_point_predicts_its_class_and_rescaling_keeps_argmax() {
    let centres = [[0.0, 6.0], [6.0, 0.0], [-6.0, -6.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..10 {
            pts.push([centre[0] + rng.random_range(-1.0..1.0), centre[1] + rng.random_range(-1.0..1.0)]);
            labels.push(c);
        }
    }
    // Gaussian kernel so the three classes are separable one-vs-all.
    let n = pts.len();
    let k = |a: [f64; 2], b: [f64; 2]| (-0.05 * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))).exp();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = k(pts[i], pts[j]);
        }
    }
    let gram = KernelMatrix::from_values(n, v, KernelKind::Rbf { gamma: 0.05 }).unwrap();
    let classes: Vec<String> = (0..3).map(|c| format!("c{c}")).collect();
    let m = ova_train(&gram, &labels, &classes, &SmoParams::default()).unwrap();
    for i in 0..n {
        let p = predict(&m, gram.row(i)).unwrap();
        assert_eq!(p.class, labels[i]);
        let scaled: Vec<f64> = p.scores.iter().map(|s| 3.5 * s).collect();
        let arg = (0..3).fold(0, |b, c| if scaled[c] > scaled[b] { c } else { b });
        assert_eq!(arg, p.class);
    }
}
