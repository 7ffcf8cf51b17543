use std::collections::BTreeSet;
use std::path::PathBuf;

use bovw::clustering::{kmeanspp_indices, lloyd, squared_distance, Matrix};
use bovw::dataset::{identity_set, split_identity_disjoint, ManifestEntry};
use bovw::encoding::{aggregate_rows, conjunction_matrix, tf_histogram, word_grouping, QuantizedImage};
use bovw::kernels::{intersection_kernel, pyramid_match_kernel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn entries(ids: &[u8]) -> Vec<ManifestEntry> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| ManifestEntry {
            image_path: PathBuf::from(format!("img{i}.pgm")),
            class_label: format!("c{}", i % 3),
            identity: format!("id{id}"),
        })
        .collect()
}

fn sparse(values: &[f64]) -> Vec<(u64, f64)> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, v)| (i as u64, *v))
        .collect()
}

proptest! {
    #[test]
    fn split_is_an_identity_disjoint_partition(
        ids in prop::collection::vec(0u8..8, 2..60),
        fraction in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let e = entries(&ids);
        prop_assume!(identity_set(&e).len() >= 2);
        let s = split_identity_disjoint(&e, fraction, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.test.len(), e.len());
        prop_assert!(identity_set(&s.train).is_disjoint(&identity_set(&s.test)));
        let all: BTreeSet<_> = s.train.iter().chain(&s.test).map(|x| x.image_path.clone()).collect();
        prop_assert_eq!(all.len(), e.len());
        prop_assert_eq!(s, split_identity_disjoint(&e, fraction, seed).unwrap());
    }

    #[test]
    fn tf_histogram_sums_to_one(words in prop::collection::vec(0u32..20, 1..200)) {
        let h = tf_histogram(&words, 20).unwrap();
        prop_assert!((h.bins.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn intersection_is_symmetric_and_bounded(
        a in prop::collection::vec(0.0f64..5.0, 30),
        b in prop::collection::vec(0.0f64..5.0, 30),
    ) {
        let (sa, sb) = (sparse(&a), sparse(&b));
        let k = intersection_kernel(&sa, &sb).unwrap();
        prop_assert_eq!(k, intersection_kernel(&sb, &sa).unwrap());
        prop_assert!(k >= 0.0);
        let bound = a.iter().sum::<f64>().min(b.iter().sum::<f64>());
        prop_assert!(k <= bound + 1e-12);
    }

    #[test]
    fn pmk_grows_when_a_point_is_added(
        x in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..30),
        y in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..30),
        extra in (0.0f64..1.0, 0.0f64..1.0),
        level in 0usize..5,
    ) {
        let before = pyramid_match_kernel(&x, &y, level).unwrap();
        let mut more = x.clone();
        more.push(extra);
        prop_assert!(pyramid_match_kernel(&more, &y, level).unwrap() >= before);
    }

    #[test]
    fn conjunction_counts_survive_relabelling(
        points in prop::collection::vec((0u32..6, 0.0f32..50.0, 0.0f32..50.0), 2..40),
        k in 1usize..6,
    ) {
        let words: Vec<u32> = points.iter().map(|p| p.0).collect();
        let positions: Vec<(f32, f32)> = points.iter().map(|p| (p.1, p.2)).collect();
        let q = QuantizedImage { words: words.clone(), positions: positions.clone() };
        let perm = [3u32, 5, 0, 1, 4, 2];
        let relabelled = q.remap(&perm);
        let a = conjunction_matrix(&q, 6, k).unwrap();
        let b = conjunction_matrix(&relabelled, 6, k).unwrap();
        prop_assert_eq!(a.total(), b.total());
        for i in 0..6u32 {
            for j in 0..6u32 {
                prop_assert_eq!(a.get(i, j), b.get(perm[i as usize], perm[j as usize]));
            }
        }
    }

    #[test]
    fn grouping_is_a_partition(
        points in prop::collection::vec((0u32..8, 0.0f32..30.0, 0.0f32..30.0), 2..60),
        threshold in 0.01f64..1.5,
    ) {
        let q = QuantizedImage {
            words: points.iter().map(|p| p.0).collect(),
            positions: points.iter().map(|p| (p.1, p.2)).collect(),
        };
        let rows = aggregate_rows(&[conjunction_matrix(&q, 8, 3).unwrap()], 8);
        let g = word_grouping(&rows, 8, threshold, "p").unwrap();
        prop_assert_eq!(g.groups.len(), 8);
        let used: BTreeSet<u32> = g.groups.iter().copied().collect();
        prop_assert_eq!(used, (0..g.group_count as u32).collect::<BTreeSet<_>>());
        if threshold > 1.0 {
            prop_assert_eq!(g.group_count, 8);
        }
    }

    #[test]
    fn lloyd_inertia_never_rises(seed in any::<u64>(), n in 8usize..60, k in 2usize..6) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let points = Matrix::new(n, 3, data).unwrap();
        let init = points.select(&(0..k).collect::<Vec<_>>());
        let out = lloyd(&points, &init, 100, 1e-6).unwrap();
        prop_assert!(out.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        prop_assert!(out.inertia <= out.inertia_history[0] + 1e-9);
    }

    #[test]
    fn seeding_never_repeats_a_location(seed in any::<u64>(), k in 2usize..10) {
        // Half the rows are exact duplicates of the other half.
        let base: Vec<[f32; 2]> = (0..10).map(|i| [i as f32, (i * i) as f32]).collect();
        let rows: Vec<[f32; 2]> = base.iter().chain(&base).copied().collect();
        let points = Matrix::from_rows(&rows, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked = kmeanspp_indices(&points, k, &mut rng).unwrap();
        for (a, &i) in picked.iter().enumerate() {
            for &j in &picked[..a] {
                prop_assert!(squared_distance(points.row(i), points.row(j)) > 0.0);
            }
        }
    }
}
