use knn_scaling::knn::*;
use knn_scaling::distributions::{make_aligned, sample, Dataset};
use knn_scaling::rng::stream_rng;
use knn_scaling::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn line_dataset(labels: &[u8]) -> Dataset {
    // points at 1, 2, …, n on the first axis; query at 0
    let pts: Vec<f64> = (1..=labels.len()).flat_map(|i| [i as f64, 0.0]).collect();
    Dataset::new(2, pts, labels.to_vec()).unwrap()
}

/// Full sort of every distance; independent of the partial-selection path.
fn oracle_predict(data: &Dataset, x: &[f64], k: usize) -> u8 {
    let mut all: Vec<(f64, usize)> = data
        .rows()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let s: usize = all[..k].iter().map(|&(_, i)| data.labels()[i] as usize).sum();
    u8::from(2 * s >= k)
}

#[test]
fn single_point_predicts_its_label() {
    for y in [0u8, 1] {
        let m = KnnModel::fit(Dataset::new(2, vec![0.3, -0.2], vec![y]).unwrap());
        assert_eq!(m.predict(&[5.0, 5.0], 1).unwrap(), y);
    }
}

#[test]
fn even_split_votes_one() {
    let m = KnnModel::fit(line_dataset(&[1, 0, 0]));
    assert_eq!(m.predict(&[0.0, 0.0], 2).unwrap(), 1);
    let m = KnnModel::fit(line_dataset(&[0, 1, 1]));
    assert_eq!(m.predict(&[0.0, 0.0], 2).unwrap(), 1);
}

#[test]
fn hand_enumerated_vote() {
    let m = KnnModel::fit(line_dataset(&[1, 1, 0, 0, 0]));
    assert_eq!(m.predict(&[0.0, 0.0], 3).unwrap(), 1);
    assert_eq!(m.predict(&[0.0, 0.0], 5).unwrap(), 0);
}

#[test]
fn k_out_of_range() {
    let m = KnnModel::fit(line_dataset(&[1, 0]));
    assert!(matches!(m.predict(&[0.0, 0.0], 0), Err(Error::InvalidArgument(_))));
    assert!(matches!(m.predict(&[0.0, 0.0], 3), Err(Error::InvalidArgument(_))));
    assert!(matches!(m.predict(&[0.0], 1), Err(Error::DimensionMismatch { .. })));
    assert!(m.neighbor_radius(&[0.0, 0.0], 4).is_err());
}

#[test]
fn radius_queries() {
    let data = Dataset::new(1, vec![2.0, 1.0, 3.0], vec![0, 1, 0]).unwrap();
    let m = KnnModel::fit(data);
    assert_eq!(m.neighbor_radius(&[0.0], 2).unwrap(), 2.0);
    assert_eq!(m.neighbor_radius(&[0.0], 4).unwrap(), f64::INFINITY);
    assert_eq!(m.neighbor_radius(&[1.0], 1).unwrap(), 0.0);
    assert_eq!(m.neighbor_indices(&[0.0], 3).unwrap(), vec![1, 0, 2]);
    let v = m.vote_with_radius(&[0.0], 2).unwrap();
    assert_eq!(v.next_radius, 3.0);
    assert_eq!(m.vote_with_radius(&[0.0], 3).unwrap().next_radius, f64::INFINITY);
}

#[test]
fn distance_ties_go_to_lower_index() {
    // two points at equal distance with different labels
    let data = Dataset::new(1, vec![1.0, -1.0, 5.0], vec![0, 1, 1]).unwrap();
    let m = KnnModel::fit(data);
    assert_eq!(m.neighbor_indices(&[0.0], 1).unwrap(), vec![0]);
    assert_eq!(m.predict(&[0.0], 1).unwrap(), 0);
}

#[test]
fn k_equal_n_is_majority_vote() {
    let dist = make_aligned(2.0, 0.5, 6).unwrap();
    let data = sample(&dist, 41, 3).unwrap();
    let majority = u8::from(2 * data.class_counts()[1] >= data.len());
    let m = KnnModel::fit(data);
    let queries = sample(&dist, 50, 4).unwrap();
    assert!(m.predict_batch(queries.points(), 41).unwrap().iter().all(|&p| p == majority));
}

#[test]
fn batch_and_parallel_agree_with_single() {
    let dist = make_aligned(2.0, 0.5, 8).unwrap();
    let m = KnnModel::fit(sample(&dist, 300, 1).unwrap());
    let q = sample(&dist, 200, 2).unwrap();
    let single: Vec<u8> = q.rows().map(|x| m.predict(x, 7).unwrap()).collect();
    assert_eq!(m.predict_batch(q.points(), 7).unwrap(), single);
    assert_eq!(m.par_predict_batch(q.points(), 7).unwrap(), single);
}

#[test]
fn matches_full_sort_oracle() {
    let dist = make_aligned(2.0, 0.5, 5).unwrap();
    for (n, seed) in [(7usize, 1u64), (60, 2), (200, 3)] {
        let data = sample(&dist, n, seed).unwrap();
        let m = KnnModel::fit(data.clone());
        let q = sample(&dist, 100, seed + 100).unwrap();
        for k in [1, 2, 3, n / 2 + 1, n] {
            for x in q.rows() {
                assert_eq!(m.predict(x, k).unwrap(), oracle_predict(&data, x, k));
            }
        }
    }
}

#[test]
fn permutation_does_not_change_predictions() {
    let dist = make_aligned(2.0, 0.5, 6).unwrap();
    let data = sample(&dist, 150, 9).unwrap();
    let mut order: Vec<usize> = (0..150).collect();
    order.shuffle(&mut stream_rng(4));
    let shuffled = data.select(&order).unwrap();
    let (a, b) = (KnnModel::fit(data), KnnModel::fit(shuffled));
    let q = sample(&dist, 200, 10).unwrap();
    for k in [1, 4, 15] {
        assert_eq!(a.predict_batch(q.points(), k).unwrap(), b.predict_batch(q.points(), k).unwrap());
    }
}

#[test]
fn mirror_symmetry_flips_predictions() {
    // negating ζ₁ and flipping labels mirrors the aligned problem onto itself
    let dist = make_aligned(2.0, 0.5, 6).unwrap();
    let data = sample(&dist, 151, 12).unwrap();
    let mirror = |ds: &Dataset, flip: bool| {
        let mut pts = ds.points().to_vec();
        pts.chunks_exact_mut(ds.dim()).for_each(|r| r[0] = -r[0]);
        let labels = ds.labels().iter().map(|&y| if flip { 1 - y } else { y }).collect();
        Dataset::new(ds.dim(), pts, labels).unwrap()
    };
    let q = sample(&dist, 300, 13).unwrap();
    let a = KnnModel::fit(data.clone()).predict_batch(q.points(), 5).unwrap();
    let b = KnnModel::fit(mirror(&data, true))
        .predict_batch(mirror(&q, false).points(), 5)
        .unwrap();
    // k odd, so no vote ties: mirrored predictions are exact complements
    assert!(a.iter().zip(&b).all(|(x, y)| *x == 1 - *y));
}

#[test]
fn resampling_counts() {
    let labels: Vec<u8> = (0..100).map(|i| u8::from(i >= 75)).collect();
    let data = Dataset::new(1, (0..100).map(f64::from).collect(), labels).unwrap();
    let under = resample_balance(&data, ResampleMode::Undersample, 1).unwrap();
    assert_eq!(under.class_counts(), [25, 25]);
    let over = resample_balance(&data, ResampleMode::Oversample, 1).unwrap();
    assert_eq!(over.class_counts(), [75, 75]);
    // oversampled extras are copies of rare-class rows
    assert!(over.rows().skip(100).all(|r| r[0] >= 75.0));
    let balanced = Dataset::new(1, (0..100).map(f64::from).collect(), (0..100).map(|i| (i % 2) as u8).collect()).unwrap();
    assert_eq!(resample_balance(&balanced, ResampleMode::Undersample, 5).unwrap(), balanced);
    let one_class = Dataset::new(1, vec![0.0, 1.0], vec![1, 1]).unwrap();
    assert!(matches!(
        resample_balance(&one_class, ResampleMode::Oversample, 1),
        Err(Error::UnbalancedDegenerate { .. })
    ));
}

#[test]
fn undersample_is_without_replacement() {
    let labels: Vec<u8> = (0..100).map(|i| u8::from(i >= 80)).collect();
    let data = Dataset::new(1, (0..100).map(f64::from).collect(), labels).unwrap();
    let under = resample_balance(&data, ResampleMode::Undersample, 3).unwrap();
    let mut vals: Vec<f64> = under.rows().map(|r| r[0]).collect();
    vals.dedup();
    assert_eq!(vals.len(), 40);
}

#[test]
fn self_test_has_zero_error() {
    let dist = make_aligned(2.0, 0.5, 5).unwrap();
    let one = sample(&dist, 1, 5).unwrap();
    let m = KnnModel::fit(one.clone());
    assert_eq!(m.test_error(1, &one).unwrap(), 0.0);
}

#[test]
fn bayes_classifier_has_zero_excess() {
    let dist = make_aligned(2.0, 0.5, 5).unwrap();
    let test = sample(&dist, 2_000, 5).unwrap();
    let bayes: Vec<u8> = test.rows().map(|x| dist.bayes_at(x).unwrap()).collect();
    assert_eq!(excess_risk_of(&dist, &test, &bayes).unwrap(), 0.0);
}

#[test]
fn excess_risk_mc_is_deterministic() {
    let dist = make_aligned(2.0, 0.5, 6).unwrap();
    let a = excess_risk_mc(&dist, 200, 10, 200, 4, 77).unwrap();
    let b = excess_risk_mc(&dist, 200, 10, 200, 4, 77).unwrap();
    assert_eq!(a, b);
    assert!(a.mean > 0.0 && a.mean < 0.5);
    assert!(excess_risk_mc(&dist, 200, 0, 200, 4, 77).is_err());
    assert!(excess_risk_mc(&dist, 200, 10, 200, 0, 77).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn radius_is_monotone_in_k(seed in 0u64..1000, qx in -2.0f64..2.0) {
        let dist = make_aligned(2.0, 0.5, 4).unwrap();
        let m = KnnModel::fit(sample(&dist, 40, seed).unwrap());
        let x = [qx, 0.1, 0.0, 0.0];
        let radii: Vec<f64> = (1..=41).map(|k| m.neighbor_radius(&x, k).unwrap()).collect();
        prop_assert!(radii.windows(2).all(|w| w[0] <= w[1]));
    }
}
