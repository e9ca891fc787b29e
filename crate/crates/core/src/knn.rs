//! Exact brute-force k-nearest-neighbor classification.
//!
//! Distances are squared Euclidean internally. Distance ties are broken by
//! ascending training index, so the `k` nearest neighbors of a query are the
//! `k` smallest `(distance², index)` pairs in lexicographic order. The vote
//! predicts 1 when the neighbor labels sum to at least `k/2`.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::distributions::{Dataset, ProductDistribution};
use crate::error::{check_dim, invalid, Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::{pairwise_sum, Estimate};

type Neighbor = (f64, u32);

#[inline]
fn by_distance_then_index(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// A fitted classifier: the training sample itself.
#[derive(Debug, Clone)]
pub struct KnnModel {
    data: Dataset,
}

/// The `k`-NN vote together with the `(k+1)`-th neighbor radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteWithRadius {
    pub prediction: u8,
    pub votes: usize,
    /// `R_(k+1)(x)`, `+∞` when `k = n`.
    pub next_radius: f64,
}

impl KnnModel {
    pub fn fit(data: Dataset) -> Self {
        KnnModel { data }
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(invalid(format!("k must lie in 1..={}, got {k}", self.len())));
        }
        Ok(())
    }

    fn fill_distances(&self, x: &[f64], buf: &mut Vec<Neighbor>) {
        buf.clear();
        buf.extend(
            self.data
                .rows()
                .enumerate()
                .map(|(i, row)| (squared_distance(row, x), i as u32)),
        );
    }

    /// Partitions `buf` so that `buf[..m]` are the `m` nearest neighbors.
    fn partition_nearest(buf: &mut [Neighbor], m: usize) {
        if m < buf.len() {
            buf.select_nth_unstable_by(m, by_distance_then_index);
        }
    }

    fn vote(&self, nearest: &[Neighbor]) -> (u8, usize) {
        let labels = self.data.labels();
        let votes = nearest.iter().filter(|nb| labels[nb.1 as usize] == 1).count();
        (u8::from(2 * votes >= nearest.len()), votes)
    }

    fn predict_with(&self, x: &[f64], k: usize, buf: &mut Vec<Neighbor>) -> u8 {
        self.fill_distances(x, buf);
        Self::partition_nearest(buf, k);
        self.vote(&buf[..k]).0
    }

    pub fn predict(&self, x: &[f64], k: usize) -> Result<u8> {
        check_dim(self.data.dim(), x.len())?;
        self.check_k(k)?;
        Ok(self.predict_with(x, k, &mut Vec::with_capacity(self.len())))
    }

    /// Predictions for every row of `queries` (row-major, `d` columns).
    pub fn predict_batch(&self, queries: &[f64], k: usize) -> Result<Vec<u8>> {
        let d = self.data.dim();
        if !queries.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: queries.len() % d,
            });
        }
        self.check_k(k)?;
        let mut buf = Vec::with_capacity(self.len());
        Ok(queries
            .chunks_exact(d)
            .map(|q| self.predict_with(q, k, &mut buf))
            .collect())
    }

    /// As [`predict_batch`](Self::predict_batch), spread over the rayon pool.
    pub fn par_predict_batch(&self, queries: &[f64], k: usize) -> Result<Vec<u8>> {
        let d = self.data.dim();
        if !queries.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: queries.len() % d,
            });
        }
        self.check_k(k)?;
        let chunk = 64 * d;
        Ok(queries
            .par_chunks(chunk)
            .flat_map_iter(|block| {
                let mut buf = Vec::with_capacity(self.len());
                block
                    .chunks_exact(d)
                    .map(|q| self.predict_with(q, k, &mut buf))
                    .collect::<Vec<_>>()
            })
            .collect())
    }

    /// `k`-NN vote and `R_(k+1)(x)` from a single distance scan.
    pub fn vote_with_radius(&self, x: &[f64], k: usize) -> Result<VoteWithRadius> {
        check_dim(self.data.dim(), x.len())?;
        self.check_k(k)?;
        let mut buf = Vec::with_capacity(self.len());
        self.fill_distances(x, &mut buf);
        Self::partition_nearest(&mut buf, k);
        let (prediction, votes) = self.vote(&buf[..k]);
        let next_radius = if k == self.len() {
            f64::INFINITY
        } else {
            // buf[k] is the (k+1)-th smallest after partitioning at k
            buf[k].0.sqrt()
        };
        Ok(VoteWithRadius {
            prediction,
            votes,
            next_radius,
        })
    }

    /// `R_(k)(x)`, the distance to the `k`-th nearest training point;
    /// `R_(n+1)(x) = +∞`.
    pub fn neighbor_radius(&self, x: &[f64], k: usize) -> Result<f64> {
        check_dim(self.data.dim(), x.len())?;
        let n = self.len();
        if k == n + 1 {
            return Ok(f64::INFINITY);
        }
        self.check_k(k)?;
        let mut buf = Vec::with_capacity(n);
        self.fill_distances(x, &mut buf);
        Self::partition_nearest(&mut buf, k - 1);
        Ok(buf[k - 1].0.sqrt())
    }

    /// Indices of the `k` nearest points, sorted by distance then index.
    pub fn neighbor_indices(&self, x: &[f64], k: usize) -> Result<Vec<usize>> {
        check_dim(self.data.dim(), x.len())?;
        self.check_k(k)?;
        let mut buf = Vec::with_capacity(self.len());
        self.fill_distances(x, &mut buf);
        Self::partition_nearest(&mut buf, k);
        let nearest = &mut buf[..k];
        nearest.sort_unstable_by(by_distance_then_index);
        Ok(nearest.iter().map(|nb| nb.1 as usize).collect())
    }

    /// Misclassification rate on a labeled test set.
    pub fn test_error(&self, k: usize, test: &Dataset) -> Result<f64> {
        check_dim(self.data.dim(), test.dim())?;
        let preds = self.predict_batch(test.points(), k)?;
        let wrong = preds.iter().zip(test.labels()).filter(|(p, y)| p != y).count();
        Ok(wrong as f64 / test.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    /// Keep a random subset of the abundant class, without replacement.
    Undersample,
    /// Add rare-class rows drawn with replacement.
    Oversample,
}

/// Equalizes the two class counts.
///
/// Undersampling keeps every rare-class row and the sampled abundant rows in
/// their original order. Oversampling appends the extra draws after the
/// original rows. An already balanced dataset is returned unchanged.
pub fn resample_balance(data: &Dataset, mode: ResampleMode, seed: u64) -> Result<Dataset> {
    let [c0, c1] = data.class_counts();
    if c0 == 0 || c1 == 0 {
        return Err(Error::UnbalancedDegenerate {
            count0: c0,
            count1: c1,
        });
    }
    if c0 == c1 {
        return Ok(data.clone());
    }
    let (rare, abundant) = if c0 < c1 { (0u8, 1u8) } else { (1u8, 0u8) };
    let of_class = |c: u8| -> Vec<usize> {
        data.labels()
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == c)
            .map(|(i, _)| i)
            .collect()
    };
    let rare_idx = of_class(rare);
    let abundant_idx = of_class(abundant);
    let mut rng = stream_rng(seed);
    let indices = match mode {
        ResampleMode::Undersample => {
            let mut keep: Vec<usize> = index::sample(&mut rng, abundant_idx.len(), rare_idx.len())
                .into_iter()
                .map(|j| abundant_idx[j])
                .chain(rare_idx.iter().copied())
                .collect();
            keep.sort_unstable();
            keep
        }
        ResampleMode::Oversample => {
            let extra = abundant_idx.len() - rare_idx.len();
            (0..data.len())
                .chain((0..extra).map(|_| rare_idx[rng.random_range(0..rare_idx.len())]))
                .collect()
        }
    };
    data.select(&indices)
}

/// Average conditional excess risk `|2η(x) − 1|·1{f(x) ≠ f*(x)}` over `test`.
pub fn excess_risk_of(
    dist: &ProductDistribution,
    test: &Dataset,
    predictions: &[u8],
) -> Result<f64> {
    check_dim(dist.dim(), test.dim())?;
    if predictions.len() != test.len() {
        return Err(invalid("one prediction per test point is required"));
    }
    let terms: Vec<f64> = test
        .rows()
        .zip(predictions)
        .map(|(x, &p)| {
            let eta = dist.signal().eta([x[0], x[1]]);
            let bayes = u8::from(eta >= 0.5);
            if p == bayes {
                0.0
            } else {
                (2.0 * eta - 1.0).abs()
            }
        })
        .collect();
    Ok(pairwise_sum(&terms) / test.len() as f64)
}

/// Outcome of one (train, test) repetition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub test_error: f64,
    pub excess_risk: f64,
}

/// One repetition: fresh training and test samples from the trial's stream.
pub fn run_trial(
    dist: &ProductDistribution,
    n: usize,
    k: usize,
    n_test: usize,
    trial_seed: u64,
) -> Result<TrialOutcome> {
    let mut rng = stream_rng(trial_seed);
    let train = dist.sample_with(n, &mut rng)?;
    let test = dist.sample_with(n_test, &mut rng)?;
    let model = KnnModel::fit(train);
    let preds = model.predict_batch(test.points(), k)?;
    let wrong = preds.iter().zip(test.labels()).filter(|(p, y)| p != y).count();
    Ok(TrialOutcome {
        test_error: wrong as f64 / n_test as f64,
        excess_risk: excess_risk_of(dist, &test, &preds)?,
    })
}

/// Monte Carlo excess risk of the `k`-NN rule over `trials` independent repetitions.
pub fn excess_risk_mc(
    dist: &ProductDistribution,
    n: usize,
    k: usize,
    n_test: usize,
    trials: usize,
    seed: u64,
) -> Result<Estimate> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    if k == 0 || k > n {
        return Err(invalid(format!("k must lie in 1..={n}, got {k}")));
    }
    if n_test == 0 {
        return Err(invalid("n_test must be at least 1"));
    }
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(dist, n, k, n_test, derive_seed(seed, t as u64)))
        .collect::<Result<Vec<_>>>()?;
    let excess: Vec<f64> = outcomes.iter().map(|o| o.excess_risk).collect();
    Ok(Estimate::from_samples(&excess))
}
