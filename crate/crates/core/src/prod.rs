//! Weak linear production ranker that creates the logged display order.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::letor::{Dataset, Query};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearRanker {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearRanker {
    pub fn zeros(dim: usize) -> Self {
        LinearRanker {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, features: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }

    /// Text form: feature count, then the weights on one line, then the bias.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.weights.len());
        let ws: Vec<String> = self.weights.iter().map(|w| format!("{w:?}")).collect();
        let _ = writeln!(out, "{}", ws.join(" "));
        let _ = writeln!(out, "{:?}", self.bias);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |line: usize, message: &str| Error::Parse {
            line,
            message: message.to_string(),
        };
        let dim: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| bad(1, "expected feature count"))?;
        let weights: Vec<f64> = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(2, "bad weight value"))?;
        if weights.len() != dim {
            return Err(bad(2, "weight count does not match feature count"));
        }
        let bias = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| bad(3, "expected bias"))?;
        Ok(LinearRanker { weights, bias })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProdTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
}

impl Default for ProdTrainConfig {
    fn default() -> Self {
        ProdTrainConfig {
            epochs: 5,
            learning_rate: 0.01,
            regularization: 1e-3,
        }
    }
}

/// Fraction of label-discordant pairs ordered correctly; score ties count half.
pub fn pairwise_accuracy(ranker: &LinearRanker, dataset: &Dataset) -> f64 {
    let (mut good, mut total) = (0.0, 0usize);
    for q in &dataset.queries {
        let scores: Vec<f64> = q.documents.iter().map(|d| ranker.score(&d.features)).collect();
        for (i, di) in q.documents.iter().enumerate() {
            for (j, dj) in q.documents.iter().enumerate() {
                if di.label > dj.label {
                    total += 1;
                    if scores[i] > scores[j] {
                        good += 1.0;
                    } else if scores[i] == scores[j] {
                        good += 0.5;
                    }
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        good / total as f64
    }
}

/// Pairwise hinge-loss linear ranker trained by stochastic subgradient descent
/// over within-query label-discordant pairs.
///
/// Falls back to the zero ranker if training ends with a lower pairwise
/// accuracy on the sample than the zero ranker's.
pub fn train_prod(sample: &Dataset, config: &ProdTrainConfig, seed: u64) -> Result<LinearRanker> {
    if sample.is_empty() || sample.num_documents() == 0 {
        return Err(Error::Training("empty production-ranker sample".into()));
    }
    let dim = sample.feature_dim;
    let mut pairs: Vec<(&[f64], &[f64])> = Vec::new();
    for q in &sample.queries {
        for di in &q.documents {
            for dj in &q.documents {
                if di.label > dj.label {
                    pairs.push((&di.features, &dj.features));
                }
            }
        }
    }
    let mut ranker = LinearRanker::zeros(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diff = vec![0.0; dim];
    for _ in 0..config.epochs {
        pairs.shuffle(&mut rng);
        for (better, worse) in &pairs {
            for (d, (a, b)) in diff.iter_mut().zip(better.iter().zip(worse.iter())) {
                *d = a - b;
            }
            let margin: f64 = ranker.weights.iter().zip(&diff).map(|(w, d)| w * d).sum();
            let shrink = 1.0 - config.learning_rate * config.regularization;
            for (w, d) in ranker.weights.iter_mut().zip(&diff) {
                *w *= shrink;
                if margin < 1.0 {
                    *w += config.learning_rate * d;
                }
            }
        }
    }
    let zero = LinearRanker::zeros(dim);
    if pairwise_accuracy(&ranker, sample) < pairwise_accuracy(&zero, sample) {
        return Ok(zero);
    }
    Ok(ranker)
}

/// A query's documents in display order.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub qid: String,
    /// `order[p]` is the original (0-based) index of the document shown at position `p`.
    pub order: Vec<usize>,
    /// Feature rows in display order.
    pub features: Vec<Vec<f64>>,
    /// Labels in display order.
    pub labels: Vec<u32>,
}

impl RankedList {
    /// Keeps the query's own document order.
    pub fn identity(query: &Query) -> Self {
        RankedList {
            qid: query.qid.clone(),
            order: (0..query.documents.len()).collect(),
            features: query.documents.iter().map(|d| d.features.clone()).collect(),
            labels: query.labels(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Display order as 1-based original document indices.
    pub fn one_based(&self) -> Vec<usize> {
        self.order.iter().map(|i| i + 1).collect()
    }

    /// The first `k` displayed documents.
    pub fn truncated(&self, k: usize) -> RankedList {
        let k = k.min(self.len());
        RankedList {
            qid: self.qid.clone(),
            order: self.order[..k].to_vec(),
            features: self.features[..k].to_vec(),
            labels: self.labels[..k].to_vec(),
        }
    }
}

/// Sorts by descending score; exact ties are broken by a shuffle seeded with `tie_seed`.
pub fn rank_by_scores(scores: &[f64], tie_seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(tie_seed);
    let keys: Vec<u64> = scores.iter().map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(keys[a].cmp(&keys[b]))
            .then(a.cmp(&b))
    });
    order
}

pub fn rank(ranker: &LinearRanker, query: &Query, tie_seed: u64) -> Result<RankedList> {
    if let Some(d) = query
        .documents
        .iter()
        .find(|d| d.features.len() != ranker.dim())
    {
        return Err(Error::shape(
            "rank",
            format!(
                "document has {} features, ranker expects {}",
                d.features.len(),
                ranker.dim()
            ),
        ));
    }
    let scores: Vec<f64> = query
        .documents
        .iter()
        .map(|d| ranker.score(&d.features))
        .collect();
    let order = rank_by_scores(&scores, tie_seed);
    Ok(RankedList {
        qid: query.qid.clone(),
        features: order
            .iter()
            .map(|&i| query.documents[i].features.clone())
            .collect(),
        labels: order.iter().map(|&i| query.documents[i].label).collect(),
        order,
    })
}

/// Ranks every query; the tie seed of query `i` is `tie_seed + i`.
pub fn rank_dataset(ranker: &LinearRanker, dataset: &Dataset, tie_seed: u64) -> Result<Vec<RankedList>> {
    dataset
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| rank(ranker, q, tie_seed.wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::letor::{generate_synthetic, Document, GenConfig};
    use proptest::prelude::*;

    fn query(features: &[f64]) -> Query {
        Query {
            qid: "q".into(),
            documents: features
                .iter()
                .map(|&f| Document {
                    features: vec![f],
                    label: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn rank_sorts_descending_one_based() {
        let r = LinearRanker {
            weights: vec![1.0],
            bias: 0.0,
        };
        let list = rank(&r, &query(&[0.1, 0.9, 0.5]), 0).unwrap();
        assert_eq!(list.one_based(), vec![2, 3, 1]);
        assert_eq!(list.features, vec![vec![0.9], vec![0.5], vec![0.1]]);
    }

    #[test]
    fn zero_ranker_gives_seeded_shuffle() {
        let q = query(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let z = LinearRanker::zeros(1);
        let a = rank(&z, &q, 11).unwrap();
        assert_eq!(a, rank(&z, &q, 11).unwrap());
        let mut sorted = a.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        let differs = (0..20).any(|s| rank(&z, &q, s).unwrap().order != a.order);
        assert!(differs);
    }

    #[test]
    fn singleton_and_dimension_mismatch() {
        let r = LinearRanker::zeros(1);
        assert_eq!(rank(&r, &query(&[3.0]), 0).unwrap().one_based(), vec![1]);
        let wide = LinearRanker::zeros(2);
        assert!(matches!(rank(&wide, &query(&[3.0]), 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn separable_data_is_learned() {
        let cfg = GenConfig {
            n_queries: 60,
            n_features: 1,
            ..GenConfig::default()
        };
        let data = generate_synthetic(&cfg, 2).unwrap();
        let split = data.split(&[30, 30]).unwrap();
        let r = train_prod(&split[0], &ProdTrainConfig::default(), 0).unwrap();
        assert!(pairwise_accuracy(&r, &split[1]) > 0.95);
    }

    #[test]
    fn zero_epochs_and_determinism() {
        let data = generate_synthetic(
            &GenConfig {
                n_queries: 5,
                ..GenConfig::default()
            },
            0,
        )
        .unwrap();
        let none = ProdTrainConfig {
            epochs: 0,
            ..ProdTrainConfig::default()
        };
        assert_eq!(train_prod(&data, &none, 1).unwrap(), LinearRanker::zeros(data.feature_dim));
        let cfg = ProdTrainConfig::default();
        let a = train_prod(&data, &cfg, 7).unwrap();
        assert_eq!(a, train_prod(&data, &cfg, 7).unwrap());
        assert!(pairwise_accuracy(&a, &data) >= 0.5);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let empty = Dataset::empty(4);
        assert!(matches!(
            train_prod(&empty, &ProdTrainConfig::default(), 0),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn weights_text_round_trip() {
        let r = LinearRanker {
            weights: vec![0.25, -3.5e-7, 1.0],
            bias: 0.5,
        };
        assert_eq!(r.to_text(), "3\n0.25 -3.5e-7 1.0\n0.5\n");
        assert_eq!(LinearRanker::from_text(&r.to_text()).unwrap(), r);
        assert!(LinearRanker::from_text("2\n1.0\n0.0\n").is_err());
    }

    proptest! {
        #[test]
        fn order_is_permutation_and_monotone(
            scores in prop::collection::vec(-3i32..3, 1..12),
            bump_at in 0usize..12,
            seed in 0u64..100,
        ) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let order = rank_by_scores(&scores, seed);
            let mut sorted = order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..scores.len()).collect::<Vec<_>>());

            let j = bump_at % scores.len();
            let mut bumped = scores.clone();
            bumped[j] += 1.0;
            let pos = |o: &[usize]| o.iter().position(|&i| i == j).unwrap();
            prop_assert!(pos(&rank_by_scores(&bumped, seed)) <= pos(&order));
        }
    }
}
