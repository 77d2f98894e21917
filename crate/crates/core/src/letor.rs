//! LETOR / SVMlight ranking datasets: parsing, serialization, a synthetic
//! generator and query sub-sampling.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Highest relevance grade of the 5-level benchmarks.
pub const DEFAULT_MAX_LABEL: u32 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub features: Vec<f64>,
    pub label: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub qid: String,
    pub documents: Vec<Document>,
}

impl Query {
    pub fn labels(&self) -> Vec<u32> {
        self.documents.iter().map(|d| d.label).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub queries: Vec<Query>,
    pub feature_dim: usize,
    pub max_label: u32,
}

impl Dataset {
    pub fn empty(max_label: u32) -> Self {
        Dataset {
            queries: Vec::new(),
            feature_dim: 0,
            max_label,
        }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn num_documents(&self) -> usize {
        self.queries.iter().map(|q| q.documents.len()).sum()
    }

    /// Splits off consecutive blocks of the given sizes, in order.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<Dataset>> {
        let total: usize = sizes.iter().sum();
        if total > self.queries.len() {
            return Err(Error::Config(format!(
                "cannot split {} queries into blocks totalling {total}",
                self.queries.len()
            )));
        }
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&n| {
                let part = Dataset {
                    queries: self.queries[start..start + n].to_vec(),
                    feature_dim: self.feature_dim,
                    max_label: self.max_label,
                };
                start += n;
                part
            })
            .collect())
    }

    /// Checks the dataset-wide invariants: shared feature dimension, labels in range.
    pub fn validate(&self) -> Result<()> {
        for q in &self.queries {
            if q.qid.is_empty() {
                return Err(Error::Domain("empty qid".into()));
            }
            if q.documents.is_empty() {
                return Err(Error::Domain(format!("query {} has no documents", q.qid)));
            }
            for d in &q.documents {
                if d.features.len() != self.feature_dim {
                    return Err(Error::shape(
                        format!("query {}", q.qid),
                        format!(
                            "document has {} features, dataset has {}",
                            d.features.len(),
                            self.feature_dim
                        ),
                    ));
                }
                if d.label > self.max_label {
                    return Err(Error::Domain(format!(
                        "label {} above maximum {} in query {}",
                        d.label, self.max_label, q.qid
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What to do with a label above the configured maximum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LabelPolicy {
    #[default]
    Reject,
    Clamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParseOptions {
    pub max_label: u32,
    pub label_policy: LabelPolicy,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            max_label: DEFAULT_MAX_LABEL,
            label_policy: LabelPolicy::Reject,
        }
    }
}

struct RawDoc {
    label: u32,
    features: Vec<(usize, f64)>,
}

fn parse_line(line: &str, lineno: usize, opts: &ParseOptions) -> Result<Option<(String, RawDoc)>> {
    let bad = |message: String| Error::Parse {
        line: lineno,
        message,
    };
    let body = line.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let mut tokens = body.split_whitespace();
    let label_tok = tokens.next().ok_or_else(|| bad("missing label".into()))?;
    let label_val: f64 = label_tok
        .parse()
        .map_err(|_| bad(format!("non-numeric label `{label_tok}`")))?;
    if label_val.fract() != 0.0 || label_val < 0.0 {
        return Err(bad(format!("label `{label_tok}` is not a non-negative integer")));
    }
    let mut label = label_val as u32;
    if label > opts.max_label {
        match opts.label_policy {
            LabelPolicy::Reject => {
                return Err(bad(format!(
                    "label {label} above maximum {}",
                    opts.max_label
                )))
            }
            LabelPolicy::Clamp => label = opts.max_label,
        }
    }
    let qid = tokens
        .next()
        .and_then(|t| t.strip_prefix("qid:"))
        .filter(|q| !q.is_empty())
        .ok_or_else(|| bad("missing `qid:<id>` token".into()))?
        .to_string();
    let mut features = Vec::new();
    for tok in tokens {
        let (fid, val) = tok
            .split_once(':')
            .ok_or_else(|| bad(format!("malformed feature `{tok}`")))?;
        let fid: usize = fid
            .parse()
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| bad(format!("bad feature id in `{tok}`")))?;
        let val: f64 = val
            .parse()
            .map_err(|_| bad(format!("non-numeric feature value in `{tok}`")))?;
        features.push((fid, val));
    }
    Ok(Some((qid, RawDoc { label, features })))
}

/// Parses LETOR text: `label qid:<id> <fid>:<val> ... [# comment]` per line.
///
/// Documents are grouped by consecutive qid. Feature ids are 1-based and may be
/// sparse; missing ids become 0.0 and the feature dimension is the largest id seen.
pub fn parse_letor<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<Dataset> {
    let mut groups: Vec<(String, Vec<RawDoc>)> = Vec::new();
    let mut dim = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let Some((qid, doc)) = parse_line(line.trim_end_matches('\r'), i + 1, opts)? else {
            continue;
        };
        dim = doc.features.iter().map(|f| f.0).fold(dim, usize::max);
        match groups.last_mut() {
            Some((last, docs)) if *last == qid => docs.push(doc),
            _ => groups.push((qid, vec![doc])),
        }
    }
    let queries = groups
        .into_iter()
        .map(|(qid, docs)| Query {
            qid,
            documents: docs
                .into_iter()
                .map(|d| {
                    let mut features = vec![0.0; dim];
                    for (fid, v) in d.features {
                        features[fid - 1] = v;
                    }
                    Document {
                        features,
                        label: d.label,
                    }
                })
                .collect(),
        })
        .collect();
    Ok(Dataset {
        queries,
        feature_dim: dim,
        max_label: opts.max_label,
    })
}

pub fn parse_letor_str(text: &str, opts: &ParseOptions) -> Result<Dataset> {
    parse_letor(text.as_bytes(), opts)
}

/// Canonical LETOR text: every feature written densely, ids ascending, no comments.
pub fn serialize_letor(dataset: &Dataset) -> String {
    let mut out = String::new();
    for q in &dataset.queries {
        for d in &q.documents {
            let _ = write!(out, "{} qid:{}", d.label, q.qid);
            for (i, v) in d.features.iter().enumerate() {
                let _ = write!(out, " {}:{v:?}", i + 1);
            }
            out.push('\n');
        }
    }
    out
}

/// Shape of a synthetic ranking dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub n_queries: usize,
    pub docs_per_query: usize,
    pub n_features: usize,
    pub max_label: u32,
    /// Weight λ of the cross-document interaction term in the latent relevance.
    pub context_mix: f64,
    /// Standard deviation of the per-query list centers.
    pub center_scale: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_queries: 1000,
            docs_per_query: 10,
            n_features: 64,
            max_label: DEFAULT_MAX_LABEL,
            context_mix: 0.0,
            center_scale: 2.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_queries == 0 {
            problems.push("n_queries must be positive");
        }
        if self.docs_per_query == 0 {
            problems.push("docs_per_query must be positive");
        }
        if self.n_features == 0 {
            problems.push("n_features must be positive");
        }
        if self.max_label == 0 {
            problems.push("max_label must be positive");
        }
        if !(0.0..=1.0).contains(&self.context_mix) {
            problems.push("context_mix must lie in [0, 1]");
        }
        if !(self.center_scale.is_finite() && self.center_scale >= 0.0) {
            problems.push("center_scale must be finite and non-negative");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

fn unit_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generates a synthetic dataset with graded labels.
///
/// Each query draws a list center `μ ~ N(0, c²I)`, `c = center_scale`, and its documents are
/// `x = μ + N(0, I)`. The latent relevance of a document is
///
/// ```text
/// s = w·x + λ · (v·(x − x̄)) · (u·x̄) · 2
/// ```
///
/// with `w` a positive unit vector, `v`, `u` random unit vectors and `x̄` the
/// list's mean feature vector. At λ = 0 relevance depends on a document alone;
/// for λ > 0 the direction in which `v` matters flips with the list context,
/// which no per-document function can express. Labels are the latent score
/// cut into `max_label + 1` equal-mass quantile bins over the whole dataset.
pub fn generate_synthetic(config: &GenConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.n_features;
    let w: Vec<f64> = {
        let raw: Vec<f64> = (0..h).map(|_| rng.random_range(0.5..1.5)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.into_iter().map(|x| x / norm).collect()
    };
    let v = unit_normal(&mut rng, h);
    let u = unit_normal(&mut rng, h);

    let mut features: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.n_queries);
    let mut latent: Vec<f64> = Vec::with_capacity(config.n_queries * config.docs_per_query);
    for _ in 0..config.n_queries {
        let center: Vec<f64> = (0..h)
            .map(|_| config.center_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let docs: Vec<Vec<f64>> = (0..config.docs_per_query)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mean: Vec<f64> = (0..h)
            .map(|k| docs.iter().map(|d| d[k]).sum::<f64>() / docs.len() as f64)
            .collect();
        let context = dot(&u, &mean);
        for d in &docs {
            let centered: Vec<f64> = d.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let s = dot(&w, d) + config.context_mix * dot(&v, &centered) * context * 2.0;
            latent.push(s);
        }
        features.push(docs);
    }

    let mut sorted = latent.clone();
    sorted.sort_by(f64::total_cmp);
    let bins = config.max_label as usize + 1;
    let cuts: Vec<f64> = (1..bins)
        .map(|b| sorted[(b * sorted.len() / bins).min(sorted.len() - 1)])
        .collect();
    let grade = |s: f64| cuts.iter().filter(|&&c| s >= c).count() as u32;

    let mut latent_iter = latent.into_iter();
    let queries = features
        .into_iter()
        .enumerate()
        .map(|(qi, docs)| Query {
            qid: (qi + 1).to_string(),
            documents: docs
                .into_iter()
                .map(|f| Document {
                    features: f,
                    label: grade(latent_iter.next().expect("latent per document")),
                })
                .collect(),
        })
        .collect();
    Ok(Dataset {
        queries,
        feature_dim: h,
        max_label: config.max_label,
    })
}

/// Uniformly samples `⌈fraction·|queries|⌉` whole queries without replacement,
/// keeping their original relative order.
pub fn sample_fraction(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "sample fraction {fraction} outside (0, 1]"
        )));
    }
    let n = dataset.queries.len();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(Dataset {
        queries: picked.into_iter().map(|i| dataset.queries[i].clone()).collect(),
        feature_dim: dataset.feature_dim,
        max_label: dataset.max_label,
    })
}

/// Per-feature min-max scaling to [0, 1], fitted on one dataset and applied to others.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(dataset: &Dataset) -> Self {
        let h = dataset.feature_dim;
        let mut mins = vec![f64::INFINITY; h];
        let mut maxs = vec![f64::NEG_INFINITY; h];
        for d in dataset.queries.iter().flat_map(|q| &q.documents) {
            for (k, &v) in d.features.iter().enumerate() {
                mins[k] = mins[k].min(v);
                maxs[k] = maxs[k].max(v);
            }
        }
        MinMaxScaler { mins, maxs }
    }

    /// Constant features map to 0; values outside the fitted range are not clipped.
    pub fn transform(&self, dataset: &mut Dataset) {
        for d in dataset.queries.iter_mut().flat_map(|q| &mut q.documents) {
            for (k, v) in d.features.iter_mut().enumerate() {
                let span = self.maxs[k] - self.mins[k];
                *v = if span > 0.0 && span.is_finite() {
                    (*v - self.mins[k]) / span
                } else {
                    0.0
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sparse_line_is_densified_and_comment_dropped() {
        let text = "2 qid:7 1:0.5 3:-1.2 # doc-a\n";
        let d = parse_letor_str(text, &ParseOptions::default()).unwrap();
        assert_eq!(d.feature_dim, 3);
        assert_eq!(d.queries.len(), 1);
        assert_eq!(d.queries[0].qid, "7");
        assert_eq!(
            d.queries[0].documents[0],
            Document {
                label: 2,
                features: vec![0.5, 0.0, -1.2]
            }
        );
    }

    #[test]
    fn empty_input_gives_empty_dataset() {
        let d = parse_letor_str("", &ParseOptions::default()).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.feature_dim, 0);
    }

    #[test]
    fn crlf_and_consecutive_grouping() {
        let text = "1 qid:a 1:1\r\n0 qid:a 2:1\r\n3 qid:b 1:2\r\n2 qid:a 1:3\r\n";
        let d = parse_letor_str(text, &ParseOptions::default()).unwrap();
        let qids: Vec<&str> = d.queries.iter().map(|q| q.qid.as_str()).collect();
        assert_eq!(qids, vec!["a", "b", "a"]);
        assert_eq!(d.queries[0].documents.len(), 2);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let opts = ParseOptions::default();
        for (text, line) in [
            ("1 qid:1 1:0.5\nqid:1 1:0.5\n", 2),
            ("1 1:0.5\n", 1),
            ("1 qid:1 1:abc\n", 1),
            ("\n\n1 qid:1 0:1.0\n", 3),
            ("x qid:1 1:1\n", 1),
        ] {
            match parse_letor_str(text, &opts) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn out_of_range_label_rejected_or_clamped() {
        let text = "7 qid:1 1:1\n";
        assert!(parse_letor_str(text, &ParseOptions::default()).is_err());
        let clamp = ParseOptions {
            label_policy: LabelPolicy::Clamp,
            ..ParseOptions::default()
        };
        let d = parse_letor_str(text, &clamp).unwrap();
        assert_eq!(d.queries[0].documents[0].label, 4);
    }

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let text = "2 qid:7 3:-1.2 1:0.5 # doc-a\n0 qid:7 2:1e-3\n";
        let once = serialize_letor(&parse_letor_str(text, &ParseOptions::default()).unwrap());
        assert_eq!(once, "2 qid:7 1:0.5 2:0.0 3:-1.2\n0 qid:7 1:0.0 2:0.001 3:0.0\n");
        let twice = serialize_letor(&parse_letor_str(&once, &ParseOptions::default()).unwrap());
        assert_eq!(once, twice);
    }

    #[test]
    fn synthetic_is_deterministic_and_shaped() {
        let cfg = GenConfig {
            n_queries: 100,
            docs_per_query: 10,
            context_mix: 0.5,
            ..GenConfig::default()
        };
        let a = generate_synthetic(&cfg, 9).unwrap();
        let b = generate_synthetic(&cfg, 9).unwrap();
        assert_eq!(serialize_letor(&a), serialize_letor(&b));
        assert_eq!(a.len(), 100);
        assert!(a.queries.iter().all(|q| q.documents.len() == 10));
        a.validate().unwrap();
        let c = generate_synthetic(&cfg, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_uses_every_grade() {
        let d = generate_synthetic(&GenConfig::default(), 1).unwrap();
        let mut counts = [0usize; 5];
        for doc in d.queries.iter().flat_map(|q| &q.documents) {
            counts[doc.label as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 2000), "{counts:?}");
    }

    #[test]
    fn univariate_truth_orders_labels_by_single_feature() {
        let cfg = GenConfig {
            n_queries: 50,
            n_features: 1,
            context_mix: 0.0,
            ..GenConfig::default()
        };
        let d = generate_synthetic(&cfg, 4).unwrap();
        for q in &d.queries {
            let mut docs = q.documents.clone();
            docs.sort_by(|a, b| a.features[0].total_cmp(&b.features[0]));
            assert!(docs.windows(2).all(|w| w[0].label <= w[1].label));
        }
    }

    #[test]
    fn bad_gen_config_is_rejected() {
        for cfg in [
            GenConfig {
                n_queries: 0,
                ..GenConfig::default()
            },
            GenConfig {
                n_features: 0,
                ..GenConfig::default()
            },
            GenConfig {
                docs_per_query: 0,
                ..GenConfig::default()
            },
            GenConfig {
                center_scale: -1.0,
                ..GenConfig::default()
            },
        ] {
            assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn sample_fraction_counts_and_identity() {
        let d = generate_synthetic(
            &GenConfig {
                n_queries: 1000,
                docs_per_query: 2,
                n_features: 2,
                ..GenConfig::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(sample_fraction(&d, 1.0, 3).unwrap(), d);
        assert_eq!(sample_fraction(&d, 0.01, 3).unwrap().len(), 10);
        assert_eq!(sample_fraction(&d, 0.0101, 3).unwrap().len(), 11);
        let a = sample_fraction(&d, 0.05, 1).unwrap();
        let b = sample_fraction(&d, 0.05, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, sample_fraction(&d, 0.05, 1).unwrap());
        for f in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(sample_fraction(&d, f, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn min_max_scaler_maps_training_range_to_unit_interval() {
        let mut d = parse_letor_str(
            "1 qid:1 1:2 2:5\n0 qid:1 1:4 2:5\n",
            &ParseOptions::default(),
        )
        .unwrap();
        let s = MinMaxScaler::fit(&d);
        s.transform(&mut d);
        assert_eq!(d.queries[0].documents[0].features, vec![0.0, 0.0]);
        assert_eq!(d.queries[0].documents[1].features, vec![1.0, 0.0]);
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..5).prop_flat_map(|h| {
            prop::collection::vec(
                prop::collection::vec(
                    (0u32..=4, prop::collection::vec(-1e6f64..1e6, h)),
                    1..5,
                ),
                0..5,
            )
            .prop_map(move |qs| Dataset {
                feature_dim: if qs.is_empty() { 0 } else { h },
                max_label: 4,
                queries: qs
                    .into_iter()
                    .enumerate()
                    .map(|(i, docs)| Query {
                        qid: format!("q{i}"),
                        documents: docs
                            .into_iter()
                            .map(|(label, features)| Document { features, label })
                            .collect(),
                    })
                    .collect(),
            })
        })
    }

    proptest! {
        #[test]
        fn parse_serialize_round_trip(d in arb_dataset()) {
            let back = parse_letor_str(&serialize_letor(&d), &ParseOptions::default()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
