//! Dual learning: a ranker trained with inverse-propensity-weighted clicks and
//! a position propensity model trained with inverse-relevance-weighted clicks,
//! each supplying the other's weights. Also the naive click-as-label baseline.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::click::{sample_click_vector, ClickNoiseConfig, PropensityCurve};
use crate::diff::{masked_softmax, Matrix, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::metrics::{mse_propen, MetricReport, QueryMetrics};
use crate::prod::{rank_by_scores, RankedList};
use crate::scorer::{ArchConfig, ListBatch, Scorer, ScorerKind};
use crate::seed::derive_seed;

/// Softmax of raw scores over the unmasked positions of one list.
#[derive(Clone, Debug, PartialEq)]
pub struct ListDistribution {
    /// Zero at masked positions.
    pub probs: Vec<f64>,
}

impl ListDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `p_1 / p_i` for every position.
    pub fn first_ratios(&self) -> Vec<f64> {
        self.probs.iter().map(|p| self.probs[0] / p).collect()
    }
}

pub fn list_distribution(raw_scores: &[f64], mask: Option<&[bool]>) -> Result<ListDistribution> {
    if let Some(m) = mask {
        if m.len() != raw_scores.len() {
            return Err(Error::shape(
                "list_distribution",
                format!("{} scores with a mask of {}", raw_scores.len(), m.len()),
            ));
        }
    }
    if raw_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("raw scores must be finite".into()));
    }
    let probs = masked_softmax(raw_scores, |i| mask.is_none_or(|m| m[i]))
        .ok_or_else(|| Error::EmptyList("every position is masked".into()))?;
    Ok(ListDistribution { probs })
}

/// One free logit per display position; `G = softmax(logits)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityModel {
    pub logits: Vec<f64>,
}

impl PropensityModel {
    /// All-zero logits, i.e. uniform propensities.
    pub fn uniform(list_size: usize) -> Self {
        PropensityModel {
            logits: vec![0.0; list_size],
        }
    }

    pub fn distribution(&self) -> ListDistribution {
        list_distribution(&self.logits, None).expect("finite logits")
    }

    /// Estimated inverse-propensity ratios `G_1 / G_i`.
    pub fn ratios(&self) -> Vec<f64> {
        self.logits.iter().map(|l| (self.logits[0] - l).exp()).collect()
    }

    pub fn to_text(&self) -> String {
        let vals: Vec<String> = self.logits.iter().map(|v| format!("{v:?}")).collect();
        format!("{}\n{}\n", self.logits.len(), vals.join(" "))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let n: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "expected position count".into(),
            })?;
        let logits = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: 2,
                    message: format!("bad logit `{t}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if logits.len() != n || n == 0 {
            return Err(Error::Parse {
                line: 2,
                message: format!("expected {n} logits, found {}", logits.len()),
            });
        }
        Ok(PropensityModel { logits })
    }
}

/// Value of a weighted local loss and its gradient with respect to the
/// logits of the distribution being trained.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalLoss {
    pub value: f64,
    pub logit_grad: Vec<f64>,
}

fn weighted_loss(clicks: &[u8], trained: &ListDistribution, weights: &[f64]) -> LocalLoss {
    let mut value = 0.0;
    let mut total = 0.0;
    for (i, &c) in clicks.iter().enumerate() {
        if c != 0 {
            value -= weights[i] * trained.probs[i].ln();
            total += weights[i];
        }
    }
    let logit_grad = trained
        .probs
        .iter()
        .zip(clicks)
        .zip(weights)
        .map(|((p, &c), w)| total * p - if c != 0 { *w } else { 0.0 })
        .collect();
    LocalLoss { value, logit_grad }
}

fn check_aligned(op: &str, clicks: &[u8], f: &ListDistribution, g: &ListDistribution) -> Result<()> {
    if clicks.len() != f.len() || f.len() != g.len() || f.is_empty() {
        return Err(Error::shape(
            op,
            format!("clicks {}, F {}, G {}", clicks.len(), f.len(), g.len()),
        ));
    }
    Ok(())
}

/// `−Σ_{clicked i} (G_1/G_i)·log F_i`, gradient with respect to the ranker's scores.
pub fn ipw_loss(clicks: &[u8], f: &ListDistribution, g: &ListDistribution) -> Result<LocalLoss> {
    check_aligned("ipw_loss", clicks, f, g)?;
    Ok(weighted_loss(clicks, f, &g.first_ratios()))
}

/// `−Σ_{clicked i} (F_1/F_i)·log G_i`, gradient with respect to the propensity logits.
pub fn irw_loss(clicks: &[u8], f: &ListDistribution, g: &ListDistribution) -> Result<LocalLoss> {
    check_aligned("irw_loss", clicks, f, g)?;
    Ok(weighted_loss(clicks, g, &f.first_ratios()))
}

/// Full-information listwise loss `−Σ_i P(r_i = 1)·log F_i`.
pub fn full_information_loss(f: &ListDistribution, relevance_probs: &[f64]) -> Result<f64> {
    if relevance_probs.len() != f.len() {
        return Err(Error::shape(
            "full_information_loss",
            format!("{} probabilities for {} positions", relevance_probs.len(), f.len()),
        ));
    }
    Ok(-f
        .probs
        .iter()
        .zip(relevance_probs)
        .map(|(p, r)| r * p.ln())
        .sum::<f64>())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub kind: ScorerKind,
    pub arch: ArchConfig,
    pub batch_size: usize,
    pub learning_rate_s: f64,
    pub learning_rate_e: f64,
    pub steps: usize,
    pub list_size: usize,
    pub seed: u64,
    /// Cap on inverse weights; `f64::INFINITY` disables clipping.
    pub clip: f64,
    /// Update the ranker on even steps and the propensity model on odd steps.
    pub alternating: bool,
    /// Replay this many pre-generated impressions per query instead of fresh clicks.
    pub fixed_log: Option<usize>,
    /// History is recorded every `eval_interval` steps (0 disables it).
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ScorerKind::UnivariateMlp,
            arch: ArchConfig::default(),
            batch_size: 64,
            learning_rate_s: 0.1,
            learning_rate_e: 0.1,
            steps: 2000,
            list_size: 10,
            seed: 0,
            clip: 100.0,
            alternating: false,
            fixed_log: None,
            eval_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, curve: &PropensityCurve) -> Result<()> {
        if self.list_size == 0 {
            return Err(Error::Config("list_size must be at least 1".into()));
        }
        if self.list_size > curve.len() {
            return Err(Error::Config(format!(
                "list_size {} exceeds the {}-position propensity curve",
                self.list_size,
                curve.len()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (name, lr) in [
            ("learning_rate_s", self.learning_rate_s),
            ("learning_rate_e", self.learning_rate_e),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.clip.is_nan() || self.clip < 1.0 {
            return Err(Error::Config(format!("clip must be at least 1, got {}", self.clip)));
        }
        if self.fixed_log == Some(0) {
            return Err(Error::Config("fixed_log needs at least one impression per query".into()));
        }
        self.arch.validate(self.kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub loss_s: f64,
    pub loss_e: f64,
    pub mse_propen: f64,
    pub valid_ndcg10: f64,
    pub clipped: u64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("step,loss_s,loss_e,mse_propen,valid_ndcg10,clipped\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{}",
            r.step, r.loss_s, r.loss_e, r.mse_propen, r.valid_ndcg10, r.clipped
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub scorer: Scorer,
    /// `None` for naive training.
    pub propensity: Option<PropensityModel>,
    pub history: Vec<HistoryRow>,
    /// Inverse weights that hit the clipping cap.
    pub clipped: u64,
}

/// Feature rows of `lists` in display order, batched with padding.
fn batch_of(lists: &[&RankedList], dim: usize, list_len: usize) -> Result<ListBatch> {
    let rows: Vec<&[Vec<f64>]> = lists.iter().map(|l| l.features.as_slice()).collect();
    ListBatch::from_lists(&rows, dim, Some(list_len))
}

/// Scores every document of every list and returns the labels re-ranked by score.
pub fn rerank_labels(scorer: &Scorer, lists: &[RankedList], order_seed: u64) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::with_capacity(lists.len());
    for (c, chunk) in lists.chunks(64).enumerate() {
        let refs: Vec<&RankedList> = chunk.iter().collect();
        let longest = refs.iter().map(|l| l.len()).max().unwrap_or(0);
        let batch = batch_of(&refs, scorer.input_dim(), longest)?;
        let scores = scorer.score_batch(&batch, order_seed)?;
        for (b, list) in chunk.iter().enumerate() {
            let s = &scores.row(b)[..list.len()];
            let tie = derive_seed(order_seed, &format!("tie/{}", c * 64 + b));
            let order = rank_by_scores(s, tie);
            out.push(order.iter().map(|&i| list.labels[i]).collect());
        }
    }
    Ok(out)
}

/// Per-query metrics of `scorer` on full candidate lists.
pub fn evaluate(
    scorer: &Scorer,
    lists: &[RankedList],
    max_label: u32,
    order_seed: u64,
    model: &str,
    seed: u64,
) -> Result<MetricReport> {
    let ranked = rerank_labels(scorer, lists, order_seed)?;
    let queries = lists
        .iter()
        .zip(&ranked)
        .map(|(l, r)| QueryMetrics::compute(&l.qid, r, max_label))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        model: model.to_string(),
        seed,
        queries,
        mse_propen: None,
    })
}

/// Metrics of the display order itself (the production ranking).
pub fn evaluate_display_order(lists: &[RankedList], max_label: u32, model: &str, seed: u64) -> Result<MetricReport> {
    let queries = lists
        .iter()
        .map(|l| QueryMetrics::compute(&l.qid, &l.labels, max_label))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        model: model.to_string(),
        seed,
        queries,
        mse_propen: None,
    })
}

fn mean_ndcg10(scorer: &Scorer, lists: &[RankedList], max_label: u32, order_seed: u64) -> Result<f64> {
    if lists.is_empty() {
        return Ok(f64::NAN);
    }
    let r = evaluate(scorer, lists, max_label, order_seed, "", 0)?;
    Ok(r.means()[3])
}

struct ClickSource {
    log: Option<Vec<Vec<Vec<u8>>>>,
}

impl ClickSource {
    fn new(
        train: &[RankedList],
        curve: &PropensityCurve,
        noise: &ClickNoiseConfig,
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let log = match cfg.fixed_log {
            None => None,
            Some(n) => Some(
                train
                    .iter()
                    .map(|l| {
                        (0..n)
                            .map(|_| sample_click_vector(&l.labels, curve, noise, rng))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(ClickSource { log })
    }

    fn draw(
        &self,
        index: usize,
        list: &RankedList,
        curve: &PropensityCurve,
        noise: &ClickNoiseConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<u8>> {
        match &self.log {
            Some(log) => Ok(log[index].choose(rng).expect("non-empty log").clone()),
            None => sample_click_vector(&list.labels, curve, noise, rng),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Dual,
    Naive,
}

/// Jointly trains a ranker (IPW loss) and a propensity model (IRW loss) on
/// clicks simulated over the top `list_size` positions of each training list.
/// `valid` lists are scored in full for the history's validation nDCG@10.
pub fn train_dla(
    train: &[RankedList],
    valid: &[RankedList],
    curve: &PropensityCurve,
    noise: &ClickNoiseConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run(train, valid, curve, noise, cfg, Mode::Dual)
}

/// Same loop with clicks used directly as listwise targets and no propensity model.
pub fn train_naive(
    train: &[RankedList],
    valid: &[RankedList],
    curve: &PropensityCurve,
    noise: &ClickNoiseConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run(train, valid, curve, noise, cfg, Mode::Naive)
}

fn run(
    train: &[RankedList],
    valid: &[RankedList],
    curve: &PropensityCurve,
    noise: &ClickNoiseConfig,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<TrainOutcome> {
    cfg.validate(curve)?;
    noise.validate()?;
    if train.is_empty() {
        return Err(Error::Training("no training queries".into()));
    }
    if let Some(l) = train.iter().find(|l| l.is_empty()) {
        return Err(Error::EmptyList(format!("training query {} has no documents", l.qid)));
    }
    let dim = train[0].features[0].len();
    let n = cfg.list_size;
    let lists: Vec<RankedList> = train.iter().map(|l| l.truncated(n)).collect();
    let truth = curve.inverse_ratios(n);

    let mut scorer = Scorer::init(cfg.kind, dim, &cfg.arch, derive_seed(cfg.seed, "init/scorer"))?;
    let mut prop = ParamStore::new();
    let phi = prop.add("propensity.logits", Matrix::zeros(1, n));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "batches"));
    let clicks_src = ClickSource::new(&lists, curve, noise, cfg, &mut rng)?;
    let eval_seed = derive_seed(cfg.seed, "eval");
    let scale = 1.0 / cfg.batch_size as f64;

    let mut history = Vec::new();
    let mut clipped = 0u64;
    let mut last = (f64::NAN, f64::NAN);
    let record = |step: usize, scorer: &Scorer, prop: &ParamStore, last: (f64, f64), clipped: u64| -> Result<HistoryRow> {
        let ratios = PropensityModel {
            logits: prop.value(phi).as_slice().to_vec(),
        }
        .ratios();
        Ok(HistoryRow {
            step,
            loss_s: last.0,
            loss_e: last.1,
            mse_propen: if mode == Mode::Dual {
                mse_propen(&ratios, &truth)?
            } else {
                f64::NAN
            },
            valid_ndcg10: mean_ndcg10(scorer, valid, noise.max_label, eval_seed)?,
            clipped,
        })
    };

    for step in 0..cfg.steps {
        if cfg.eval_interval > 0 && step % cfg.eval_interval == 0 {
            history.push(record(step, &scorer, &prop, last, clipped)?);
        }
        let picks: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..lists.len()))
            .collect();
        let chosen: Vec<&RankedList> = picks.iter().map(|&i| &lists[i]).collect();
        let batch = batch_of(&chosen, dim, n)?;
        let mut clicks = vec![0u8; cfg.batch_size * n];
        for (b, (&i, l)) in picks.iter().zip(&chosen).enumerate() {
            let c = clicks_src.draw(i, l, curve, noise, &mut rng)?;
            clicks[b * n..b * n + c.len()].copy_from_slice(&c);
        }

        let order_seed = derive_seed(cfg.seed, &format!("order/{step}"));
        let mut tape_s = Tape::new();
        let scores = scorer.forward(&mut tape_s, &batch, order_seed)?;
        let logits = prop.value(phi).as_slice().to_vec();

        let update_s = !cfg.alternating || step % 2 == 0;
        let update_e = mode == Mode::Dual && (!cfg.alternating || step % 2 == 1);

        let mut w_s = vec![0.0; cfg.batch_size * n];
        let mut w_e = vec![0.0; cfg.batch_size * n];
        let score_vals = tape_s.value(scores).clone();
        for b in 0..cfg.batch_size {
            let row = score_vals.row(b);
            for i in 0..n {
                let k = b * n + i;
                if clicks[k] == 0 {
                    continue;
                }
                match mode {
                    Mode::Naive => w_s[k] = 1.0,
                    Mode::Dual => {
                        let g_ratio = (logits[0] - logits[i]).exp();
                        let f_ratio = (row[0] - row[i]).exp();
                        for (w, r) in [(&mut w_s[k], g_ratio), (&mut w_e[k], f_ratio)] {
                            if r > cfg.clip {
                                clipped += 1;
                                *w = cfg.clip;
                            } else {
                                *w = r;
                            }
                        }
                    }
                }
            }
        }

        let loss_s = tape_s.softmax_xent(scores, batch.mask.clone(), w_s, scale)?;
        let loss_s_val = tape_s.value(loss_s)[(0, 0)];
        if update_s {
            tape_s.backward(loss_s)?;
            tape_s.accumulate_param_grads(scorer.params_mut());
        }

        let mut loss_e_val = f64::NAN;
        if mode == Mode::Dual {
            let mut tape_e = Tape::new();
            let p = tape_e.param(&prop, phi);
            let g = tape_e.gather_rows(p, vec![0; cfg.batch_size])?;
            let loss_e = tape_e.softmax_xent(g, batch.mask.clone(), w_e, scale)?;
            loss_e_val = tape_e.value(loss_e)[(0, 0)];
            if update_e {
                tape_e.backward(loss_e)?;
                tape_e.accumulate_param_grads(&mut prop);
            }
        }
        last = (loss_s_val, loss_e_val);

        if update_s {
            scorer.params_mut().sgd_step(cfg.learning_rate_s);
        }
        if update_e {
            prop.sgd_step(cfg.learning_rate_e);
        }
        if !scorer.params().all_finite() || !prop.all_finite() {
            return Err(Error::Training(format!("parameters diverged at step {step}")));
        }
    }
    if cfg.eval_interval > 0 {
        history.push(record(cfg.steps, &scorer, &prop, last, clipped)?);
    }
    let propensity = (mode == Mode::Dual).then(|| PropensityModel {
        logits: prop.value(phi).as_slice().to_vec(),
    });
    Ok(TrainOutcome {
        scorer,
        propensity,
        history,
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::click::perceived_relevance_prob;

    fn dist(p: &[f64]) -> ListDistribution {
        ListDistribution { probs: p.to_vec() }
    }

    #[test]
    fn list_distribution_examples() {
        assert_eq!(list_distribution(&[0.0, 0.0], None).unwrap().probs, vec![0.5, 0.5]);
        let d = list_distribution(&[2f64.ln(), 0.0], None).unwrap();
        assert!((d.probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.probs[1] - 1.0 / 3.0).abs() < 1e-15);
        let m = list_distribution(&[1.0, 5.0, 2.0], Some(&[true, false, true])).unwrap();
        assert_eq!(m.probs[1], 0.0);
        assert!((m.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            list_distribution(&[1.0], Some(&[false])),
            Err(Error::EmptyList(_))
        ));
    }

    #[test]
    fn ipw_and_irw_hand_values() {
        let g = dist(&[0.6, 0.4]);
        let f = dist(&[0.7, 0.3]);
        let v = |l: Result<LocalLoss>| l.unwrap().value;
        assert!((v(ipw_loss(&[1, 0], &f, &g)) - (-(0.7f64).ln())).abs() < 1e-12);
        assert!((v(ipw_loss(&[1, 0], &f, &g)) - 0.3567).abs() < 1e-4);
        assert!((v(ipw_loss(&[0, 1], &f, &g)) - 1.8060).abs() < 1e-4);
        assert!((v(irw_loss(&[1, 0], &f, &g)) - 0.5108).abs() < 1e-4);
        let exact = -(0.7 / 0.3) * 0.4f64.ln();
        assert!((v(irw_loss(&[0, 1], &f, &g)) - exact).abs() < 1e-12);
        assert!((exact - 2.1380).abs() < 1e-4);
        let none = ipw_loss(&[0, 0], &f, &g).unwrap();
        assert_eq!(none.value, 0.0);
        assert!(none.logit_grad.iter().all(|&x| x == 0.0));
        assert_eq!(irw_loss(&[0, 0], &f, &g).unwrap().value, 0.0);
        assert!(matches!(ipw_loss(&[1], &f, &g), Err(Error::Shape { .. })));
    }

    #[test]
    fn local_loss_gradient_matches_finite_differences() {
        let logits = [0.3, -0.2, 0.9, 0.1];
        let g = dist(&[0.4, 0.3, 0.2, 0.1]);
        let clicks = [1, 0, 1, 1];
        let f = list_distribution(&logits, None).unwrap();
        let analytic = ipw_loss(&clicks, &f, &g).unwrap().logit_grad;
        for j in 0..4 {
            let mut up = logits;
            let mut dn = logits;
            up[j] += 1e-6;
            dn[j] -= 1e-6;
            let lu = ipw_loss(&clicks, &list_distribution(&up, None).unwrap(), &g).unwrap().value;
            let ld = ipw_loss(&clicks, &list_distribution(&dn, None).unwrap(), &g).unwrap().value;
            assert!((analytic[j] - (lu - ld) / 2e-6).abs() < 1e-7);
        }
    }

    #[test]
    fn propensity_text_round_trip() {
        let p = PropensityModel {
            logits: vec![0.5, -0.25, 1e-3],
        };
        assert_eq!(PropensityModel::from_text(&p.to_text()).unwrap(), p);
        assert!(PropensityModel::from_text("3\n1 2\n").is_err());
        let r = p.ratios();
        assert_eq!(r[0], 1.0);
        let d = p.distribution();
        assert!((r[1] - d.probs[0] / d.probs[1]).abs() < 1e-12);
    }

    #[test]
    fn ipw_with_true_ratios_is_unbiased_in_small_sample() {
        let curve = PropensityCurve::inverse_power(1.0, 3).unwrap();
        let noise = ClickNoiseConfig::default();
        let labels = [2, 0, 4];
        let f = list_distribution(&[0.2, -0.1, 0.4], None).unwrap();
        let g = list_distribution(&[0.0, -(2f64.ln()), -(3f64.ln())], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 40_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let c = sample_click_vector(&labels, &curve, &noise, &mut rng).unwrap();
            total += ipw_loss(&c, &f, &g).unwrap().value;
        }
        let r: Vec<f64> = labels
            .iter()
            .map(|&y| perceived_relevance_prob(y, &noise).unwrap())
            .collect();
        let full = full_information_loss(&f, &r).unwrap();
        assert!(((total / draws as f64) - full).abs() / full < 0.03);
    }

    fn toy_lists(n_queries: usize, seed: u64) -> Vec<RankedList> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_queries)
            .map(|q| {
                let features: Vec<Vec<f64>> = (0..5)
                    .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                    .collect();
                let labels = features.iter().map(|f| (f[0] * 4.99) as u32).collect();
                RankedList {
                    qid: q.to_string(),
                    order: (0..5).collect(),
                    features,
                    labels,
                }
            })
            .collect()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            arch: ArchConfig {
                mlp_hidden: vec![4],
                ..ArchConfig::default()
            },
            batch_size: 8,
            steps: 20,
            list_size: 5,
            seed: 3,
            eval_interval: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initial_models() {
        let lists = toy_lists(10, 0);
        let curve = PropensityCurve::inverse_power(1.0, 5).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..toy_config()
        };
        let out = train_dla(&lists, &lists, &curve, &ClickNoiseConfig::default(), &cfg).unwrap();
        let init = Scorer::init(cfg.kind, 2, &cfg.arch, derive_seed(cfg.seed, "init/scorer")).unwrap();
        assert_eq!(out.scorer, init);
        assert_eq!(out.propensity.unwrap(), PropensityModel::uniform(5));
        let naive = train_naive(&lists, &lists, &curve, &ClickNoiseConfig::default(), &cfg).unwrap();
        assert_eq!(naive.scorer, init);
        assert!(naive.propensity.is_none());
    }

    #[test]
    fn training_is_deterministic_and_records_history() {
        let lists = toy_lists(20, 1);
        let curve = PropensityCurve::inverse_power(1.0, 5).unwrap();
        let noise = ClickNoiseConfig::default();
        let a = train_dla(&lists, &lists[..5], &curve, &noise, &toy_config()).unwrap();
        let b = train_dla(&lists, &lists[..5], &curve, &noise, &toy_config()).unwrap();
        assert_eq!(a.scorer, b.scorer);
        assert_eq!(a.propensity, b.propensity);
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(a.history.len(), 5);
        assert!(history_csv(&a.history).starts_with("step,loss_s,loss_e,mse_propen,valid_ndcg10"));
        assert_ne!(a.scorer, Scorer::init(ScorerKind::UnivariateMlp, 2, &toy_config().arch, 0).unwrap());
    }

    #[test]
    fn flags_change_the_trajectory() {
        let lists = toy_lists(20, 1);
        let curve = PropensityCurve::inverse_power(1.0, 5).unwrap();
        let noise = ClickNoiseConfig::default();
        let base = train_dla(&lists, &[], &curve, &noise, &toy_config()).unwrap();
        let alt = TrainConfig {
            alternating: true,
            ..toy_config()
        };
        let fixed = TrainConfig {
            fixed_log: Some(2),
            ..toy_config()
        };
        let alt = train_dla(&lists, &[], &curve, &noise, &alt).unwrap();
        let fixed = train_dla(&lists, &[], &curve, &noise, &fixed).unwrap();
        assert_ne!(base.propensity, alt.propensity);
        assert_ne!(base.propensity, fixed.propensity);
        let tight = TrainConfig {
            clip: 1.0,
            ..toy_config()
        };
        assert!(train_dla(&lists, &[], &curve, &noise, &tight).unwrap().clipped > 0);
    }

    #[test]
    fn config_errors() {
        let lists = toy_lists(4, 1);
        let curve = PropensityCurve::inverse_power(1.0, 3).unwrap();
        let noise = ClickNoiseConfig::default();
        assert!(matches!(
            train_dla(&lists, &[], &curve, &noise, &toy_config()),
            Err(Error::Config(_))
        ));
        let curve = PropensityCurve::inverse_power(1.0, 5).unwrap();
        assert!(matches!(
            train_naive(&[], &[], &curve, &noise, &toy_config()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn display_order_metrics_and_rerank() {
        let lists = toy_lists(3, 2);
        let s = Scorer::init(ScorerKind::UnivariateMlp, 2, &toy_config().arch, 0).unwrap();
        let reranked = rerank_labels(&s, &lists, 0).unwrap();
        for (r, l) in reranked.iter().zip(&lists) {
            let mut a = r.clone();
            let mut b = l.labels.clone();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
        let rep = evaluate_display_order(&lists, 4, "prod", 0).unwrap();
        assert_eq!(rep.queries.len(), 3);
    }
}
