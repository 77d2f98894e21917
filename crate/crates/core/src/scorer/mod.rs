//! List scoring functions: a per-document feed-forward network, a
//! set-attention network and a recurrent sequence network.
//!
//! Every scorer maps a list of `N` feature rows to `N` scores. Lists are
//! batched as `B·N` stacked rows with a validity mask so short lists can be
//! zero-padded; padded rows never influence valid rows.

mod mlp;
mod sequence;
mod set_attention;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{
    grad_check_with, GradCheckConfig, GradCheckReport, Matrix, ParamStore, Tape, Var,
};
use crate::error::{Error, Result};

/// Input order fed to the recurrent scorer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrderMode {
    /// Display order.
    Init,
    /// Reversed display order.
    Rever,
    /// Seeded random shuffle per list.
    Rand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScorerKind {
    UnivariateMlp,
    SetAttention,
    SequenceGru(OrderMode),
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 5] = [
        ScorerKind::UnivariateMlp,
        ScorerKind::SetAttention,
        ScorerKind::SequenceGru(OrderMode::Init),
        ScorerKind::SequenceGru(OrderMode::Rever),
        ScorerKind::SequenceGru(OrderMode::Rand),
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::UnivariateMlp => "mlp",
            ScorerKind::SetAttention => "set_attention",
            ScorerKind::SequenceGru(OrderMode::Init) => "gru_init",
            ScorerKind::SequenceGru(OrderMode::Rever) => "gru_rever",
            ScorerKind::SequenceGru(OrderMode::Rand) => "gru_rand",
        }
    }

    pub fn order_mode(self) -> Option<OrderMode> {
        match self {
            ScorerKind::SequenceGru(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mlp" | "univariate_mlp" | "dnn" => ScorerKind::UnivariateMlp,
            "set_attention" | "setrank" => ScorerKind::SetAttention,
            "gru_init" | "sequence_gru_init" | "dlcm_init" => ScorerKind::SequenceGru(OrderMode::Init),
            "gru_rever" | "sequence_gru_rever" | "dlcm_rever" => {
                ScorerKind::SequenceGru(OrderMode::Rever)
            }
            "gru_rand" | "sequence_gru_rand" | "dlcm_rand" => ScorerKind::SequenceGru(OrderMode::Rand),
            _ => return Err(Error::Config(format!("unknown scorer kind `{s}`"))),
        })
    }
}

/// Architecture hyper-parameters. Each scorer kind reads only its own fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub mlp_hidden: Vec<usize>,
    pub attn_width: usize,
    pub attn_heads: usize,
    pub attn_blocks: usize,
    pub attn_ff: usize,
    pub gru_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            mlp_hidden: vec![64, 32],
            attn_width: 64,
            attn_heads: 4,
            attn_blocks: 2,
            attn_ff: 128,
            gru_hidden: 64,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self, kind: ScorerKind) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match kind {
            ScorerKind::UnivariateMlp => {
                if self.mlp_hidden.contains(&0) {
                    return bad("mlp hidden sizes must be positive".into());
                }
            }
            ScorerKind::SetAttention => {
                if self.attn_width == 0 || self.attn_heads == 0 || self.attn_ff == 0 {
                    return bad("attention width, heads and feed-forward size must be positive".into());
                }
                if self.attn_width % self.attn_heads != 0 {
                    return bad(format!(
                        "attention width {} not divisible by {} heads",
                        self.attn_width, self.attn_heads
                    ));
                }
            }
            ScorerKind::SequenceGru(_) => {
                if self.gru_hidden == 0 {
                    return bad("gru hidden size must be positive".into());
                }
            }
        }
        Ok(())
    }

    fn describe(&self, kind: ScorerKind) -> String {
        match kind {
            ScorerKind::UnivariateMlp => {
                let h: Vec<String> = self.mlp_hidden.iter().map(usize::to_string).collect();
                format!("hidden={}", h.join(","))
            }
            ScorerKind::SetAttention => format!(
                "width={} heads={} blocks={} ff={}",
                self.attn_width, self.attn_heads, self.attn_blocks, self.attn_ff
            ),
            ScorerKind::SequenceGru(_) => format!("hidden={}", self.gru_hidden),
        }
    }
}

/// A batch of lists stacked row-wise, `list_len` rows per list.
#[derive(Clone, Debug, PartialEq)]
pub struct ListBatch {
    pub n_lists: usize,
    pub list_len: usize,
    pub features: Matrix,
    /// False for zero-padded rows.
    pub mask: Vec<bool>,
}

impl ListBatch {
    /// Pads every list with zero rows to `list_len` (default: the longest list).
    pub fn from_lists(lists: &[&[Vec<f64>]], dim: usize, list_len: Option<usize>) -> Result<Self> {
        if lists.iter().any(|l| l.is_empty()) {
            return Err(Error::EmptyList("cannot score a list with no documents".into()));
        }
        let longest = lists.iter().map(|l| l.len()).max().unwrap_or(0);
        let list_len = list_len.unwrap_or(longest);
        if longest > list_len {
            return Err(Error::shape(
                "list batch",
                format!("list of {longest} documents exceeds list length {list_len}"),
            ));
        }
        let mut features = Matrix::zeros(lists.len() * list_len, dim);
        let mut mask = vec![false; lists.len() * list_len];
        for (b, list) in lists.iter().enumerate() {
            for (i, row) in list.iter().enumerate() {
                if row.len() != dim {
                    return Err(Error::shape(
                        "list batch",
                        format!("document has {} features, scorer expects {dim}", row.len()),
                    ));
                }
                features.row_mut(b * list_len + i).copy_from_slice(row);
                mask[b * list_len + i] = true;
            }
        }
        Ok(ListBatch {
            n_lists: lists.len(),
            list_len,
            features,
            mask,
        })
    }

    /// A single unpadded list.
    pub fn single(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::EmptyList("cannot score a list with no documents".into()));
        }
        Ok(ListBatch {
            n_lists: 1,
            list_len: x.rows(),
            features: x.clone(),
            mask: vec![true; x.rows()],
        })
    }

    pub fn valid_len(&self, list: usize) -> usize {
        self.mask[list * self.list_len..(list + 1) * self.list_len]
            .iter()
            .filter(|&&m| m)
            .count()
    }
}

/// A list scoring function with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Scorer {
    kind: ScorerKind,
    arch: ArchConfig,
    input_dim: usize,
    params: ParamStore,
}

impl Scorer {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains; deterministic per seed.
    pub fn init(kind: ScorerKind, input_dim: usize, arch: &ArchConfig, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("scorer input dimension must be positive".into()));
        }
        arch.validate(kind)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        match kind {
            ScorerKind::UnivariateMlp => mlp::init(&mut params, input_dim, arch, &mut rng),
            ScorerKind::SetAttention => set_attention::init(&mut params, input_dim, arch, &mut rng),
            ScorerKind::SequenceGru(_) => sequence::init(&mut params, input_dim, arch, &mut rng),
        }
        Ok(Scorer {
            kind,
            arch: arch.clone(),
            input_dim,
            params,
        })
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Records the forward pass on `tape`, returning raw scores shaped `n_lists × list_len`.
    pub fn forward(&self, tape: &mut Tape, batch: &ListBatch, order_seed: u64) -> Result<Var> {
        self.forward_with(&self.params, tape, batch, order_seed)
    }

    /// Forward pass reading parameters from `store` instead of the scorer's own.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &ListBatch,
        order_seed: u64,
    ) -> Result<Var> {
        if batch.features.cols() != self.input_dim {
            return Err(Error::shape(
                self.kind.name(),
                format!(
                    "input has {} features, scorer expects {}",
                    batch.features.cols(),
                    self.input_dim
                ),
            ));
        }
        if batch.n_lists == 0 || batch.list_len == 0 {
            return Err(Error::EmptyList("cannot score an empty batch".into()));
        }
        if (0..batch.n_lists).any(|b| batch.valid_len(b) == 0) {
            return Err(Error::EmptyList("batch contains a list with no documents".into()));
        }
        let flat = match self.kind {
            ScorerKind::UnivariateMlp => mlp::forward(store, tape, batch)?,
            ScorerKind::SetAttention => set_attention::forward(store, &self.arch, tape, batch)?,
            ScorerKind::SequenceGru(mode) => {
                let orders = input_orders(batch, mode, order_seed);
                sequence::forward(store, tape, batch, &orders)?
            }
        };
        tape.reshape(flat, batch.n_lists, batch.list_len)
    }

    /// Scores every list of a batch; padded positions come back as `-inf`.
    pub fn score_batch(&self, batch: &ListBatch, order_seed: u64) -> Result<Matrix> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch, order_seed)?;
        let mut scores = tape.value(out).clone();
        for (s, &m) in scores.as_mut_slice().iter_mut().zip(&batch.mask) {
            if !m {
                *s = f64::NEG_INFINITY;
            }
        }
        Ok(scores)
    }

    /// Scores one `N × H` list. `order_seed` is used only by the random-order recurrent scorer.
    pub fn score(&self, features: &Matrix, order_seed: u64) -> Result<Vec<f64>> {
        Ok(self
            .score_batch(&ListBatch::single(features)?, order_seed)?
            .into_vec())
    }

    pub fn to_checkpoint(&self) -> String {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), self.kind.name().to_string());
        meta.insert("input_dim".to_string(), self.input_dim.to_string());
        meta.insert("arch".to_string(), self.arch.describe(self.kind));
        let a = &self.arch;
        let hidden: Vec<String> = a.mlp_hidden.iter().map(usize::to_string).collect();
        meta.insert("mlp_hidden".into(), hidden.join(","));
        meta.insert("attn_width".into(), a.attn_width.to_string());
        meta.insert("attn_heads".into(), a.attn_heads.to_string());
        meta.insert("attn_blocks".into(), a.attn_blocks.to_string());
        meta.insert("attn_ff".into(), a.attn_ff.to_string());
        meta.insert("gru_hidden".into(), a.gru_hidden.to_string());
        self.params.to_checkpoint(&meta)
    }

    /// Reloads a checkpoint, checking that its tensors match the declared kind and architecture.
    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let (params, meta) = ParamStore::from_checkpoint(text)?;
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint field `{k}` is not a number")))
        };
        let kind: ScorerKind = get("kind")?.parse()?;
        let mlp_hidden = get("mlp_hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config("bad mlp_hidden in checkpoint".into()))
            })
            .collect::<Result<Vec<usize>>>()?;
        let arch = ArchConfig {
            mlp_hidden,
            attn_width: num("attn_width")?,
            attn_heads: num("attn_heads")?,
            attn_blocks: num("attn_blocks")?,
            attn_ff: num("attn_ff")?,
            gru_hidden: num("gru_hidden")?,
        };
        let input_dim = num("input_dim")?;
        let template = Scorer::init(kind, input_dim, &arch, 0)?;
        let same_layout = template.params.len() == params.len()
            && template
                .params
                .ids()
                .zip(params.ids())
                .all(|(a, b)| {
                    template.params.name(a) == params.name(b)
                        && template.params.value(a).shape() == params.value(b).shape()
                });
        if !same_layout {
            return Err(Error::Config(format!(
                "checkpoint tensors do not match a {kind} scorer with {}",
                arch.describe(kind)
            )));
        }
        Ok(Scorer {
            kind,
            arch,
            input_dim,
            params,
        })
    }
}

/// Per-list order in which the recurrent scorer reads documents: valid rows
/// first in the mode's order, padded rows last.
pub(crate) fn input_orders(batch: &ListBatch, mode: OrderMode, order_seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
    (0..batch.n_lists)
        .map(|b| {
            let base = b * batch.list_len;
            let mut valid: Vec<usize> = (0..batch.list_len)
                .filter(|&i| batch.mask[base + i])
                .collect();
            match mode {
                OrderMode::Init => {}
                OrderMode::Rever => valid.reverse(),
                OrderMode::Rand => valid.shuffle(&mut rng),
            }
            valid.extend((0..batch.list_len).filter(|&i| !batch.mask[base + i]));
            valid
        })
        .collect()
}

/// One entry of [`gradcheck_suite`].
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    /// Kernel name, or `scorer/<kind>`.
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Every diff-core kernel case and every scorer kind, each over seeds `0..n_seeds`.
pub fn gradcheck_suite(n_seeds: u64, config: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for seed in 0..n_seeds {
        for case in crate::diff::kernel_cases(seed) {
            let report = crate::diff::grad_check_with(&case.store, &case.loss, config)?;
            out.push(SuiteEntry {
                name: case.name.to_string(),
                seed,
                report,
            });
        }
        for kind in ScorerKind::ALL {
            out.push(SuiteEntry {
                name: format!("scorer/{kind}"),
                seed,
                report: scorer_gradcheck(kind, seed, config)?,
            });
        }
    }
    Ok(out)
}

/// Finite-difference check of a whole scorer on a tiny padded batch, using a
/// weighted listwise softmax loss with fixed random weights.
pub fn scorer_gradcheck(kind: ScorerKind, seed: u64, config: GradCheckConfig) -> Result<GradCheckReport> {
    use rand::Rng;
    let arch = ArchConfig {
        mlp_hidden: vec![5, 3],
        attn_width: 4,
        attn_heads: 2,
        attn_blocks: 2,
        attn_ff: 6,
        gru_hidden: 3,
    };
    let dim = 3;
    let scorer = Scorer::init(kind, dim, &arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut row = || -> Vec<f64> { (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let a: Vec<Vec<f64>> = (0..4).map(|_| row()).collect();
    let b: Vec<Vec<f64>> = (0..3).map(|_| row()).collect();
    let batch = ListBatch::from_lists(&[&a, &b], dim, Some(4))?;
    let weights: Vec<f64> = batch
        .mask
        .iter()
        .map(|&m| if m { rng.random_range(0.0..2.0) } else { 0.0 })
        .collect();
    // Zero-initialized biases can leave a ReLU input exactly at its kink; jitter
    // every parameter so the probe point is differentiable.
    let mut store = scorer.params().clone();
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).as_mut_slice() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let loss = |t: &mut Tape, s: &ParamStore| {
        let scores = scorer.forward_with(s, t, &batch, seed)?;
        t.softmax_xent(scores, batch.mask.clone(), weights.clone(), 0.5)
    };
    grad_check_with(&store, &loss, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_list(n: usize, dim: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::from_vec(n, dim, data).unwrap()
    }

    fn permute_rows(x: &Matrix, perm: &[usize]) -> Matrix {
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| x.row(p).to_vec()).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn small_arch() -> ArchConfig {
        ArchConfig {
            mlp_hidden: vec![8, 4],
            attn_width: 8,
            attn_heads: 2,
            attn_blocks: 2,
            attn_ff: 12,
            gru_hidden: 6,
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ScorerKind::ALL {
            assert_eq!(k.name().parse::<ScorerKind>().unwrap(), k);
        }
        assert!("rnn".parse::<ScorerKind>().is_err());
    }

    #[test]
    fn mlp_parameter_count_matches_architecture() {
        let h = 7;
        let s = Scorer::init(ScorerKind::UnivariateMlp, h, &ArchConfig::default(), 0).unwrap();
        assert_eq!(s.params().num_scalars(), 64 * h + 64 + 2080 + 33);
    }

    #[test]
    fn mlp_without_hidden_layers_is_linear() {
        let arch = ArchConfig {
            mlp_hidden: vec![],
            ..ArchConfig::default()
        };
        let s = Scorer::init(ScorerKind::UnivariateMlp, 3, &arch, 1).unwrap();
        assert_eq!(s.params().num_scalars(), 4);
        let x = random_list(6, 3, 2);
        let scores = s.score(&x, 0).unwrap();
        let w = s.params().value(s.params().id("mlp.0.w").unwrap());
        let b = s.params().value(s.params().id("mlp.0.b").unwrap())[(0, 0)];
        for (i, sc) in scores.iter().enumerate() {
            let lin: f64 = (0..3).map(|k| x[(i, k)] * w[(k, 0)]).sum::<f64>() + b;
            assert!((sc - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic() {
        for k in ScorerKind::ALL {
            let a = Scorer::init(k, 5, &small_arch(), 3).unwrap();
            assert_eq!(a, Scorer::init(k, 5, &small_arch(), 3).unwrap());
            assert_ne!(a, Scorer::init(k, 5, &small_arch(), 4).unwrap());
        }
    }

    #[test]
    fn invalid_arch_is_rejected() {
        let arch = ArchConfig {
            attn_width: 10,
            attn_heads: 4,
            ..ArchConfig::default()
        };
        assert!(matches!(
            Scorer::init(ScorerKind::SetAttention, 3, &arch, 0),
            Err(Error::Config(_))
        ));
        assert!(Scorer::init(ScorerKind::UnivariateMlp, 0, &ArchConfig::default(), 0).is_err());
    }

    #[test]
    fn shape_and_empty_errors() {
        let s = Scorer::init(ScorerKind::SetAttention, 4, &small_arch(), 0).unwrap();
        assert!(matches!(
            s.score(&random_list(3, 5, 0), 0),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            s.score(&Matrix::zeros(0, 4), 0),
            Err(Error::EmptyList(_))
        ));
    }

    #[test]
    fn output_length_matches_input_for_every_kind() {
        for k in ScorerKind::ALL {
            let s = Scorer::init(k, 4, &small_arch(), 0).unwrap();
            for n in [1, 2, 7] {
                let out = s.score(&random_list(n, 4, n as u64), 0).unwrap();
                assert_eq!(out.len(), n);
                assert!(out.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn invariant_scorers_commute_with_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [ScorerKind::UnivariateMlp, ScorerKind::SetAttention] {
            let s = Scorer::init(k, 4, &small_arch(), 9).unwrap();
            let x = random_list(6, 4, 1);
            let base = s.score(&x, 0).unwrap();
            for _ in 0..20 {
                let mut perm: Vec<usize> = (0..6).collect();
                perm.shuffle(&mut rng);
                let out = s.score(&permute_rows(&x, &perm), 0).unwrap();
                for j in 0..6 {
                    assert!((out[j] - base[perm[j]]).abs() < 1e-9, "{k}");
                }
            }
        }
    }

    #[test]
    fn recurrent_scorer_depends_on_order() {
        let s = Scorer::init(ScorerKind::SequenceGru(OrderMode::Init), 4, &small_arch(), 2).unwrap();
        let x = random_list(5, 4, 3);
        let fwd = s.score(&x, 0).unwrap();
        let rev_perm: Vec<usize> = (0..5).rev().collect();
        let rev = s.score(&permute_rows(&x, &rev_perm), 0).unwrap();
        let mut a = fwd.clone();
        let mut b = rev.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn reversed_mode_equals_init_on_reversed_input() {
        let init = Scorer::init(ScorerKind::SequenceGru(OrderMode::Init), 4, &small_arch(), 2).unwrap();
        let mut rever = init.clone();
        rever.kind = ScorerKind::SequenceGru(OrderMode::Rever);
        let x = random_list(5, 4, 3);
        let rev_perm: Vec<usize> = (0..5).rev().collect();
        let a = rever.score(&x, 0).unwrap();
        let b = init.score(&permute_rows(&x, &rev_perm), 0).unwrap();
        for j in 0..5 {
            assert!((a[j] - b[4 - j]).abs() < 1e-12);
        }
    }

    #[test]
    fn random_order_depends_on_seed_only() {
        let s = Scorer::init(ScorerKind::SequenceGru(OrderMode::Rand), 4, &small_arch(), 2).unwrap();
        let x = random_list(6, 4, 3);
        assert_eq!(s.score(&x, 10).unwrap(), s.score(&x, 10).unwrap());
        let differs = (11..20).any(|seed| s.score(&x, seed).unwrap() != s.score(&x, 10).unwrap());
        assert!(differs);
    }

    #[test]
    fn padding_does_not_change_valid_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in ScorerKind::ALL {
            let s = Scorer::init(k, 3, &small_arch(), 4).unwrap();
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let alone = s.score_batch(&ListBatch::from_lists(&[&rows], 3, None).unwrap(), 1).unwrap();
            let padded = s
                .score_batch(&ListBatch::from_lists(&[&rows], 3, Some(7)).unwrap(), 1)
                .unwrap();
            for j in 0..4 {
                assert!((alone[(0, j)] - padded[(0, j)]).abs() < 1e-12, "{k}");
            }
            assert!(padded.row(0)[4..].iter().all(|v| *v == f64::NEG_INFINITY));
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_scores() {
        for k in ScorerKind::ALL {
            let s = Scorer::init(k, 4, &small_arch(), 6).unwrap();
            let back = Scorer::from_checkpoint(&s.to_checkpoint()).unwrap();
            assert_eq!(back, s);
        }
        let s = Scorer::init(ScorerKind::UnivariateMlp, 4, &small_arch(), 6).unwrap();
        let text = s.to_checkpoint().replace("meta input_dim 4", "meta input_dim 5");
        assert!(Scorer::from_checkpoint(&text).is_err());
    }

    #[test]
    fn every_scorer_passes_gradcheck() {
        for k in ScorerKind::ALL {
            let report = scorer_gradcheck(k, 0, GradCheckConfig::default()).unwrap();
            assert!(report.pass, "{k}: {:?}", report.worst());
        }
    }
}
