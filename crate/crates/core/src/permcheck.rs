//! Executable check that a scorer commutes with reordering of its input list:
//! `score(Π(X))[j] == score(X)[Π(j)]` for every position `j`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diff::Matrix;
use crate::error::{Error, Result};
use crate::scorer::Scorer;

/// A bijection on list positions. `Π(j)` is the original index of the row
/// placed at position `j` of the permuted list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || seen[m] {
                return Err(Error::Domain(format!("{map:?} is not a permutation")));
            }
            seen[m] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Permutation { map }
    }

    /// All `n!` permutations in lexicographic order.
    pub fn all(n: usize) -> Vec<Permutation> {
        let mut cur: Vec<usize> = (0..n).collect();
        let mut out = vec![Permutation { map: cur.clone() }];
        loop {
            let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
                return out;
            };
            let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor");
            cur.swap(i - 1, j);
            cur[i..].reverse();
            out.push(Permutation { map: cur.clone() });
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, j: usize) -> usize {
        self.map[j]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    /// `out[j] = items[Π(j)]`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.map.iter().map(|&m| items[m].clone()).collect()
    }

    pub fn apply_rows(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for (j, &m) in self.map.iter().enumerate() {
            out.row_mut(j).copy_from_slice(x.row(m));
        }
        out
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (j, &m) in self.map.iter().enumerate() {
            inv[m] = j;
        }
        Permutation { map: inv }
    }
}

/// A concrete `(X, Π)` pair on which the property fails.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub features: Matrix,
    pub permutation: Permutation,
    /// `score(X)`.
    pub original_scores: Vec<f64>,
    /// `score(Π(X))`.
    pub permuted_scores: Vec<f64>,
    /// Position `j` where `|score(Π(X))[j] − score(X)[Π(j)]|` is largest.
    pub position: usize,
    pub violation: f64,
}

impl Witness {
    /// Plain-text dump sufficient to replay the check.
    pub fn to_text(&self) -> String {
        let csv = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let perm: Vec<String> = self.permutation.map.iter().map(|m| (m + 1).to_string()).collect();
        let _ = writeln!(out, "permutation {}", perm.join(","));
        let _ = writeln!(out, "position {}", self.position + 1);
        let _ = writeln!(out, "violation {:?}", self.violation);
        let _ = writeln!(out, "scores_original {}", csv(&self.original_scores));
        let _ = writeln!(out, "scores_permuted {}", csv(&self.permuted_scores));
        let _ = writeln!(out, "features {} {}", self.features.rows(), self.features.cols());
        for r in 0..self.features.rows() {
            let _ = writeln!(out, "{}", csv(self.features.row(r)));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceVerdict {
    pub pass: bool,
    /// Number of (X, Π) pairs evaluated.
    pub trials: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    /// Worst pair seen, kept only when the check fails.
    pub witness: Option<Witness>,
    pub exhaustive: bool,
}

impl InvarianceVerdict {
    pub fn report(&self, name: &str) -> String {
        format!(
            "{name}: {} trials={} exhaustive={} max_violation={:.3e} tolerance={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.trials,
            self.exhaustive,
            self.max_violation,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermCheckConfig {
    pub list_length: usize,
    pub n_inputs: usize,
    /// Ignored when `list_length ≤ 5`, where every permutation is tried.
    pub n_perms_per_input: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Held fixed for every call so a random-order scorer is a fixed function.
    pub order_seed: u64,
    /// Spread of per-list feature centers, matching the synthetic generator.
    pub center_scale: f64,
}

impl Default for PermCheckConfig {
    fn default() -> Self {
        PermCheckConfig {
            list_length: 5,
            n_inputs: 10,
            n_perms_per_input: 100,
            tolerance: 1e-9,
            seed: 0,
            order_seed: 0,
            center_scale: 2.0,
        }
    }
}

impl PermCheckConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.list_length == 0 || self.n_inputs == 0 {
            return Err(Error::Config("list_length and n_inputs must be positive".into()));
        }
        Ok(())
    }
}

/// Largest exhaustive list length.
pub const EXHAUSTIVE_MAX: usize = 5;

/// Random lists shaped like synthetic data. Every other list repeats its first
/// document in the second row, since tied rows are where index bookkeeping breaks.
pub fn sample_inputs(dim: usize, cfg: &PermCheckConfig) -> Vec<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_inputs)
        .map(|k| {
            let center: Vec<f64> = (0..dim)
                .map(|_| cfg.center_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut x = Matrix::zeros(cfg.list_length, dim);
            for r in 0..cfg.list_length {
                for (c, v) in x.row_mut(r).iter_mut().enumerate() {
                    *v = center[c] + rng.sample::<f64, _>(StandardNormal);
                }
            }
            if k % 2 == 1 && cfg.list_length > 1 {
                let first = x.row(0).to_vec();
                x.row_mut(1).copy_from_slice(&first);
            }
            x
        })
        .collect()
}

/// Checks every `(X, Π)` pair given.
pub fn check_permutations(
    scorer: &Scorer,
    inputs: &[Matrix],
    perms: &[Permutation],
    tolerance: f64,
    order_seed: u64,
) -> Result<InvarianceVerdict> {
    if !(tolerance > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tolerance}")));
    }
    let mut trials = 0;
    let mut max_violation = 0.0f64;
    let mut worst: Option<Witness> = None;
    for x in inputs {
        let base = scorer.score(x, order_seed)?;
        for perm in perms {
            if perm.len() != x.rows() {
                return Err(Error::shape(
                    "check_permutations",
                    format!("permutation of {} for a list of {}", perm.len(), x.rows()),
                ));
            }
            let permuted = scorer.score(&perm.apply_rows(x), order_seed)?;
            trials += 1;
            let (position, violation) = (0..perm.len())
                .map(|j| (j, (permuted[j] - base[perm.get(j)]).abs()))
                .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if violation > max_violation || worst.is_none() {
                max_violation = max_violation.max(violation);
                worst = Some(Witness {
                    features: x.clone(),
                    permutation: perm.clone(),
                    original_scores: base.clone(),
                    permuted_scores: permuted,
                    position,
                    violation,
                });
            }
        }
    }
    let pass = max_violation < tolerance;
    Ok(InvarianceVerdict {
        pass,
        trials,
        max_violation,
        tolerance,
        witness: if pass { None } else { worst },
        exhaustive: false,
    })
}

/// Samples inputs and permutations per `cfg`; exhaustive for lists of at most
/// [`EXHAUSTIVE_MAX`] documents.
pub fn check_invariance(scorer: &Scorer, cfg: &PermCheckConfig) -> Result<InvarianceVerdict> {
    cfg.validate()?;
    let inputs = sample_inputs(scorer.input_dim(), cfg);
    let exhaustive = cfg.list_length <= EXHAUSTIVE_MAX;
    let perms = if exhaustive {
        Permutation::all(cfg.list_length)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_9e12);
        (0..cfg.n_perms_per_input)
            .map(|_| Permutation::random(cfg.list_length, &mut rng))
            .collect()
    };
    let mut verdict = check_permutations(scorer, &inputs, &perms, cfg.tolerance, cfg.order_seed)?;
    verdict.exhaustive = exhaustive;
    Ok(verdict)
}

/// Result of comparing score distributions over input-order seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionalVerdict {
    pub pass: bool,
    pub trials: usize,
    /// Largest |z| of the mean-score difference over all (X, Π, j).
    pub max_z: f64,
    pub threshold: f64,
}

/// Default |z| threshold of the distributional mode.
pub const DEFAULT_Z_THRESHOLD: f64 = 4.0;

/// For each sampled `(X, Π)`, compares the mean over `n_order_seeds` seeds of
/// `score(Π(X))[j]` with that of `score(X)[Π(j)]` by a two-sample z statistic.
/// Seeds for the two sides are disjoint.
pub fn check_distributional(
    scorer: &Scorer,
    cfg: &PermCheckConfig,
    n_order_seeds: usize,
    z_threshold: f64,
) -> Result<DistributionalVerdict> {
    cfg.validate()?;
    if n_order_seeds < 2 {
        return Err(Error::Config("distributional mode needs at least 2 order seeds".into()));
    }
    let inputs = sample_inputs(scorer.input_dim(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd157);
    let perms_per = cfg.n_perms_per_input.max(1);
    let mut trials = 0;
    let mut max_z = 0.0f64;
    for x in &inputs {
        let n = x.rows();
        let base: Vec<Vec<f64>> = (0..n_order_seeds)
            .map(|s| scorer.score(x, cfg.order_seed.wrapping_add(s as u64)))
            .collect::<Result<_>>()?;
        for _ in 0..perms_per {
            let perm = Permutation::random(n, &mut rng);
            let px = perm.apply_rows(x);
            let permuted: Vec<Vec<f64>> = (0..n_order_seeds)
                .map(|s| scorer.score(&px, cfg.order_seed.wrapping_add((n_order_seeds + s) as u64)))
                .collect::<Result<_>>()?;
            trials += 1;
            for j in 0..n {
                let a: Vec<f64> = permuted.iter().map(|s| s[j]).collect();
                let b: Vec<f64> = base.iter().map(|s| s[perm.get(j)]).collect();
                max_z = max_z.max(z_stat(&a, &b, cfg.tolerance));
            }
        }
    }
    Ok(DistributionalVerdict {
        pass: max_z < z_threshold,
        trials,
        max_z,
        threshold: z_threshold,
    })
}

fn z_stat(a: &[f64], b: &[f64], tolerance: f64) -> f64 {
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var)
    };
    let (ma, va) = stats(a);
    let (mb, vb) = stats(b);
    let diff = (ma - mb).abs();
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    if se < tolerance {
        return if diff < tolerance { 0.0 } else { f64::INFINITY };
    }
    diff / se
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{ArchConfig, OrderMode, ScorerKind};

    fn arch() -> ArchConfig {
        ArchConfig {
            mlp_hidden: vec![8],
            attn_width: 8,
            attn_heads: 2,
            attn_blocks: 1,
            attn_ff: 8,
            gru_hidden: 6,
        }
    }

    #[test]
    fn permutation_basics() {
        assert_eq!(Permutation::all(4).len(), 24);
        let all = Permutation::all(3);
        assert_eq!(all[0], Permutation::identity(3));
        let mut dedup = all.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 6);
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(p.apply(&['a', 'b', 'c']), vec!['c', 'a', 'b']);
        assert_eq!(p.inverse().apply(&p.apply(&[1, 2, 3])), vec![1, 2, 3]);
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![1, 2]).is_err());
    }

    #[test]
    fn identity_only_passes_for_every_scorer() {
        for kind in ScorerKind::ALL {
            let s = Scorer::init(kind, 3, &arch(), 1).unwrap();
            let inputs = sample_inputs(3, &PermCheckConfig::default());
            let v = check_permutations(&s, &inputs, &[Permutation::identity(5)], 1e-9, 0).unwrap();
            assert!(v.pass, "{kind}");
        }
    }

    #[test]
    fn mlp_passes_exhaustively() {
        let s = Scorer::init(ScorerKind::UnivariateMlp, 3, &arch(), 1).unwrap();
        let v = check_invariance(&s, &PermCheckConfig { n_inputs: 3, ..Default::default() }).unwrap();
        assert!(v.pass && v.exhaustive);
        assert_eq!(v.trials, 3 * 120);
        assert!(v.witness.is_none());
    }

    #[test]
    fn gru_init_fails_with_reproducible_witness() {
        let s = Scorer::init(ScorerKind::SequenceGru(OrderMode::Init), 3, &arch(), 1).unwrap();
        let v = check_invariance(&s, &PermCheckConfig { n_inputs: 2, ..Default::default() }).unwrap();
        assert!(!v.pass);
        let w = v.witness.unwrap();
        let base = s.score(&w.features, 0).unwrap();
        let permuted = s.score(&w.permutation.apply_rows(&w.features), 0).unwrap();
        let again = (permuted[w.position] - base[w.permutation.get(w.position)]).abs();
        assert!(again >= w.violation - 1e-12);
        assert!((again - v.max_violation).abs() < 1e-12);
        assert!(w.to_text().starts_with("permutation "));
    }

    #[test]
    fn nonpositive_tolerance_is_config_error() {
        let s = Scorer::init(ScorerKind::UnivariateMlp, 3, &arch(), 1).unwrap();
        let cfg = PermCheckConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(matches!(check_invariance(&s, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn sampled_inputs_include_duplicate_rows() {
        let xs = sample_inputs(4, &PermCheckConfig::default());
        assert_eq!(xs[1].row(0), xs[1].row(1));
        assert_ne!(xs[0].row(0), xs[0].row(1));
    }

    #[test]
    fn distributional_mode_separates_random_from_fixed_order() {
        let cfg = PermCheckConfig {
            n_inputs: 2,
            n_perms_per_input: 3,
            ..Default::default()
        };
        let init = Scorer::init(ScorerKind::SequenceGru(OrderMode::Init), 3, &arch(), 1).unwrap();
        let v = check_distributional(&init, &cfg, 50, DEFAULT_Z_THRESHOLD).unwrap();
        assert!(!v.pass);
        let mlp = Scorer::init(ScorerKind::UnivariateMlp, 3, &arch(), 1).unwrap();
        assert!(check_distributional(&mlp, &cfg, 50, DEFAULT_Z_THRESHOLD).unwrap().pass);
    }
}
