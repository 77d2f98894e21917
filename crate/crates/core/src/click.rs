//! Position-biased click simulation.
//!
//! A click happens only when a result is both observed and perceived as
//! relevant, with the two events independent:
//!
//! ```text
//! P(o_i = 1) = ρ_i
//! P(r_i = 1) = ε + (1 − ε) · (2^y − 1) / (2^y_max − 1)
//! c_i        = o_i · r_i
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::prod::RankedList;

/// Observation probability per display position, `probs[0]` being the top slot.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityCurve {
    probs: Vec<f64>,
}

/// How a [`PropensityCurve`] is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum CurveFamily {
    /// `ρ_i = (1/i)^η`.
    InversePower { eta: f64 },
    /// Explicit values read from a text file.
    CustomFile { path: String },
}

impl PropensityCurve {
    pub fn inverse_power(eta: f64, max_positions: usize) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::Config(format!(
                "propensity exponent eta must be >= 0, got {eta}"
            )));
        }
        Self::from_values(
            (1..=max_positions)
                .map(|i| (1.0 / i as f64).powf(eta))
                .collect(),
        )
    }

    /// Validates explicit values: each in (0, 1] and the first exactly 1.
    pub fn from_values(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("propensity curve has no positions".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, &p)| !(p > 0.0 && p <= 1.0))
        {
            return Err(Error::Config(format!(
                "propensity at position {} is {p}, outside (0, 1]",
                i + 1
            )));
        }
        if probs[0] != 1.0 {
            return Err(Error::Config(format!(
                "propensity at position 1 must be 1, got {}",
                probs[0]
            )));
        }
        Ok(PropensityCurve { probs })
    }

    /// Whitespace-separated values, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("");
            for tok in body.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("bad propensity value `{tok}`"),
                })?);
            }
        }
        Self::from_values(values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// True inverse-propensity ratios `ρ_1/ρ_i` over the first `n` positions.
    pub fn inverse_ratios(&self, n: usize) -> Vec<f64> {
        self.probs[..n.min(self.len())]
            .iter()
            .map(|p| self.probs[0] / p)
            .collect()
    }
}

/// Builds a curve over `max_positions` slots. A custom file must supply at
/// least that many values; extra values are dropped.
pub fn make_curve(family: &CurveFamily, max_positions: usize) -> Result<PropensityCurve> {
    match family {
        CurveFamily::InversePower { eta } => PropensityCurve::inverse_power(*eta, max_positions),
        CurveFamily::CustomFile { path } => {
            let curve = PropensityCurve::load(Path::new(path))?;
            if curve.len() < max_positions {
                return Err(Error::Config(format!(
                    "propensity file {path} has {} positions, need {max_positions}",
                    curve.len()
                )));
            }
            PropensityCurve::from_values(curve.probs[..max_positions].to_vec())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClickNoiseConfig {
    pub epsilon: f64,
    pub max_label: u32,
}

impl Default for ClickNoiseConfig {
    fn default() -> Self {
        ClickNoiseConfig {
            epsilon: 0.1,
            max_label: 4,
        }
    }
}

impl ClickNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "click noise epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        if self.max_label == 0 {
            return Err(Error::Config("max_label must be positive".into()));
        }
        Ok(())
    }
}

/// Probability that a document with grade `label` is perceived as relevant.
pub fn perceived_relevance_prob(label: u32, noise: &ClickNoiseConfig) -> Result<f64> {
    if label > noise.max_label {
        return Err(Error::Domain(format!(
            "label {label} above maximum {}",
            noise.max_label
        )));
    }
    let gain = (2f64.powi(label as i32) - 1.0) / (2f64.powi(noise.max_label as i32) - 1.0);
    Ok(noise.epsilon + (1.0 - noise.epsilon) * gain)
}

/// One impression of a ranked list and the clicks it received.
#[derive(Clone, Debug, PartialEq)]
pub struct ClickLog {
    pub qid: String,
    /// Original (0-based) document index per display position.
    pub display_order: Vec<usize>,
    pub clicks: Vec<u8>,
    pub impression_id: u64,
}

impl ClickLog {
    /// `qid<TAB>impression_id<TAB>order csv<TAB>clicks csv`, with 1-based order.
    pub fn to_tsv_line(&self) -> String {
        let order: Vec<String> = self.display_order.iter().map(|i| (i + 1).to_string()).collect();
        let clicks: Vec<String> = self.clicks.iter().map(u8::to_string).collect();
        format!(
            "{}\t{}\t{}\t{}",
            self.qid,
            self.impression_id,
            order.join(","),
            clicks.join(",")
        )
    }
}

/// Clicks on a list given by its displayed labels. Observation and perceived
/// relevance are drawn independently per position; only their product leaves
/// this function.
pub fn sample_click_vector<R: Rng + ?Sized>(
    labels: &[u32],
    curve: &PropensityCurve,
    noise: &ClickNoiseConfig,
    rng: &mut R,
) -> Result<Vec<u8>> {
    if labels.len() > curve.len() {
        return Err(Error::Config(format!(
            "list of {} documents exceeds the {}-position propensity curve",
            labels.len(),
            curve.len()
        )));
    }
    labels
        .iter()
        .zip(curve.probs())
        .map(|(&y, &rho)| {
            let relevant_p = perceived_relevance_prob(y, noise)?;
            let observed = rng.random::<f64>() < rho;
            let relevant = rng.random::<f64>() < relevant_p;
            Ok(u8::from(observed && relevant))
        })
        .collect()
}

pub fn sample_clicks<R: Rng + ?Sized>(
    list: &RankedList,
    curve: &PropensityCurve,
    noise: &ClickNoiseConfig,
    rng: &mut R,
    impression_id: u64,
) -> Result<ClickLog> {
    let clicks = sample_click_vector(&list.labels, curve, noise, rng)?;
    Ok(ClickLog {
        qid: list.qid.clone(),
        display_order: list.order.clone(),
        clicks,
        impression_id,
    })
}

/// Renders a click-log dump, one impression per line.
pub fn click_log_tsv(logs: &[ClickLog]) -> String {
    let mut out = String::new();
    for log in logs {
        let _ = writeln!(out, "{}", log.to_tsv_line());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(epsilon: f64) -> ClickNoiseConfig {
        ClickNoiseConfig {
            epsilon,
            max_label: 4,
        }
    }

    #[test]
    fn inverse_power_values() {
        let c = PropensityCurve::inverse_power(1.0, 10).unwrap();
        assert_eq!(c.probs()[0], 1.0);
        assert_eq!(c.probs()[1], 0.5);
        let flat = PropensityCurve::inverse_power(0.0, 5).unwrap();
        assert!(flat.probs().iter().all(|&p| p == 1.0));
        for eta in [0.3, 2.0, 7.5] {
            assert_eq!(PropensityCurve::inverse_power(eta, 3).unwrap().probs()[0], 1.0);
        }
        assert!(matches!(
            PropensityCurve::inverse_power(-1.0, 3),
            Err(Error::Config(_))
        ));
        assert_eq!(c.inverse_ratios(3), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn custom_curve_validation() {
        assert!(PropensityCurve::parse("1.0 0.5\n0.25 # tail\n").is_ok());
        assert!(PropensityCurve::parse("0.9 0.5").is_err());
        assert!(PropensityCurve::parse("1.0 0.0").is_err());
        assert!(PropensityCurve::parse("1.0 1.5").is_err());
        assert!(PropensityCurve::parse("").is_err());
    }

    #[test]
    fn custom_file_must_cover_positions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.txt");
        std::fs::write(&path, "1.0\n0.6\n0.3\n").unwrap();
        let family = CurveFamily::CustomFile {
            path: path.display().to_string(),
        };
        assert_eq!(make_curve(&family, 2).unwrap().probs(), &[1.0, 0.6]);
        assert!(matches!(make_curve(&family, 5), Err(Error::Config(_))));
    }

    #[test]
    fn perceived_relevance_values() {
        assert_eq!(perceived_relevance_prob(0, &noise(0.1)).unwrap(), 0.1);
        for eps in [0.0, 0.1, 0.7] {
            assert_eq!(perceived_relevance_prob(4, &noise(eps)).unwrap(), 1.0);
        }
        let p = perceived_relevance_prob(2, &noise(0.1)).unwrap();
        assert!((p - 0.28).abs() < 1e-15);
        assert!(matches!(
            perceived_relevance_prob(5, &noise(0.1)),
            Err(Error::Domain(_))
        ));
        let ps: Vec<f64> = (0..=4)
            .map(|y| perceived_relevance_prob(y, &noise(0.1)).unwrap())
            .collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]));
        assert!(ps.iter().all(|&p| (0.1..=1.0).contains(&p)));
    }

    #[test]
    fn degenerate_click_cases() {
        let curve = PropensityCurve::inverse_power(1.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let c = sample_click_vector(&[0; 5], &curve, &noise(0.0), &mut rng).unwrap();
            assert!(c.iter().all(|&x| x == 0));
        }
        let flat = PropensityCurve::inverse_power(0.0, 5).unwrap();
        for _ in 0..200 {
            let c = sample_click_vector(&[4; 5], &flat, &noise(0.1), &mut rng).unwrap();
            assert!(c.iter().all(|&x| x == 1));
        }
        assert!(sample_click_vector(&[0; 6], &curve, &noise(0.1), &mut rng).is_err());
    }

    #[test]
    fn click_stream_is_reproducible() {
        let curve = PropensityCurve::inverse_power(1.0, 5).unwrap();
        let labels = [4, 1, 3, 0, 2];
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_click_vector(&labels, &curve, &noise(0.1), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn tsv_line_format() {
        let log = ClickLog {
            qid: "q7".into(),
            display_order: vec![2, 0, 1],
            clicks: vec![0, 1, 0],
            impression_id: 12,
        };
        assert_eq!(log.to_tsv_line(), "q7\t12\t3,1,2\t0,1,0");
    }
}
