//! Ranking metrics, propensity-ratio error and paired significance testing.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

fn gain(label: u32) -> f64 {
    2f64.powi(label as i32) - 1.0
}

fn dcg(labels: &[u32], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &y)| gain(y) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k with exponential gain `2^y − 1` and `log2(i + 1)` discount.
/// A list whose ideal DCG is zero scores 1.
pub fn ndcg_at_k(ranked_labels: &[u32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("cutoff k must be at least 1".into()));
    }
    let mut ideal = ranked_labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(ranked_labels, k) / idcg)
}

/// Expected reciprocal rank with stopping probability `(2^y − 1) / 2^y_max`.
pub fn err_at_k(ranked_labels: &[u32], k: usize, max_label: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("cutoff k must be at least 1".into()));
    }
    if let Some(&y) = ranked_labels.iter().find(|&&y| y > max_label) {
        return Err(Error::Domain(format!("label {y} exceeds maximum {max_label}")));
    }
    let denom = 2f64.powi(max_label as i32);
    let mut keep_going = 1.0;
    let mut err = 0.0;
    for (i, &y) in ranked_labels.iter().take(k).enumerate() {
        let r = gain(y) / denom;
        err += keep_going * r / (i + 1) as f64;
        keep_going *= 1.0 - r;
    }
    Ok(err)
}

/// Mean squared difference between estimated and true inverse-propensity ratios.
pub fn mse_propen(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape(
            "mse_propen",
            format!("{} estimated vs {} true ratios", estimated.len(), truth.len()),
        ));
    }
    let sq: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    Ok(sq / truth.len() as f64)
}

/// Two-tailed paired t-test p-value. Zero-variance differences give p = 1
/// when the mean difference is zero and p = 0 otherwise.
pub fn significance_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Domain(format!("paired test needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var <= f64::EPSILON * f64::EPSILON * mean.abs().max(1.0) {
        return Ok(if mean.abs() < 1e-15 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Domain(format!("t distribution: {e}")))?;
    Ok((2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0))
}

/// Metrics for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryMetrics {
    pub qid: String,
    pub err3: f64,
    pub ndcg3: f64,
    pub err10: f64,
    pub ndcg10: f64,
}

impl QueryMetrics {
    pub fn compute(qid: &str, ranked_labels: &[u32], max_label: u32) -> Result<Self> {
        Ok(QueryMetrics {
            qid: qid.to_string(),
            err3: err_at_k(ranked_labels, 3, max_label)?,
            ndcg3: ndcg_at_k(ranked_labels, 3)?,
            err10: err_at_k(ranked_labels, 10, max_label)?,
            ndcg10: ndcg_at_k(ranked_labels, 10)?,
        })
    }

    fn values(&self) -> [f64; 4] {
        [self.err3, self.ndcg3, self.err10, self.ndcg10]
    }
}

/// Column order used by reports and tables.
pub const METRIC_COLUMNS: [&str; 4] = ["ERR@3", "nDCG@3", "ERR@10", "nDCG@10"];

/// Per-query metrics of one model on one run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub model: String,
    pub seed: u64,
    pub queries: Vec<QueryMetrics>,
    pub mse_propen: Option<f64>,
}

impl MetricReport {
    /// Means in [`METRIC_COLUMNS`] order.
    pub fn means(&self) -> [f64; 4] {
        let mut m = [0.0; 4];
        for q in &self.queries {
            for (acc, v) in m.iter_mut().zip(q.values()) {
                *acc += v;
            }
        }
        let n = self.queries.len().max(1) as f64;
        m.map(|v| v / n)
    }

    /// Per-query values of column `col` (index into [`METRIC_COLUMNS`]).
    pub fn column(&self, col: usize) -> Vec<f64> {
        self.queries.iter().map(|q| q.values()[col]).collect()
    }

    pub fn ndcg10(&self) -> Vec<f64> {
        self.column(3)
    }

    /// `qid,err@3,ndcg@3,err@10,ndcg@10` rows followed by a `mean` row; MSE_propen
    /// goes in a trailing column on the mean row only.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# model={} seed={}\n", self.model, self.seed);
        out.push_str("qid,err@3,ndcg@3,err@10,ndcg@10,mse_propen\n");
        for q in &self.queries {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},\n",
                q.qid, q.err3, q.ndcg3, q.err10, q.ndcg10
            ));
        }
        let m = self.means();
        let mse = self.mse_propen.map_or(String::new(), |v| format!("{v:?}"));
        out.push_str(&format!("mean,{:?},{:?},{:?},{:?},{mse}\n", m[0], m[1], m[2], m[3]));
        out
    }

    /// Inverse of [`MetricReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, m: &str| Error::Parse {
            line: line + 1,
            message: m.to_string(),
        };
        let (_, head) = lines.next().ok_or_else(|| bad(0, "empty report"))?;
        let head = head
            .strip_prefix("# model=")
            .ok_or_else(|| bad(0, "missing model header"))?;
        let (model, seed) = head
            .split_once(" seed=")
            .ok_or_else(|| bad(0, "missing seed"))?;
        let seed = seed.parse().map_err(|_| bad(0, "bad seed"))?;
        lines.next();
        let mut queries = Vec::new();
        let mut mse_propen = None;
        for (no, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(no, "expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(no, "bad number"));
            if f[0] == "mean" {
                if !f[5].is_empty() {
                    mse_propen = Some(num(f[5])?);
                }
                continue;
            }
            queries.push(QueryMetrics {
                qid: f[0].to_string(),
                err3: num(f[1])?,
                ndcg3: num(f[2])?,
                err10: num(f[3])?,
                ndcg10: num(f[4])?,
            });
        }
        Ok(MetricReport {
            model: model.to_string(),
            seed,
            queries,
            mse_propen,
        })
    }
}

/// One row of the aggregate table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub model: String,
    pub means: [f64; 4],
    /// `'+'` significant improvement, `'-'` significant degradation, `' '` otherwise.
    pub marks: [char; 4],
    pub mse_propen: Option<f64>,
}

/// Significance marker for `model` against `baseline` on paired samples.
pub fn significance_mark(model: &[f64], baseline: &[f64], alpha: f64) -> Result<char> {
    let p = significance_test(model, baseline)?;
    if p >= alpha {
        return Ok(' ');
    }
    let diff: f64 = model.iter().zip(baseline).map(|(a, b)| a - b).sum();
    Ok(if diff > 0.0 { '+' } else { '-' })
}

/// Fixed-width text table: model, ERR@3, nDCG@3, ERR@10, nDCG@10, MSE_propen.
pub fn format_table(rows: &[TableRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}", "model");
    for c in METRIC_COLUMNS {
        out.push_str(&format!(" {c:>9}"));
    }
    out.push_str(&format!(" {:>11}\n", "MSE_propen"));
    for r in rows {
        out.push_str(&format!("{:<width$}", r.model));
        for (v, m) in r.means.iter().zip(r.marks) {
            out.push_str(&format!(" {v:>8.4}{m}"));
        }
        match r.mse_propen {
            Some(v) => out.push_str(&format!(" {v:>11.4}\n")),
            None => out.push_str(&format!(" {:>11}\n", "-")),
        }
    }
    out
}
