use autoultr::click::{sample_click_vector, ClickNoiseConfig, PropensityCurve};
use autoultr::diff::{GradCheckConfig, Matrix};
use autoultr::dla::{full_information_loss, ipw_loss, irw_loss, list_distribution};
use autoultr::experiment::{run_experiment as run, validate_config as validate, RawConfig};
use autoultr::letor::{generate_synthetic as generate, GenConfig};
use autoultr::metrics;
use autoultr::permcheck::{check_invariance as check, PermCheckConfig};
use autoultr::scorer::{scorer_gradcheck, ArchConfig, ScorerKind};
use autoultr::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for autoultr::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).py()
}

/// A listwise scoring function.
#[pyclass(name = "Scorer", module = "autoultr_py")]
struct PyScorer {
    inner: autoultr::scorer::Scorer,
}

#[pymethods]
impl PyScorer {
    /// `kind` is one of mlp, set_attention, gru_init, gru_rever, gru_rand.
    #[new]
    #[pyo3(signature = (kind, input_dim, seed=0, mlp_hidden=vec![32, 16], attn_width=32, attn_heads=4, attn_blocks=2, attn_ff=64, gru_hidden=32))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        input_dim: usize,
        seed: u64,
        mlp_hidden: Vec<usize>,
        attn_width: usize,
        attn_heads: usize,
        attn_blocks: usize,
        attn_ff: usize,
        gru_hidden: usize,
    ) -> PyResult<Self> {
        let kind: ScorerKind = kind.parse().py()?;
        let arch = ArchConfig {
            mlp_hidden,
            attn_width,
            attn_heads,
            attn_blocks,
            attn_ff,
            gru_hidden,
        };
        Ok(PyScorer {
            inner: autoultr::scorer::Scorer::init(kind, input_dim, &arch, seed).py()?,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params().num_scalars()
    }

    /// Scores one list given as rows of features.
    #[pyo3(signature = (features, order_seed=0))]
    fn score(&self, features: Vec<Vec<f64>>, order_seed: u64) -> PyResult<Vec<f64>> {
        self.inner.score(&matrix(&features)?, order_seed).py()
    }

    fn to_checkpoint(&self) -> String {
        self.inner.to_checkpoint()
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        Ok(PyScorer {
            inner: autoultr::scorer::Scorer::from_checkpoint(text).py()?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scorer(kind={}, input_dim={}, params={})",
            self.inner.kind(),
            self.inner.input_dim(),
            self.inner.params().num_scalars()
        )
    }
}

/// Observation probabilities `(1/i)^eta` for positions 1..=n.
#[pyfunction]
fn inverse_power(eta: f64, n: usize) -> PyResult<Vec<f64>> {
    Ok(PropensityCurve::inverse_power(eta, n).py()?.probs().to_vec())
}

/// One impression of clicks on a list of displayed labels.
#[pyfunction]
#[pyo3(signature = (labels, eta=1.0, epsilon=0.1, max_label=4, seed=0))]
fn sample_clicks(labels: Vec<u32>, eta: f64, epsilon: f64, max_label: u32, seed: u64) -> PyResult<Vec<u8>> {
    let curve = PropensityCurve::inverse_power(eta, labels.len()).py()?;
    let noise = ClickNoiseConfig { epsilon, max_label };
    noise.validate().py()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_click_vector(&labels, &curve, &noise, &mut rng).py()
}

#[pyfunction]
fn softmax(scores: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(list_distribution(&scores, None).py()?.probs)
}

/// IPW loss for clicks under ranker distribution `f` and propensity distribution `g`.
#[pyfunction(name = "ipw_loss")]
fn py_ipw_loss(clicks: Vec<u8>, f: Vec<f64>, g: Vec<f64>) -> PyResult<f64> {
    let (f, g) = (dist(f), dist(g));
    Ok(ipw_loss(&clicks, &f, &g).py()?.value)
}

#[pyfunction(name = "irw_loss")]
fn py_irw_loss(clicks: Vec<u8>, f: Vec<f64>, g: Vec<f64>) -> PyResult<f64> {
    let (f, g) = (dist(f), dist(g));
    Ok(irw_loss(&clicks, &f, &g).py()?.value)
}

#[pyfunction(name = "full_information_loss")]
fn py_full_information_loss(f: Vec<f64>, relevance_probs: Vec<f64>) -> PyResult<f64> {
    full_information_loss(&dist(f), &relevance_probs).py()
}

fn dist(probs: Vec<f64>) -> autoultr::dla::ListDistribution {
    autoultr::dla::ListDistribution { probs }
}

#[pyfunction]
fn ndcg_at_k(labels: Vec<u32>, k: usize) -> PyResult<f64> {
    metrics::ndcg_at_k(&labels, k).py()
}

#[pyfunction]
#[pyo3(signature = (labels, k, max_label=4))]
fn err_at_k(labels: Vec<u32>, k: usize, max_label: u32) -> PyResult<f64> {
    metrics::err_at_k(&labels, k, max_label).py()
}

#[pyfunction]
fn mse_propen(estimated: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::mse_propen(&estimated, &truth).py()
}

/// Two-tailed paired t-test p-value.
#[pyfunction]
fn significance_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::significance_test(&a, &b).py()
}

/// Synthetic dataset as a list of `(qid, labels, features)` tuples.
#[pyfunction]
#[pyo3(signature = (n_queries=100, docs_per_query=10, n_features=64, context_mix=0.0, center_scale=2.0, seed=0))]
#[allow(clippy::type_complexity)]
fn generate_synthetic(
    n_queries: usize,
    docs_per_query: usize,
    n_features: usize,
    context_mix: f64,
    center_scale: f64,
    seed: u64,
) -> PyResult<Vec<(String, Vec<u32>, Vec<Vec<f64>>)>> {
    let cfg = GenConfig {
        n_queries,
        docs_per_query,
        n_features,
        context_mix,
        center_scale,
        ..GenConfig::default()
    };
    let ds = generate(&cfg, seed).py()?;
    Ok(ds
        .queries
        .into_iter()
        .map(|q| {
            let labels = q.labels();
            (q.qid, labels, q.documents.into_iter().map(|d| d.features).collect())
        })
        .collect())
}

/// Permutation-invariance check; returns a dict with pass, trials,
/// max_violation, exhaustive and, on failure, a witness dump.
#[pyfunction]
#[pyo3(signature = (scorer, list_length=5, n_inputs=10, n_perms=100, tolerance=1e-9, seed=0))]
fn check_invariance<'py>(
    py: Python<'py>,
    scorer: &PyScorer,
    list_length: usize,
    n_inputs: usize,
    n_perms: usize,
    tolerance: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = PermCheckConfig {
        list_length,
        n_inputs,
        n_perms_per_input: n_perms,
        tolerance,
        seed,
        ..PermCheckConfig::default()
    };
    let v = check(&scorer.inner, &cfg).py()?;
    let d = PyDict::new(py);
    d.set_item("pass", v.pass)?;
    d.set_item("trials", v.trials)?;
    d.set_item("max_violation", v.max_violation)?;
    d.set_item("exhaustive", v.exhaustive)?;
    d.set_item("witness", v.witness.map(|w| w.to_text()))?;
    Ok(d)
}

/// Finite-difference check of one scorer kind; returns `(pass, max_rel_error)`.
#[pyfunction]
#[pyo3(signature = (kind, seed=0, tolerance=1e-4))]
fn gradcheck(kind: &str, seed: u64, tolerance: f64) -> PyResult<(bool, f64)> {
    let kind: ScorerKind = kind.parse().py()?;
    let cfg = GradCheckConfig {
        tolerance,
        ..GradCheckConfig::default()
    };
    let r = scorer_gradcheck(kind, seed, cfg).py()?;
    Ok((r.pass, r.max_rel_error()))
}

fn raw_config(config: Vec<(String, String)>) -> RawConfig {
    let mut raw = RawConfig::default();
    for (k, v) in config {
        raw.set(&k, &v);
    }
    raw
}

/// Resolved configuration as `key = value  # source` text.
#[pyfunction]
#[pyo3(signature = (config=Vec::new()))]
fn validate_config(config: Vec<(String, String)>) -> PyResult<String> {
    Ok(validate(&raw_config(config)).py()?.echo())
}

/// Runs an experiment from `(key, value)` pairs; returns the table rows as
/// `(model, [err@3, ndcg@3, err@10, ndcg@10], marks, mse_propen)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn run_experiment(
    py: Python<'_>,
    config: Vec<(String, String)>,
) -> PyResult<Vec<(String, Vec<f64>, String, Option<f64>)>> {
    let cfg = validate(&raw_config(config)).py()?;
    let summary = py.detach(|| run(&cfg)).py()?;
    Ok(summary
        .table
        .into_iter()
        .map(|r| (r.model, r.means.to_vec(), r.marks.iter().collect(), r.mse_propen))
        .collect())
}

#[pymodule]
fn autoultr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScorer>()?;
    m.add_function(wrap_pyfunction!(inverse_power, m)?)?;
    m.add_function(wrap_pyfunction!(sample_clicks, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(py_ipw_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_irw_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_full_information_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(err_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mse_propen, m)?)?;
    m.add_function(wrap_pyfunction!(significance_test, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(check_invariance, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
