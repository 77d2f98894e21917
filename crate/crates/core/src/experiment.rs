//! Experiment orchestration: a flat `key = value` configuration, the
//! Prod → simulate → train → evaluate pipeline repeated per model and seed,
//! and the on-disk result bundle.
//!
//! Bundle layout under `output`:
//!
//! ```text
//! manifest.txt                      every config value with its source, every seed
//! aggregate.csv                     per-model means, p-values against the baseline
//! table.txt                         the same as a fixed-width table with markers
//! runs/prod/metrics.csv             display-order metrics of the production ranker
//! runs/<model>/rep<k>/metrics.csv   per-query test metrics
//! runs/<model>/rep<k>/history.csv   step, losses, MSE_propen, validation nDCG@10
//! runs/<model>/rep<k>/scorer.ckpt
//! runs/<model>/rep<k>/propensity.txt   DLA runs only
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::click::{make_curve, ClickNoiseConfig, CurveFamily, PropensityCurve};
use crate::dla::{evaluate, evaluate_display_order, history_csv, train_dla, train_naive, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::letor::{generate_synthetic, parse_letor, sample_fraction, Dataset, GenConfig, MinMaxScaler, ParseOptions};
use crate::metrics::{format_table, mse_propen, significance_mark, significance_test, MetricReport, TableRow, METRIC_COLUMNS};
use crate::prod::{rank_dataset, train_prod, ProdTrainConfig, RankedList};
use crate::scorer::{ArchConfig, ScorerKind};
use crate::seed::derive_seed;

/// Where a configuration value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    Preset,
    File,
    Override,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::Preset => "preset",
            Source::File => "file",
            Source::Override => "override",
        })
    }
}

/// Documented keys with their desk-protocol defaults.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("preset", "desk", "desk | long; long switches to the 60k-step protocol"),
    ("seed", "0", "master seed; every other seed derives from it"),
    ("repetitions", "5", "training runs per model"),
    ("output", "results", "bundle directory"),
    ("dataset", "synthetic", "`synthetic` or a path to a LETOR text file"),
    ("normalize", "auto", "none | minmax | auto (minmax for files, none for synthetic)"),
    ("max_label", "4", "largest relevance grade"),
    ("gen.n_queries", "1600", "synthetic queries"),
    ("gen.docs_per_query", "10", "synthetic documents per query"),
    ("gen.n_features", "64", "synthetic feature dimension"),
    ("gen.context_mix", "0", "cross-document weight in synthetic relevance, in [0, 1]"),
    ("gen.center_scale", "2", "spread of synthetic per-query feature centers"),
    ("split", "1000,100,500", "train,valid,test query counts taken in file order"),
    ("prod.fraction", "0.01", "fraction of training queries labelled for the production ranker"),
    ("prod.epochs", "5", "production ranker epochs"),
    ("prod.learning_rate", "0.01", "production ranker step size"),
    ("prod.regularization", "0.001", "production ranker L2 weight"),
    ("click.curve", "inverse_power", "inverse_power or a path to a propensity file"),
    ("click.eta", "1", "exponent of the inverse-power curve"),
    ("click.positions", "10", "positions of the inverse-power curve"),
    ("click.epsilon", "0.1", "click noise on irrelevant documents"),
    ("models", "mlp,set_attention,gru_init,gru_rever,mlp_naive", "scorer kinds; `<kind>_naive` trains on raw clicks"),
    ("baseline", "mlp", "model the significance markers compare against"),
    ("alpha", "0.05", "significance level"),
    ("train.batch_size", "64", "queries per step"),
    ("train.learning_rate_s", "0.02", "ranker step size"),
    ("train.learning_rate_e", "0.05", "propensity step size"),
    ("train.steps", "3000", "SGD steps"),
    ("train.list_size", "10", "training list length"),
    ("train.clip", "100", "cap on inverse weights"),
    ("train.alternating", "false", "alternate ranker and propensity updates"),
    ("train.fixed_log", "0", "impressions per query in a fixed click log; 0 draws fresh clicks"),
    ("train.eval_interval", "100", "steps between history rows; 0 disables"),
    ("arch.mlp_hidden", "32,16", "hidden widths of the per-document network"),
    ("arch.attn_width", "32", "attention model width"),
    ("arch.attn_heads", "4", "attention heads"),
    ("arch.attn_blocks", "2", "attention blocks"),
    ("arch.attn_ff", "64", "attention feed-forward width"),
    ("arch.gru_hidden", "32", "GRU state size"),
    ("mlp.steps", "8000", "per-model override of train.steps"),
    ("mlp.learning_rate_e", "0.02", "per-model override of train.learning_rate_e"),
    ("mlp_naive.steps", "8000", "per-model override of train.steps"),
];

/// Values the `long` preset replaces.
pub const LONG_PRESET: &[(&str, &str)] = &[
    ("train.steps", "60000"),
    ("train.learning_rate_s", "0.01"),
    ("train.learning_rate_e", "0.01"),
    ("mlp.steps", "60000"),
    ("mlp.learning_rate_e", "0.01"),
    ("mlp_naive.steps", "60000"),
    ("arch.mlp_hidden", "64,32"),
    ("arch.attn_width", "64"),
    ("arch.attn_ff", "128"),
    ("arch.gru_hidden", "64"),
];

const TRAIN_KEYS: [&str; 9] = [
    "batch_size",
    "learning_rate_s",
    "learning_rate_e",
    "steps",
    "list_size",
    "clip",
    "alternating",
    "fixed_log",
    "eval_interval",
];

/// Raw key/value pairs in the order they were supplied, each tagged with its source.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    pub entries: Vec<(String, String, Source)>,
}

impl RawConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{body}`"),
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string(), Source::File));
        }
        Ok(RawConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.push((key.to_string(), value.to_string(), Source::Override));
    }

    /// Parses a `key=value` command-line override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }
}

/// A model to train: a scorer kind, DLA or naive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ScorerKind,
    pub naive: bool,
}

impl ModelSpec {
    pub fn name(&self) -> String {
        if self.naive {
            format!("{}_naive", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, naive) = match s.strip_suffix("_naive") {
            Some(b) => (b, true),
            None => (s, false),
        };
        Ok(ModelSpec {
            kind: base.parse()?,
            naive,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(GenConfig),
    File(PathBuf),
}

/// Fully validated experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub repetitions: usize,
    pub output: PathBuf,
    pub data: DataSource,
    pub normalize: bool,
    pub max_label: u32,
    pub split: [usize; 3],
    pub prod_fraction: f64,
    pub prod: ProdTrainConfig,
    pub curve: CurveFamily,
    pub curve_positions: usize,
    pub noise: ClickNoiseConfig,
    pub models: Vec<ModelSpec>,
    pub baseline: String,
    pub alpha: f64,
    /// Training settings per model, in `models` order; `seed` is filled per run.
    pub train: Vec<TrainConfig>,
    /// Every key with its final value and source, schema order then per-model keys.
    pub resolved: Vec<(String, String, Source)>,
}

impl ExperimentConfig {
    /// `key = value  # source` lines.
    pub fn echo(&self) -> String {
        let width = self.resolved.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        self.resolved
            .iter()
            .map(|(k, v, s)| format!("{k:<width$} = {v}  # {s}\n"))
            .collect()
    }

    pub fn run_seed(&self, model: &ModelSpec, rep: usize) -> u64 {
        derive_seed(self.seed, &format!("run/{}/{rep}", model.name()))
    }
}

fn model_train_key(key: &str) -> Option<(&str, &str)> {
    let (model, field) = key.rsplit_once('.')?;
    (TRAIN_KEYS.contains(&field) && model.parse::<ModelSpec>().is_ok()).then_some((model, field))
}

/// Fills defaults, applies the preset, type-checks every value and checks
/// cross-field constraints. All problems are reported together.
pub fn validate_config(raw: &RawConfig) -> Result<ExperimentConfig> {
    let mut values: BTreeMap<String, (String, Source)> = SCHEMA
        .iter()
        .map(|(k, v, _)| (k.to_string(), (v.to_string(), Source::Default)))
        .collect();
    let mut errors: Vec<String> = Vec::new();

    let preset = raw
        .entries
        .iter()
        .rev()
        .find(|(k, _, _)| k == "preset")
        .map(|(_, v, _)| v.clone())
        .unwrap_or_else(|| "desk".into());
    match preset.as_str() {
        "desk" => {}
        "long" => {
            for (k, v) in LONG_PRESET {
                values.insert(k.to_string(), (v.to_string(), Source::Preset));
            }
        }
        other => errors.push(format!("preset: unknown preset `{other}` (desk | long)")),
    }
    for (k, v, s) in &raw.entries {
        if values.contains_key(k) || model_train_key(k).is_some() {
            values.insert(k.clone(), (v.clone(), *s));
        } else {
            errors.push(format!("{k}: unknown key"));
        }
    }

    let get = |k: &str| values[k].0.as_str();
    fn num<T: FromStr>(values: &BTreeMap<String, (String, Source)>, k: &str, errors: &mut Vec<String>) -> Option<T> {
        let v = &values[k].0;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                errors.push(format!("{k}: cannot parse `{v}`"));
                None
            }
        }
    }
    fn list<T: FromStr>(k: &str, v: &str, errors: &mut Vec<String>) -> Option<Vec<T>> {
        if v.trim().is_empty() {
            return Some(Vec::new());
        }
        let out: std::result::Result<Vec<T>, _> = v.split(',').map(|s| s.trim().parse::<T>()).collect();
        out.map_err(|_| errors.push(format!("{k}: cannot parse list `{v}`"))).ok()
    }

    let seed = num::<u64>(&values, "seed", &mut errors);
    let repetitions = num::<usize>(&values, "repetitions", &mut errors);
    if repetitions == Some(0) {
        errors.push("repetitions: must be at least 1".into());
    }
    let max_label = num::<u32>(&values, "max_label", &mut errors);
    let synthetic = get("dataset") == "synthetic";
    let normalize = match get("normalize") {
        "none" => Some(false),
        "minmax" => Some(true),
        "auto" => Some(!synthetic),
        v => {
            errors.push(format!("normalize: expected none | minmax | auto, got `{v}`"));
            None
        }
    };
    let gen = GenConfig {
        n_queries: num(&values, "gen.n_queries", &mut errors).unwrap_or(1),
        docs_per_query: num(&values, "gen.docs_per_query", &mut errors).unwrap_or(1),
        n_features: num(&values, "gen.n_features", &mut errors).unwrap_or(1),
        max_label: max_label.unwrap_or(1),
        context_mix: num(&values, "gen.context_mix", &mut errors).unwrap_or(0.0),
        center_scale: num(&values, "gen.center_scale", &mut errors).unwrap_or(1.0),
    };
    if synthetic {
        if let Err(e) = gen.validate() {
            errors.push(format!("gen: {}", message(&e)));
        }
    }
    let split = list::<usize>("split", get("split"), &mut errors).and_then(|v| {
        if v.len() == 3 {
            Some([v[0], v[1], v[2]])
        } else {
            errors.push("split: expected three counts train,valid,test".into());
            None
        }
    });
    if let Some(s) = split {
        if s[0] == 0 || s[2] == 0 {
            errors.push("split: train and test counts must be positive".into());
        }
        if synthetic && s.iter().sum::<usize>() > gen.n_queries {
            errors.push(format!(
                "split: counts total {} but gen.n_queries is {}",
                s.iter().sum::<usize>(),
                gen.n_queries
            ));
        }
    }
    let prod_fraction = num::<f64>(&values, "prod.fraction", &mut errors);
    if let Some(f) = prod_fraction {
        if !(f > 0.0 && f <= 1.0) {
            errors.push(format!("prod.fraction: {f} outside (0, 1]"));
        }
    }
    let prod = ProdTrainConfig {
        epochs: num(&values, "prod.epochs", &mut errors).unwrap_or(0),
        learning_rate: num(&values, "prod.learning_rate", &mut errors).unwrap_or(0.0),
        regularization: num(&values, "prod.regularization", &mut errors).unwrap_or(0.0),
    };
    let curve = match get("click.curve") {
        "inverse_power" => num::<f64>(&values, "click.eta", &mut errors).map(|eta| CurveFamily::InversePower { eta }),
        path => Some(CurveFamily::CustomFile { path: path.to_string() }),
    };
    let curve_positions = num::<usize>(&values, "click.positions", &mut errors).unwrap_or(0);
    if let Some(CurveFamily::InversePower { eta }) = &curve {
        if let Err(e) = PropensityCurve::inverse_power(*eta, curve_positions.max(1)) {
            errors.push(format!("click.eta: {}", message(&e)));
        }
    }
    let noise = ClickNoiseConfig {
        epsilon: num(&values, "click.epsilon", &mut errors).unwrap_or(0.1),
        max_label: max_label.unwrap_or(1),
    };
    if let Err(e) = noise.validate() {
        errors.push(format!("click.epsilon: {}", message(&e)));
    }

    let models = list::<ModelSpec>("models", get("models"), &mut errors).unwrap_or_default();
    if models.is_empty() {
        errors.push("models: at least one model is required".into());
    }
    let names: Vec<String> = models.iter().map(ModelSpec::name).collect();
    if let Some(dup) = names.iter().enumerate().find(|(i, n)| names[..*i].contains(n)) {
        errors.push(format!("models: `{}` listed twice", dup.1));
    }
    let baseline = get("baseline").to_string();
    if !names.is_empty() && !names.contains(&baseline) {
        errors.push(format!("baseline: `{baseline}` is not among models"));
    }
    let alpha = num::<f64>(&values, "alpha", &mut errors).unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        errors.push(format!("alpha: {alpha} outside (0, 1)"));
    }

    let arch = ArchConfig {
        mlp_hidden: list("arch.mlp_hidden", get("arch.mlp_hidden"), &mut errors).unwrap_or_default(),
        attn_width: num(&values, "arch.attn_width", &mut errors).unwrap_or(1),
        attn_heads: num(&values, "arch.attn_heads", &mut errors).unwrap_or(1),
        attn_blocks: num(&values, "arch.attn_blocks", &mut errors).unwrap_or(1),
        attn_ff: num(&values, "arch.attn_ff", &mut errors).unwrap_or(1),
        gru_hidden: num(&values, "arch.gru_hidden", &mut errors).unwrap_or(1),
    };

    let mut train = Vec::new();
    for m in &models {
        let name = m.name();
        let key = |field: &str| {
            let own = format!("{name}.{field}");
            if values.contains_key(&own) {
                own
            } else {
                format!("train.{field}")
            }
        };
        let before = errors.len();
        let fixed_log: usize = num(&values, &key("fixed_log"), &mut errors).unwrap_or(0);
        let cfg = TrainConfig {
            kind: m.kind,
            arch: arch.clone(),
            batch_size: num(&values, &key("batch_size"), &mut errors).unwrap_or(1),
            learning_rate_s: num(&values, &key("learning_rate_s"), &mut errors).unwrap_or(0.1),
            learning_rate_e: num(&values, &key("learning_rate_e"), &mut errors).unwrap_or(0.1),
            steps: num(&values, &key("steps"), &mut errors).unwrap_or(0),
            list_size: num(&values, &key("list_size"), &mut errors).unwrap_or(1),
            seed: 0,
            clip: num(&values, &key("clip"), &mut errors).unwrap_or(100.0),
            alternating: num(&values, &key("alternating"), &mut errors).unwrap_or(false),
            fixed_log: (fixed_log > 0).then_some(fixed_log),
            eval_interval: num(&values, &key("eval_interval"), &mut errors).unwrap_or(0),
        };
        if errors.len() == before {
            if let Some(CurveFamily::InversePower { .. }) = &curve {
                if cfg.list_size > curve_positions {
                    errors.push(format!(
                        "{}: list_size {} exceeds click.positions {curve_positions}",
                        key("list_size"),
                        cfg.list_size
                    ));
                    train.push(cfg);
                    continue;
                }
            }
            let probe = PropensityCurve::inverse_power(0.0, cfg.list_size.max(1))?;
            if let Err(e) = cfg.validate(&probe) {
                errors.push(format!("{name}: {}", message(&e)));
            }
        }
        train.push(cfg);
    }

    if !errors.is_empty() {
        errors.dedup();
        return Err(Error::Config(errors.join("; ")));
    }

    let mut resolved: Vec<(String, String, Source)> = SCHEMA
        .iter()
        .map(|(k, _, _)| {
            let (v, s) = &values[*k];
            (k.to_string(), v.clone(), *s)
        })
        .collect();
    resolved[0] = ("preset".into(), preset.clone(), values["preset"].1);
    for (k, (v, s)) in &values {
        if !SCHEMA.iter().any(|(sk, _, _)| sk == k) {
            resolved.push((k.clone(), v.clone(), *s));
        }
    }

    Ok(ExperimentConfig {
        preset,
        seed: seed.unwrap_or(0),
        repetitions: repetitions.unwrap_or(1),
        output: PathBuf::from(get("output")),
        data: if synthetic {
            DataSource::Synthetic(gen)
        } else {
            DataSource::File(PathBuf::from(get("dataset")))
        },
        normalize: normalize.unwrap_or(false),
        max_label: max_label.unwrap_or(4),
        split: split.unwrap_or([0; 3]),
        prod_fraction: prod_fraction.unwrap_or(0.01),
        prod,
        curve: curve.expect("validated"),
        curve_positions,
        noise,
        models,
        baseline,
        alpha,
        train,
        resolved,
    })
}

fn message(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Train/valid/test lists in production-ranker display order.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Vec<RankedList>,
    pub valid: Vec<RankedList>,
    pub test: Vec<RankedList>,
    pub curve: PropensityCurve,
    pub max_label: u32,
}

/// Loads or generates the dataset, splits, normalizes, trains the production
/// ranker on a labelled sample and ranks every split with it.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let data = match &cfg.data {
        DataSource::Synthetic(gen) => generate_synthetic(gen, derive_seed(cfg.seed, "data"))?,
        DataSource::File(path) => {
            let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
            let opts = ParseOptions {
                max_label: cfg.max_label,
                ..ParseOptions::default()
            };
            parse_letor(BufReader::new(file), &opts)?
        }
    };
    let curve = match &cfg.curve {
        CurveFamily::InversePower { eta } => PropensityCurve::inverse_power(*eta, cfg.curve_positions)?,
        family @ CurveFamily::CustomFile { .. } => {
            let longest = cfg.train.iter().map(|t| t.list_size).max().unwrap_or(1);
            make_curve(family, longest)?
        }
    };
    let mut parts = data.split(&cfg.split)?;
    if cfg.normalize {
        let scaler = MinMaxScaler::fit(&parts[0]);
        for p in parts.iter_mut() {
            scaler.transform(p);
        }
    }
    let [train, valid, test]: [Dataset; 3] = parts.try_into().expect("three parts");
    let sample = sample_fraction(&train, cfg.prod_fraction, derive_seed(cfg.seed, "prod/sample"))?;
    let prod = train_prod(&sample, &cfg.prod, derive_seed(cfg.seed, "prod/train"))?;
    Ok(PreparedData {
        train: rank_dataset(&prod, &train, derive_seed(cfg.seed, "prod/ties/train"))?,
        valid: rank_dataset(&prod, &valid, derive_seed(cfg.seed, "prod/ties/valid"))?,
        test: rank_dataset(&prod, &test, derive_seed(cfg.seed, "prod/ties/test"))?,
        curve,
        max_label: data.max_label,
    })
}

/// One training run's outputs.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: String,
    pub rep: usize,
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub report: MetricReport,
    /// Final learned `G¹/Gⁱ`, DLA runs only.
    pub ratios: Option<Vec<f64>>,
}

/// Trains one model once and evaluates it on the test lists.
pub fn run_single(cfg: &ExperimentConfig, data: &PreparedData, model_index: usize, rep: usize) -> Result<RunResult> {
    let spec = cfg.models[model_index];
    let seed = cfg.run_seed(&spec, rep);
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train[model_index].clone()
    };
    let outcome = if spec.naive {
        train_naive(&data.train, &data.valid, &data.curve, &cfg.noise, &train_cfg)?
    } else {
        train_dla(&data.train, &data.valid, &data.curve, &cfg.noise, &train_cfg)?
    };
    let mut report = evaluate(
        &outcome.scorer,
        &data.test,
        data.max_label,
        derive_seed(seed, "test"),
        &spec.name(),
        seed,
    )?;
    let ratios = outcome.propensity.as_ref().map(|p| p.ratios());
    if let Some(r) = &ratios {
        report.mse_propen = Some(mse_propen(r, &data.curve.inverse_ratios(r.len()))?);
    }
    Ok(RunResult {
        model: spec.name(),
        rep,
        seed,
        outcome,
        report,
        ratios,
    })
}

/// All runs of one model.
#[derive(Clone, Debug)]
pub struct ModelSummary {
    pub name: String,
    pub runs: Vec<RunResult>,
    /// Per-query values averaged over repetitions, one vector per metric column.
    pub per_query: [Vec<f64>; 4],
}

impl ModelSummary {
    fn from_reports(name: String, reports: &[&MetricReport]) -> Self {
        let n = reports[0].queries.len();
        let per_query = std::array::from_fn(|c| {
            (0..n)
                .map(|q| reports.iter().map(|r| r.column(c)[q]).sum::<f64>() / reports.len() as f64)
                .collect()
        });
        ModelSummary {
            name,
            runs: Vec::new(),
            per_query,
        }
    }

    pub fn means(&self) -> [f64; 4] {
        std::array::from_fn(|c| self.per_query[c].iter().sum::<f64>() / self.per_query[c].len().max(1) as f64)
    }

    pub fn mean_mse_propen(&self) -> Option<f64> {
        let v: Vec<f64> = self.runs.iter().filter_map(|r| r.report.mse_propen).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Paired two-tailed p-value against `other` on column `col`.
    pub fn p_value(&self, other: &ModelSummary, col: usize) -> Result<f64> {
        significance_test(&self.per_query[col], &other.per_query[col])
    }
}

/// Everything `run_experiment` computed, in memory.
#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    /// Trained models in config order, then the production ranker as `prod`.
    pub models: Vec<ModelSummary>,
    pub table: Vec<TableRow>,
}

impl ExperimentSummary {
    pub fn model(&self, name: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.name == name)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn manifest(cfg: &ExperimentConfig) -> String {
    let mut out = format!("# autoultr experiment manifest\nprotocol = {}\n", cfg.preset);
    out.push_str(&cfg.echo());
    out.push_str(&format!("seed.data = {}\n", derive_seed(cfg.seed, "data")));
    out.push_str(&format!("seed.prod_sample = {}\n", derive_seed(cfg.seed, "prod/sample")));
    out.push_str(&format!("seed.prod_train = {}\n", derive_seed(cfg.seed, "prod/train")));
    for m in &cfg.models {
        for rep in 0..cfg.repetitions {
            out.push_str(&format!("seed.run.{}.{rep} = {}\n", m.name(), cfg.run_seed(m, rep)));
        }
    }
    out
}

/// Runs every model × repetition, writes the bundle and returns the summary.
/// Dataset and output directory problems surface before any training.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(cfg.output.display().to_string(), e))?;
    write(&cfg.output.join("manifest.txt"), &manifest(cfg))?;
    let data = prepare_data(cfg)?;

    let mut models = Vec::new();
    for (mi, spec) in cfg.models.iter().enumerate() {
        let mut runs = Vec::new();
        for rep in 0..cfg.repetitions {
            let run = run_single(cfg, &data, mi, rep)?;
            let dir = cfg.output.join("runs").join(spec.name()).join(format!("rep{rep}"));
            write(&dir.join("metrics.csv"), &run.report.to_csv())?;
            write(&dir.join("history.csv"), &history_csv(&run.outcome.history))?;
            write(&dir.join("scorer.ckpt"), &run.outcome.scorer.to_checkpoint())?;
            if let Some(p) = &run.outcome.propensity {
                write(&dir.join("propensity.txt"), &p.to_text())?;
            }
            runs.push(run);
        }
        let reports: Vec<&MetricReport> = runs.iter().map(|r| &r.report).collect();
        let mut summary = ModelSummary::from_reports(spec.name(), &reports);
        summary.runs = runs;
        models.push(summary);
    }
    let prod_report = evaluate_display_order(&data.test, data.max_label, "prod", cfg.seed)?;
    write(&cfg.output.join("runs").join("prod").join("metrics.csv"), &prod_report.to_csv())?;
    models.push(ModelSummary::from_reports("prod".into(), &[&prod_report]));

    let base = models.iter().position(|m| m.name == cfg.baseline).expect("validated baseline");
    let mut table = Vec::new();
    let mut csv = String::from("model,reps");
    for c in METRIC_COLUMNS {
        csv.push_str(&format!(",{}", c.to_lowercase()));
    }
    csv.push_str(",mse_propen");
    for c in METRIC_COLUMNS {
        csv.push_str(&format!(",p_{}", c.to_lowercase()));
    }
    csv.push('\n');
    for m in &models {
        let means = m.means();
        let mut marks = [' '; 4];
        let mut ps = [f64::NAN; 4];
        if m.name != cfg.baseline {
            for c in 0..4 {
                ps[c] = m.p_value(&models[base], c)?;
                marks[c] = significance_mark(&m.per_query[c], &models[base].per_query[c], cfg.alpha)?;
            }
        }
        let mse = m.mean_mse_propen();
        csv.push_str(&format!("{},{}", m.name, m.runs.len().max(1)));
        for v in means {
            csv.push_str(&format!(",{v:?}"));
        }
        csv.push_str(&format!(",{}", mse.map_or(String::new(), |v| format!("{v:?}"))));
        for p in ps {
            csv.push_str(&if p.is_nan() { ",".to_string() } else { format!(",{p:?}") });
        }
        csv.push('\n');
        table.push(TableRow {
            model: m.name.clone(),
            means,
            marks,
            mse_propen: mse,
        });
    }
    write(&cfg.output.join("aggregate.csv"), &csv)?;
    let mut text = format_table(&table);
    text.push_str(&format!(
        "\n+/- : significantly better/worse than {} (paired t-test on per-query values averaged over {} repetitions, p < {})\n",
        cfg.baseline, cfg.repetitions, cfg.alpha
    ));
    write(&cfg.output.join("table.txt"), &text)?;
    Ok(ExperimentSummary { models, table })
}
