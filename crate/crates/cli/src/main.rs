use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autoultr::click::{click_log_tsv, sample_clicks};
use autoultr::diff::GradCheckConfig;
use autoultr::dla::evaluate;
use autoultr::experiment::{prepare_data, run_experiment, validate_config, ExperimentConfig, RawConfig};
use autoultr::letor::{parse_letor, MinMaxScaler, ParseOptions};
use autoultr::permcheck::{check_distributional, check_invariance, PermCheckConfig};
use autoultr::prod::RankedList;
use autoultr::scorer::{gradcheck_suite, ArchConfig, Scorer, ScorerKind};
use autoultr::seed::derive_seed;
use autoultr::{Error, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "autoultr", version, about = "Unbiased learning to rank with the dual learning algorithm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment and write its result bundle.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Finite-difference check of every kernel and scorer.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Check that scorers commute with permutations of their input list.
    Permcheck(PermArgs),
    /// Dump simulated clicks on the production ranking.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Impressions per query.
        #[arg(long, default_value_t = 1)]
        impressions: usize,
        /// train, valid or test.
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-query metrics of a scorer checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// LETOR file scored in full; without it the configured test split is used.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Fit min-max scaling on this LETOR file and apply it to --dataset.
        #[arg(long)]
        scale_from: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        max_label: u32,
        #[arg(long, default_value_t = 0)]
        order_seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        for pair in &self.overrides {
            raw.set_pair(pair)?;
        }
        validate_config(&raw)
    }
}

#[derive(Args)]
struct PermArgs {
    /// Scorer kinds, comma separated, or `all`.
    #[arg(long, default_value = "all")]
    kinds: String,
    #[arg(long, default_value_t = 5)]
    list_length: usize,
    #[arg(long, default_value_t = 10)]
    inputs: usize,
    /// Sampled permutations per input when the list is too long to enumerate.
    #[arg(long, default_value_t = 100)]
    perms: usize,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Check a trained checkpoint instead of freshly initialized scorers.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write a witness file per failing scorer here.
    #[arg(long)]
    witness_dir: Option<PathBuf>,
    /// Also compare score distributions over this many order seeds.
    #[arg(long)]
    order_seeds: Option<usize>,
    #[arg(long, default_value_t = autoultr::permcheck::DEFAULT_Z_THRESHOLD)]
    z_threshold: f64,
    /// Exit nonzero if any scorer fails.
    #[arg(long)]
    strict: bool,
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn cmd_run(config: &ConfigArgs, dry_run: bool) -> Result<()> {
    let cfg = config.resolve()?;
    if dry_run {
        return emit(&None, &cfg.echo());
    }
    run_experiment(&cfg)?;
    let table = fs::read_to_string(cfg.output.join("table.txt")).map_err(|e| io_err(&cfg.output, e))?;
    emit(&None, &format!("{table}bundle: {}\n", cfg.output.display()))
}

fn cmd_gradcheck(seeds: u64, tolerance: f64, step: f64) -> Result<()> {
    let cfg = GradCheckConfig {
        step,
        tolerance,
        ..GradCheckConfig::default()
    };
    let entries = gradcheck_suite(seeds, cfg)?;
    let mut by_name: BTreeMap<&str, (bool, f64, u64)> = BTreeMap::new();
    for e in &entries {
        let slot = by_name.entry(&e.name).or_insert((true, 0.0, 0));
        slot.0 &= e.report.pass;
        if e.report.max_rel_error() >= slot.1 {
            slot.1 = e.report.max_rel_error();
            slot.2 = e.seed;
        }
    }
    let mut text = String::new();
    for (name, (pass, worst, seed)) in &by_name {
        text.push_str(&format!(
            "{name}: {} seeds={seeds} max_rel_error={worst:.3e} worst_seed={seed}\n",
            if *pass { "PASS" } else { "FAIL" }
        ));
    }
    emit(&None, &text)?;
    match entries.iter().find(|e| !e.report.pass) {
        None => Ok(()),
        Some(e) => Err(Error::Check {
            param: e.report.worst().map_or(String::new(), |p| p.name.clone()),
            message: format!("{} seed {} relative error {:.3e}", e.name, e.seed, e.report.max_rel_error()),
        }),
    }
}

fn cmd_permcheck(a: &PermArgs) -> Result<()> {
    let scorers: Vec<Scorer> = match &a.checkpoint {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            vec![Scorer::from_checkpoint(&text)?]
        }
        None => {
            let kinds: Vec<ScorerKind> = if a.kinds == "all" {
                ScorerKind::ALL.to_vec()
            } else {
                a.kinds.split(',').map(|k| k.trim().parse()).collect::<Result<_>>()?
            };
            let arch = ArchConfig {
                mlp_hidden: vec![16, 8],
                attn_width: 16,
                attn_heads: 4,
                attn_blocks: 2,
                attn_ff: 32,
                gru_hidden: 16,
            };
            kinds
                .into_iter()
                .map(|k| Scorer::init(k, a.dim, &arch, derive_seed(a.seed, k.name())))
                .collect::<Result<_>>()?
        }
    };
    let cfg = PermCheckConfig {
        list_length: a.list_length,
        n_inputs: a.inputs,
        n_perms_per_input: a.perms,
        tolerance: a.tolerance,
        seed: a.seed,
        ..PermCheckConfig::default()
    };
    let mut text = String::new();
    let mut failed = Vec::new();
    for s in &scorers {
        let name = s.kind().name();
        let v = check_invariance(s, &cfg)?;
        text.push_str(&v.report(name));
        text.push('\n');
        if !v.pass {
            failed.push(name);
        }
        if let (Some(dir), Some(w)) = (&a.witness_dir, &v.witness) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            let path = dir.join(format!("{name}.witness"));
            fs::write(&path, w.to_text()).map_err(|e| io_err(&path, e))?;
            text.push_str(&format!("{name}: witness {}\n", path.display()));
        }
        if let Some(n) = a.order_seeds {
            let d = check_distributional(s, &cfg, n, a.z_threshold)?;
            text.push_str(&format!(
                "{name}: distributional {} trials={} max_z={:.3} threshold={}\n",
                if d.pass { "PASS" } else { "FAIL" },
                d.trials,
                d.max_z,
                d.threshold
            ));
        }
    }
    emit(&None, &text)?;
    if a.strict && !failed.is_empty() {
        return Err(Error::Check {
            param: failed.join(","),
            message: "permutation invariance violated".into(),
        });
    }
    Ok(())
}

fn cmd_simulate(config: &ConfigArgs, impressions: usize, split: &str, out: &Option<PathBuf>) -> Result<()> {
    let cfg = config.resolve()?;
    let data = prepare_data(&cfg)?;
    let lists = match split {
        "train" => &data.train,
        "valid" => &data.valid,
        "test" => &data.test,
        other => return Err(Error::Usage(format!("unknown split `{other}` (train | valid | test)"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("simulate/{split}")));
    let mut logs = Vec::with_capacity(lists.len() * impressions);
    let mut id = 0;
    for list in lists {
        let shown = list.truncated(data.curve.len());
        for _ in 0..impressions {
            logs.push(sample_clicks(&shown, &data.curve, &cfg.noise, &mut rng, id)?);
            id += 1;
        }
    }
    emit(out, &format!("# qid\timpression\tdisplay_order\tclicks\n{}", click_log_tsv(&logs)))
}

fn read_letor(path: &Path, max_label: u32) -> Result<autoultr::letor::Dataset> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let opts = ParseOptions {
        max_label,
        ..ParseOptions::default()
    };
    parse_letor(BufReader::new(file), &opts)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    dataset: &Option<PathBuf>,
    scale_from: &Option<PathBuf>,
    max_label: u32,
    order_seed: u64,
    config: &ConfigArgs,
    out: &Option<PathBuf>,
) -> Result<()> {
    let text = fs::read_to_string(checkpoint).map_err(|e| io_err(checkpoint, e))?;
    let scorer = Scorer::from_checkpoint(&text)?;
    let (lists, max_label) = match dataset {
        Some(path) => {
            let mut ds = read_letor(path, max_label)?;
            if let Some(fit) = scale_from {
                MinMaxScaler::fit(&read_letor(fit, max_label)?).transform(&mut ds);
            }
            (ds.queries.iter().map(RankedList::identity).collect::<Vec<_>>(), ds.max_label)
        }
        None => {
            let data = prepare_data(&config.resolve()?)?;
            (data.test, data.max_label)
        }
    };
    if let Some(l) = lists.first() {
        if l.features.first().map_or(0, Vec::len) != scorer.input_dim() {
            return Err(Error::Shape {
                context: "eval".into(),
                message: format!(
                    "checkpoint expects {} features, dataset has {}",
                    scorer.input_dim(),
                    l.features[0].len()
                ),
            });
        }
    }
    let report = evaluate(&scorer, &lists, max_label, order_seed, scorer.kind().name(), order_seed)?;
    emit(out, &report.to_csv())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", error_line("usage", &first));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Run { config, dry_run } => cmd_run(config, *dry_run),
        Command::Gradcheck { seeds, tolerance, step } => cmd_gradcheck(*seeds, *tolerance, *step),
        Command::Permcheck(a) => cmd_permcheck(a),
        Command::Simulate {
            config,
            impressions,
            split,
            out,
        } => cmd_simulate(config, *impressions, split, out),
        Command::Eval {
            checkpoint,
            dataset,
            scale_from,
            max_label,
            order_seed,
            config,
            out,
        } => cmd_eval(checkpoint, dataset, scale_from, *max_label, *order_seed, config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::from(if matches!(e, Error::Usage(_)) { 2 } else { 1 })
        }
    }
}
