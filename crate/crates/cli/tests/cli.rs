use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn autoultr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autoultr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().expect("error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not json: {line}"))
}

const TINY: &str = "\
gen.n_queries = 40
gen.n_features = 3
split = 20,5,15
prod.fraction = 0.25
repetitions = 1
models = mlp,gru_init,mlp_naive
train.steps = 4
mlp.steps = 4
mlp_naive.steps = 4
train.eval_interval = 2
arch.mlp_hidden = 4
arch.gru_hidden = 3
";

fn write_config(dir: &Path) -> String {
    let path = dir.join("exp.cfg");
    fs::write(&path, format!("{TINY}output = {}\n", dir.join("out").display())).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_bundle_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let first = autoultr(&["run", "--config", &cfg]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("nDCG@10"));
    let a = fs::read(dir.path().join("out/aggregate.csv")).unwrap();
    let second = autoultr(&["run", "--config", &cfg]);
    assert!(second.status.success());
    assert_eq!(a, fs::read(dir.path().join("out/aggregate.csv")).unwrap());
    assert!(dir.path().join("out/runs/gru_init/rep0/history.csv").exists());
}

#[test]
fn dry_run_echoes_sources() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = autoultr(&["run", "--config", &cfg, "--set", "seed=3", "--dry-run"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("seed") && l.contains("= 3") && l.ends_with("# override")));
    assert!(text.lines().any(|l| l.starts_with("gen.n_queries") && l.ends_with("# file")));
    assert!(text.lines().any(|l| l.starts_with("click.eta") && l.ends_with("# default")));
}

#[test]
fn config_error_is_a_json_line() {
    let o = autoultr(&["run", "--set", "train.list_size=20", "--set", "prod.fraction=3"]);
    assert_eq!(o.status.code(), Some(1));
    let v = error_json(&o);
    assert_eq!(v["error"]["kind"], "config");
    let msg = v["error"]["message"].as_str().unwrap();
    assert!(msg.contains("list_size") && msg.contains("prod.fraction"), "{msg}");
}

#[test]
fn usage_error_is_a_json_line() {
    let o = autoultr(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "usage");
    let o = autoultr(&["run", "--set", "noequals"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_file_is_an_io_error() {
    let o = autoultr(&["eval", "--checkpoint", "/nonexistent/x.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"]["kind"], "io");
}

#[test]
fn gradcheck_passes() {
    let o = autoultr(&["gradcheck", "--seeds", "2"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("scorer/set_attention: PASS"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn permcheck_reports_and_dumps_witness() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path().join("w");
    let o = autoultr(&["permcheck", "--inputs", "2", "--witness-dir", wd.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("mlp: PASS"));
    assert!(text.contains("set_attention: PASS"));
    assert!(text.contains("gru_init: FAIL"));
    assert!(fs::read_to_string(wd.join("gru_init.witness")).unwrap().starts_with("permutation "));
    let strict = autoultr(&["permcheck", "--inputs", "2", "--kinds", "gru_rever", "--strict"]);
    assert_eq!(strict.status.code(), Some(1));
    assert_eq!(error_json(&strict)["error"]["kind"], "check");
    let bad = autoultr(&["permcheck", "--tolerance", "0"]);
    assert_eq!(error_json(&bad)["error"]["kind"], "config");
}

#[test]
fn simulate_dumps_one_line_per_impression() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("clicks.tsv");
    let o = autoultr(&["simulate", "--config", &cfg, "--impressions", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 20 * 3);
    assert!(rows.iter().all(|r| r.split('\t').count() == 4));
}

#[test]
fn eval_scores_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert!(autoultr(&["run", "--config", &cfg]).status.success());
    let ckpt = dir.path().join("out/runs/mlp/rep0/scorer.ckpt");
    let o = autoultr(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let body = |t: &str| {
        t.lines()
            .skip(1)
            .filter(|l| !l.starts_with("mean,"))
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    let saved = fs::read_to_string(dir.path().join("out/runs/mlp/rep0/metrics.csv")).unwrap();
    assert_eq!(body(&stdout(&o)), body(&saved));
    let letor = dir.path().join("d.txt");
    fs::write(&letor, "2 qid:1 1:0.5 2:0.1\n0 qid:1 1:0.1 2:0.2\n").unwrap();
    let o = autoultr(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", letor.to_str().unwrap()]);
    assert_eq!(error_json(&o)["error"]["kind"], "shape");
}
