use gridshield::experiment::{load_data, new_model, Role, RunConfig};
use gridshield::nn::load_model;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
case = "ieee14"
seed = 3

[pipeline]
train_days = 2
test_days = 2

[model]
hidden = [8, 4, 4, 8]

[baseline]
hidden = [8, 4, 4, 8]

[train]
epochs = 2
batch_size = 64
learning_rate = 0.001

[baseline_train]
epochs = 2
batch_size = 64
learning_rate = 0.001

[campaign]
buses = [2, 4]
mus = [0.1, -0.1]
gammas = [0.0, 0.1]
steps = [1]
windows_per_case = 2
replay_windows = 5
"#;

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{TINY}\n{extra}")).unwrap();
    path
}

fn gs(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridshield"))
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    o
}

fn pipeline(config: &Path, out: &Path) -> String {
    ok(gs(config, out, &["gen-data"]));
    ok(gs(config, out, &["train"]));
    ok(gs(config, out, &["calibrate"]));
    ok(gs(config, out, &["attack"]));
    String::from_utf8(ok(gs(config, out, &["evaluate"])).stdout).unwrap()
}

#[test]
fn five_stage_pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let csv_a = pipeline(&cfg, &a);
    let csv_b = pipeline(&cfg, &b);
    assert_eq!(csv_a, csv_b);
    for f in ["data/train_series.bin", "data/test_series.bin", "model.gsm", "model_thresholds.json", "campaign/campaign.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    for f in ["report.csv", "report.json", "fpr_vs_alpha.svg", "rate_vs_mu.svg", "rate_vs_gamma.csv"] {
        let pa = a.join("model_report").join(f);
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(b.join("model_report").join(f)).unwrap(), "{f}");
    }
    // fdia at gamma 0 and 0.1, replay, and the clean row.
    assert_eq!(csv_a.lines().count(), 1 + 3 + 1, "{csv_a}");
    assert!(csv_a.lines().last().unwrap().starts_with("clean,"));

    // The baseline runs through the same stages.
    ok(gs(&cfg, &a, &["train", "--baseline"]));
    ok(gs(&cfg, &a, &["calibrate", "--baseline"]));
    ok(gs(&cfg, &a, &["evaluate", "--baseline"]));
    assert!(a.join("baseline_report/report.csv").exists());
}

#[test]
fn empty_campaign_reports_only_clean_windows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("mus = [0.1, -0.1]", "mus = []").replace("replay_windows = 5", "replay_windows = 0");
    std::fs::write(&cfg, text).unwrap();
    let csv = pipeline(&cfg, tmp.path());
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.lines().nth(1).unwrap().starts_with("clean,"));
}

#[test]
fn zero_learning_rate_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "");
    let out = tmp.path();
    ok(gs(&cfg_path, out, &["gen-data"]));
    ok(gs(&cfg_path, out, &["train", "--learning-rate", "0", "--epochs", "1"]));
    let cfg = RunConfig::from_path(&cfg_path).unwrap();
    let p = load_data(&out.join("data"), &cfg).unwrap();
    let fresh = new_model(&cfg, &p, Role::Main).unwrap();
    let trained = load_model(&out.join("model.gsm")).unwrap();
    assert_eq!(trained.params(), fresh.params());
    assert_eq!(trained.meta.epochs_trained, 1);

    ok(gs(&cfg_path, out, &["train", "--resume", "--epochs", "2"]));
    let resumed = load_model(&out.join("model.gsm")).unwrap();
    assert_eq!(resumed.meta.epochs_trained, 3);
    let losses = std::fs::read_to_string(out.join("model_loss.csv")).unwrap();
    let epochs: Vec<&str> = losses.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["0", "1", "2"]);
}

#[test]
fn usage_and_lineage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path();
    assert_eq!(gs(&cfg, out, &["calibrate", "--alpha", "1.5"]).status.code(), Some(1));
    assert_eq!(gs(&cfg, out, &["calibrate", "--alpha", "0"]).status.code(), Some(1));
    assert_eq!(gs(&cfg, out, &["no-such-command"]).status.code(), Some(1));
    // Nothing generated yet.
    assert_eq!(gs(&cfg, out, &["train"]).status.code(), Some(1));

    let missing = write_config(tmp.path(), "");
    let text = std::fs::read_to_string(&missing).unwrap().replace("case = \"ieee14\"", "case = \"/no/such/case.m\"");
    std::fs::write(&missing, text).unwrap();
    let o = gs(&missing, out, &["gen-data"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/case.m"));

    let cfg = write_config(tmp.path(), "");
    ok(gs(&cfg, out, &["gen-data"]));
    ok(gs(&cfg, out, &["train", "--epochs", "1"]));
    // Data regenerated under another seed: the model no longer matches.
    let other = tmp.path().join("other");
    ok(Command::new(env!("CARGO_BIN_EXE_gridshield"))
        .args(["--seed", "99", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&other)
        .arg("gen-data")
        .output()
        .unwrap());
    std::fs::copy(out.join("model.gsm"), other.join("model.gsm")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gridshield"))
        .args(["--seed", "99", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&other)
        .arg("calibrate")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lineage"), "{}", String::from_utf8_lossy(&o.stderr));

    // A threshold table from another model is refused at evaluation.
    ok(gs(&cfg, out, &["calibrate"]));
    ok(gs(&cfg, out, &["attack"]));
    ok(gs(&cfg, out, &["train", "--resume", "--epochs", "1"]));
    let o = gs(&cfg, out, &["evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lineage"));
}

#[test]
fn dumps_the_observation_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = ok(gs(&cfg, tmp.path(), &["dump-h"]));
    let text = String::from_utf8(o.stdout).unwrap();
    // Header plus one line per measurement of the 14-bus case.
    assert_eq!(text.lines().count(), 1 + 34);
    let o = ok(gs(&cfg, tmp.path(), &["config"]));
    let printed: RunConfig = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(printed.seed, 3);
}
