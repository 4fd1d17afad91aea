use protogen::checkpoint::load_params;
use protogen_core::rng::{mix, Purpose};
use protogen_core::{AttentionConfig, GeneratorParams};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn protogen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protogen"))
        .args(args)
        .current_dir(dir)
        .env("PROTOGEN_THREADS", "2")
        .output()
        .expect("spawn protogen")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = protogen(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failing(dir: &Path, args: &[&str]) -> String {
    let out = protogen(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    assert!(out.stdout.is_empty(), "stdout should stay empty on error");
    String::from_utf8(out.stderr).unwrap()
}

const SMALL: &str = r#"
seed = 3

[data]
classes = 6
dim = 8
samples_per_class = 25

[paths]
data_out = "train.csv"
train = "train.csv"
val = "val.csv"
test = "test.csv"
checkpoint = "gen.ckpt"
train_log = "log.csv"
report = "episodes.csv"
summary = "summary.csv"

[attention]
heads = 2

[train]
epochs = 2
episodes_per_epoch = 5
way = 3
shot = 2
queries_per_class = 4
validation_episodes = 5

[eval]
way = 3
shot = 2
queries_per_class = 4
episodes = 10
"#;

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    ok(dir.path(), &["gen-data", "-c", "run.toml"]);
    ok(
        dir.path(),
        &["gen-data", "-c", "run.toml", "--seed", "4", "--out", "val.csv"],
    );
    ok(
        dir.path(),
        &["gen-data", "-c", "run.toml", "--seed", "5", "--out", "test.csv"],
    );
    dir
}

#[test]
fn gen_data_writes_every_sample() {
    let dir = setup(SMALL);
    let text = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 25);
    assert!(text.starts_with("class_id,f0,f1,f2,f3,f4,f5,f6,f7\n"));
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = setup(&SMALL.replace("epochs = 2", "epochs = 0"));
    let stdout = ok(dir.path(), &["train", "-c", "run.toml"]);
    assert!(stdout.contains("initial parameters"), "{stdout}");
    let saved = load_params(&dir.path().join("gen.ckpt")).unwrap();
    let config = AttentionConfig {
        heads: 2,
        d_k: 4,
        d_v: 4,
        ..AttentionConfig::for_dim(8)
    };
    let expected = GeneratorParams::init(config, mix(3 ^ Purpose::Init as u64)).unwrap();
    assert_eq!(saved, expected);
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert_eq!(log, "epoch,train_loss,val_acc,lr\n");
}

#[test]
fn training_writes_log_and_checkpoint() {
    let dir = setup(SMALL);
    ok(dir.path(), &["train", "-c", "run.toml"]);
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
    assert!(load_params(&dir.path().join("gen.ckpt")).is_ok());
}

#[test]
fn missing_dataset_is_named() {
    let dir = setup(SMALL);
    let err = failing(dir.path(), &["train", "-c", "run.toml", "--train", "absent.csv"]);
    assert!(err.contains("absent.csv"), "{err}");
}

#[test]
fn missing_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let err = failing(dir.path(), &["eval", "-c", "nope.toml"]);
    assert!(err.contains("nope.toml"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "[train]\nepocs = 3\n").unwrap();
    let err = failing(dir.path(), &["train", "-c", "run.toml"]);
    assert!(err.contains("epocs"), "{err}");
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    // a regular file cannot act as a directory
    let err = failing(
        dir.path(),
        &["gen-data", "-c", "run.toml", "--out", "blocker/train.csv"],
    );
    assert!(err.contains("blocker"), "{err}");
}

#[test]
fn single_episode_prints_zero_ci() {
    let dir = setup(&SMALL.replace("episodes = 10", "episodes = 1"));
    ok(dir.path(), &["train", "-c", "run.toml"]);
    let stdout = ok(dir.path(), &["eval", "-c", "run.toml"]);
    assert!(stdout.contains("± 0.00"), "{stdout}");
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[3], row[5]), ("1", "0"));
}

#[test]
fn checkpoint_dimension_mismatch_fails() {
    let dir = setup(SMALL);
    ok(dir.path(), &["train", "-c", "run.toml"]);
    let wide = SMALL.replace("dim = 8", "dim = 12");
    std::fs::write(dir.path().join("wide.toml"), wide).unwrap();
    ok(dir.path(), &["gen-data", "-c", "wide.toml", "--out", "wide.csv"]);
    let err = failing(dir.path(), &["compare", "-c", "run.toml", "--test", "wide.csv"]);
    assert!(err.contains("d_model"), "{err}");
}

#[test]
fn oracle_is_near_perfect_on_separated_clean_data() {
    let config = r#"
seed = 11
[data]
classes = 10
dim = 16
samples_per_class = 40
mean_scale = 10.0
within_std = 1.0
outlier_fraction = 0.0
[paths]
data_out = "sep.csv"
test = "sep.csv"
[eval]
strategy = "global_oracle"
episodes = 100
"#;
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    ok(dir.path(), &["gen-data", "-c", "run.toml"]);
    let stdout = ok(dir.path(), &["eval", "-c", "run.toml"]);
    let row = stdout.lines().nth(1).unwrap();
    let acc: f64 = row.split_whitespace().nth(4).unwrap().parse().unwrap();
    assert!(acc >= 99.0, "{stdout}");
}

#[test]
fn commands_are_byte_deterministic() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = setup(SMALL);
            let train_out = ok(dir.path(), &["train", "-c", "run.toml"]);
            let eval_out = ok(dir.path(), &["compare", "-c", "run.toml"]);
            let files: Vec<Vec<u8>> = [
                "train.csv",
                "val.csv",
                "test.csv",
                "gen.ckpt",
                "log.csv",
                "episodes.csv",
                "summary.csv",
            ]
            .iter()
            .map(|f| std::fs::read(dir.path().join(f)).unwrap())
            .collect();
            (train_out, eval_out, files)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn smoke_config_trains_quickly() {
    let config = r#"
seed = 1
[data]
classes = 10
dim = 16
samples_per_class = 60
[paths]
data_out = "train.csv"
train = "train.csv"
val = "val.csv"
checkpoint = "gen.ckpt"
[train]
epochs = 5
episodes_per_epoch = 20
validation_episodes = 20
"#;
    let dir = setup(config);
    let start = Instant::now();
    ok(dir.path(), &["train", "-c", "run.toml"]);
    assert!(start.elapsed() < Duration::from_secs(60));
}
