//! The four command verbs. Each writes its files and returns the text meant
//! for stdout.

use crate::checkpoint::{load_params_for_dim, save_params};
use crate::config::{required, RunConfig};
use crate::embedding_csv::{load_embeddings, save_embeddings};
use crate::error::{Error, Result};
use crate::parallel;
use crate::reports::{self, write_file};
use protogen_core::embeddings::{compute_global_prototypes, generate_synthetic};
use protogen_core::eval::PrototypeStrategy;
use protogen_core::rng::{mix, Purpose};
use protogen_core::{Dataset, GeneratorParams, StrategyKind};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data_out: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(self, config: &mut RunConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let p = &mut config.paths;
        for (slot, value) in [
            (&mut p.data_out, self.data_out),
            (&mut p.train, self.train),
            (&mut p.val, self.val),
            (&mut p.test, self.test),
            (&mut p.checkpoint, self.checkpoint),
            (&mut p.train_log, self.train_log),
            (&mut p.report, self.report),
            (&mut p.summary, self.summary),
        ] {
            if value.is_some() {
                *slot = value;
            }
        }
    }
}

pub fn gen_data(config: &RunConfig) -> Result<String> {
    let out = required(&config.paths.data_out, "data_out")?;
    let spec = config.synthetic_spec();
    let dataset = generate_synthetic(&spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_embeddings(&dataset, out)?;
    Ok(format!(
        "wrote {} samples to {}\nclasses {}  dim {}  per class {}  outlier fraction {:.2}  shift {}  seed {}\n",
        dataset.len(),
        out.display(),
        spec.classes,
        spec.dim,
        spec.samples_per_class,
        spec.outlier_fraction,
        spec.outlier_shift,
        spec.seed
    ))
}

fn init_params(config: &RunConfig, dim: usize) -> Result<GeneratorParams> {
    let attention = config.attention_config(dim);
    Ok(GeneratorParams::init(
        attention,
        mix(config.seed ^ Purpose::Init as u64),
    )?)
}

pub fn train(config: &RunConfig) -> Result<String> {
    let train_path = required(&config.paths.train, "train")?;
    let val_path = required(&config.paths.val, "val")?;
    let ckpt_path = required(&config.paths.checkpoint, "checkpoint")?;
    let train_data = load_embeddings(train_path)?;
    let val_data = load_embeddings(val_path)?;
    if train_data.dim() != val_data.dim() {
        return Err(Error::Usage(format!(
            "training data has dimension {}, validation data has {}",
            train_data.dim(),
            val_data.dim()
        )));
    }
    let table = compute_global_prototypes(&train_data)?;
    let initial = init_params(config, train_data.dim())?;
    let pool = parallel::thread_pool();
    let (params, log) = parallel::train(&pool, &train_data, &val_data, &table, initial, &config.train_config())?;

    let mut out = String::new();
    if !log.epochs.is_empty() {
        let _ = writeln!(
            out,
            "{:>5}  {:>10}  {:>9}  {:>10}",
            "epoch", "train loss", "val acc %", "lr"
        );
        for r in &log.epochs {
            let _ = writeln!(
                out,
                "{:>5}  {:>10.4}  {:>9.2}  {:>10.6}",
                r.epoch,
                r.train_loss,
                100.0 * r.val_score,
                r.lr
            );
        }
    }
    if let Some(parent) = ckpt_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_params(&params, ckpt_path)?;
    match log.best_epoch {
        Some(best) => {
            let _ = writeln!(out, "best epoch {best}, checkpoint written to {}", ckpt_path.display());
        }
        None => {
            let _ = writeln!(
                out,
                "no epochs run, initial parameters written to {}",
                ckpt_path.display()
            );
        }
    }
    if let Some(log_path) = &config.paths.train_log {
        write_file(log_path, &reports::format_train_log(&log))?;
    }
    Ok(out)
}

fn load_test(config: &RunConfig) -> Result<Dataset> {
    load_embeddings(required(&config.paths.test, "test")?)
}

fn write_reports(config: &RunConfig, reports: &[&protogen_core::EvalReport]) -> Result<String> {
    if let Some(path) = &config.paths.report {
        write_file(path, &reports::format_episodes(reports))?;
    }
    if let Some(path) = &config.paths.summary {
        write_file(path, &reports::format_summary(reports))?;
    }
    Ok(reports::summary_table(reports))
}

pub fn eval(config: &RunConfig) -> Result<String> {
    let dataset = load_test(config)?;
    let table = compute_global_prototypes(&dataset)?;
    let kind = StrategyKind::from(config.eval.strategy);
    let params = match kind {
        StrategyKind::Generator => Some(load_params_for_dim(
            required(&config.paths.checkpoint, "checkpoint")?,
            dataset.dim(),
        )?),
        _ => None,
    };
    let strategy = match kind {
        StrategyKind::Mean => PrototypeStrategy::Mean,
        StrategyKind::Generator => PrototypeStrategy::Generator(params.as_ref().expect("loaded above")),
        StrategyKind::GlobalOracle => PrototypeStrategy::GlobalOracle(&table),
    };
    let pool = parallel::thread_pool();
    let report = parallel::evaluate(
        &pool,
        &dataset,
        &strategy,
        config.eval_spec(),
        config.eval.episodes,
        Some(&table),
    )?;
    write_reports(config, &[&report])
}

pub fn compare(config: &RunConfig) -> Result<String> {
    let dataset = load_test(config)?;
    let params = load_params_for_dim(required(&config.paths.checkpoint, "checkpoint")?, dataset.dim())?;
    let table = compute_global_prototypes(&dataset)?;
    let pool = parallel::thread_pool();
    let c = parallel::compare(
        &pool,
        &dataset,
        &params,
        &table,
        config.eval_spec(),
        config.eval.episodes,
    )?;
    write_reports(config, &c.reports())
}

/// Loads the config at `path`, applies `overrides` and runs `verb`.
pub fn run(verb: &str, path: &Path, overrides: Overrides) -> Result<String> {
    let mut config = RunConfig::load(path)?;
    overrides.apply(&mut config);
    match verb {
        "gen-data" => gen_data(&config),
        "train" => train(&config),
        "eval" => eval(&config),
        "compare" => compare(&config),
        other => Err(Error::Usage(format!("unknown command `{other}`"))),
    }
}
