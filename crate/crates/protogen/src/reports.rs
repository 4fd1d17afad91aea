//! CSV exports and the human-readable summary table.

use crate::error::{Error, Result};
use protogen_core::{EvalReport, TrainLog};
use std::fmt::Write as _;
use std::path::Path;

pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,val_acc,lr";
pub const EPISODES_HEADER: &str = "strategy,episode,accuracy,mean_proto_dist";
pub const SUMMARY_HEADER: &str = "strategy,way,shot,episodes,mean_acc,ci95,mean_proto_dist";

pub fn format_train_log(log: &TrainLog) -> String {
    let mut out = format!("{TRAIN_LOG_HEADER}\n");
    for r in &log.epochs {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_score, r.lr);
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per episode and strategy, strategies in the order given.
pub fn format_episodes(reports: &[&EvalReport]) -> String {
    let mut out = format!("{EPISODES_HEADER}\n");
    for r in reports {
        for o in &r.outcomes {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.strategy,
                o.episode_index,
                o.accuracy,
                opt(o.mean_proto_dist())
            );
        }
    }
    out
}

pub fn format_summary(reports: &[&EvalReport]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.strategy,
            r.way,
            r.shot,
            r.episode_count(),
            r.mean_accuracy,
            r.ci95,
            opt(r.mean_proto_dist)
        );
    }
    out
}

/// Accuracy in percent with two decimals, e.g. `80.88 ± 0.58`.
pub fn format_accuracy(r: &EvalReport) -> String {
    format!("{:.2} ± {:.2}", 100.0 * r.mean_accuracy, 100.0 * r.ci95)
}

pub fn summary_table(reports: &[&EvalReport]) -> String {
    let mut out = format!(
        "{:<14} {:>3} {:>4} {:>8}  {:>16}  {:>10}\n",
        "strategy", "way", "shot", "episodes", "accuracy (%)", "proto dist"
    );
    for r in reports {
        let dist = r
            .mean_proto_dist
            .map(|d| format!("{d:.4}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<14} {:>3} {:>4} {:>8}  {:>16}  {:>10}",
            r.strategy.name(),
            r.way,
            r.shot,
            r.episode_count(),
            format_accuracy(r),
            dist
        );
    }
    out
}

/// Writes `contents` to `path`, creating missing parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
