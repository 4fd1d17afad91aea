//! Text checkpoints for [`GeneratorParams`].
//!
//! ```text
//! protogen-checkpoint 1
//! heads 4
//! d_model 32
//! d_k 8
//! d_v 8
//! dropout_rate 1.0000000000000001e-1
//! layer_norm_eps 1.0000000000000001e-5
//! matrix w_q.0 32 8
//! <one line per row, 17 significant digits>
//! ...
//! end
//! ```

use crate::error::{Error, Result};
use protogen_core::{AttentionConfig, GeneratorParams, Matrix};
use std::fmt::Write as _;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "protogen-checkpoint";

pub fn format_params(params: &GeneratorParams) -> String {
    let c = &params.config;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "heads {}", c.heads);
    let _ = writeln!(out, "d_model {}", c.d_model);
    let _ = writeln!(out, "d_k {}", c.d_k);
    let _ = writeln!(out, "d_v {}", c.d_v);
    let _ = writeln!(out, "dropout_rate {:.16e}", c.dropout_rate);
    let _ = writeln!(out, "layer_norm_eps {:.16e}", c.layer_norm_eps);
    for (name, m) in params.named_matrices() {
        let _ = writeln!(out, "matrix {name} {} {}", m.rows(), m.cols());
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

pub fn save_params(params: &GeneratorParams, path: &Path) -> Result<()> {
    std::fs::write(path, format_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<GeneratorParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_params(&text, path)
}

/// Loads a checkpoint and checks that it fits embeddings of dimension `dim`.
pub fn load_params_for_dim(path: &Path, dim: usize) -> Result<GeneratorParams> {
    let params = load_params(path)?;
    if params.config.d_model != dim {
        return Err(Error::checkpoint(
            path,
            format!(
                "checkpoint d_model is {}, dataset dimension is {dim}",
                params.config.d_model
            ),
        ));
    }
    Ok(params)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, line)) => {
                self.last = i + 1;
                Ok((i + 1, line.trim_end_matches('\r')))
            }
            None => Err(Error::checkpoint(
                self.path,
                format!("truncated after line {}: expected {what}", self.last),
            )),
        }
    }

    fn field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (no, line) = self.next(key)?;
        let value = line
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| Error::parse(self.path, no, format!("expected `{key} <value>`")))?;
        value
            .parse()
            .map_err(|_| Error::parse(self.path, no, format!("invalid value for `{key}`")))
    }
}

pub fn parse_params(text: &str, path: &Path) -> Result<GeneratorParams> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        path,
        last: 0,
    };
    let (no, first) = lines.next("header")?;
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::parse(path, no, "not a protogen checkpoint"))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::checkpoint(
            path,
            format!("unsupported checkpoint version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let config = AttentionConfig {
        heads: lines.field("heads")?,
        d_model: lines.field("d_model")?,
        d_k: lines.field("d_k")?,
        d_v: lines.field("d_v")?,
        dropout_rate: lines.field("dropout_rate")?,
        layer_norm_eps: lines.field("layer_norm_eps")?,
    };
    config.validate().map_err(|e| Error::checkpoint(path, e.to_string()))?;

    let mut matrices = Vec::new();
    for (name, (rows, cols)) in GeneratorParams::layout(&config) {
        let (no, line) = lines.next(&format!("matrix {name}"))?;
        let expected = format!("matrix {name} {rows} {cols}");
        if line != expected {
            return Err(Error::parse(path, no, format!("expected `{expected}`, found `{line}`")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (no, line) = lines.next(&format!("a row of {name}"))?;
            let before = data.len();
            for token in line.split_ascii_whitespace() {
                let v: f64 = token
                    .parse()
                    .map_err(|_| Error::parse(path, no, format!("invalid number `{token}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(path, no, "non-finite value"));
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::parse(
                    path,
                    no,
                    format!("row of {name} has {} values, expected {cols}", data.len() - before),
                ));
            }
        }
        matrices.push(Matrix::new(rows, cols, data)?);
    }
    let (no, line) = lines.next("end")?;
    if line != "end" {
        return Err(Error::parse(path, no, format!("expected `end`, found `{line}`")));
    }
    if let Some((i, _)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(path, i + 1, "content after `end`"));
    }
    Ok(GeneratorParams::from_matrices(config, matrices)?)
}
