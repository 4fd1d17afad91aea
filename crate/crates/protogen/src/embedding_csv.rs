//! Embedding CSV: header `class_id,f0,...,f{d-1}`, one sample per line.
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save followed by a load reproduces every bit.

use crate::error::{Error, Result};
use protogen_core::{Dataset, Embedding};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

pub fn load_embeddings(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(file, path)
}

/// Parses from any reader; `path` only labels error messages.
pub fn read_embeddings(reader: impl Read, path: &Path) -> Result<Dataset> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let dim = parse_header(header.trim_end_matches('\r'), path)?;

    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        samples.push(parse_row(line, dim, line_no, path)?);
    }
    Ok(Dataset::new(dim, samples)?)
}

fn parse_header(header: &str, path: &Path) -> Result<usize> {
    let mut fields = header.split(',');
    if fields.next() != Some("class_id") {
        return Err(Error::parse(path, 1, "header must start with `class_id`"));
    }
    let mut dim = 0;
    for (j, name) in fields.enumerate() {
        if name != format!("f{j}") {
            return Err(Error::parse(path, 1, format!("expected column `f{j}`, found `{name}`")));
        }
        dim += 1;
    }
    if dim == 0 {
        return Err(Error::parse(path, 1, "header declares no feature columns"));
    }
    Ok(dim)
}

fn parse_row(line: &str, dim: usize, line_no: usize, path: &Path) -> Result<Embedding> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != dim + 1 {
        return Err(Error::parse(
            path,
            line_no,
            format!("expected {} fields, found {}", dim + 1, fields.len()),
        ));
    }
    let class_id: u32 = fields[0]
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line_no, format!("invalid class id `{}`", fields[0])))?;
    let mut features = Vec::with_capacity(dim);
    for (j, field) in fields[1..].iter().enumerate() {
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("invalid number `{field}` in column f{j}")))?;
        if !v.is_finite() {
            return Err(Error::parse(path, line_no, format!("non-finite value in column f{j}")));
        }
        features.push(v);
    }
    Ok(Embedding::new(class_id, features))
}

pub fn save_embeddings(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(format_embeddings(dataset).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn format_embeddings(dataset: &Dataset) -> String {
    let mut out = String::from("class_id");
    for j in 0..dataset.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for sample in dataset.samples() {
        let _ = write!(out, "{}", sample.class_id);
        for v in &sample.features {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        read_embeddings(text.as_bytes(), Path::new("test.csv"))
    }

    #[test]
    fn single_row() {
        let d = parse("class_id,f0,f1\n0,1.0,2.0\n").unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.samples(), &[Embedding::new(0, vec![1.0, 2.0])]);
    }

    #[test]
    fn empty_data_section() {
        let d = parse("class_id,f0,f1,f2\n").unwrap();
        assert!(d.is_empty());
        assert_eq!(d.dim(), 3);
    }

    #[test]
    fn wrong_arity_cites_line() {
        let err = parse("class_id,f0,f1\n0,1,2\n1,3\n").unwrap_err();
        assert_eq!(err.line(), Some(3));
    }

    #[test]
    fn rejects_non_finite_and_garbage() {
        assert_eq!(parse("class_id,f0\n0,NaN\n").unwrap_err().line(), Some(2));
        assert_eq!(parse("class_id,f0\n0,inf\n").unwrap_err().line(), Some(2));
        assert_eq!(parse("class_id,f0\n0,1\n-1,2\n").unwrap_err().line(), Some(3));
        assert_eq!(parse("class_id,f0\n0,x\n").unwrap_err().line(), Some(2));
        assert_eq!(parse("id,f0\n").unwrap_err().line(), Some(1));
        assert_eq!(parse("class_id,f1\n").unwrap_err().line(), Some(1));
        assert!(parse("").is_err());
    }

    #[test]
    fn formats_exactly() {
        let d = Dataset::new(2, vec![Embedding::new(3, vec![0.1, -2.0])]).unwrap();
        assert_eq!(format_embeddings(&d), "class_id,f0,f1\n3,0.1,-2.0\n");
    }
}
