//! On-disk bundle directories.
//!
//! ```text
//! meta.json     {"n":..,"num_classes":..,"has_features":..}
//! edges.csv     one `u,v` per line, 0-indexed, u < v
//! features.csv  n rows of comma-separated reals (only when has_features)
//! labels.csv    n lines of class ids (optional)
//! splits.json   {"train":[..],"val":[..],"test":[..]}
//! poison.json   {"inserted":[[u,v],..],"deleted":[[u,v],..]} (optional sidecar)
//! ```
//!
//! The writer is canonical: reals use Rust's shortest round-trip formatting, so
//! loading and re-saving a bundle produces identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{adjacency_from_edges, EdgeSet, GraphBundle, PoisonRecord, Split};

pub const POISON_FILE: &str = "poison.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n: usize,
    pub num_classes: usize,
    pub has_features: bool,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        file: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

fn format_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format { file: file.to_path_buf(), line, msg: msg.into() }
}

/// Non-empty lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_edges(path: &Path, n: usize) -> Result<EdgeSet> {
    let text = read_text(path)?;
    let mut edges = EdgeSet::new();
    for (lineno, line) in data_lines(&text) {
        let mut parts = line.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format_err(path, lineno, "expected `u,v`"));
        };
        let u: usize = a.trim().parse().map_err(|_| format_err(path, lineno, "bad node id"))?;
        let v: usize = b.trim().parse().map_err(|_| format_err(path, lineno, "bad node id"))?;
        if u >= v {
            return Err(format_err(path, lineno, format!("edge ({u},{v}) must satisfy u < v")));
        }
        if v >= n {
            return Err(format_err(path, lineno, format!("node {v} out of range for n={n}")));
        }
        if !edges.insert(u, v) {
            return Err(format_err(path, lineno, format!("duplicate edge ({u},{v})")));
        }
    }
    Ok(edges)
}

fn parse_features(path: &Path, n: usize) -> Result<Array2<f64>> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (lineno, line) in data_lines(&text) {
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, lineno, format!("bad real: {e}")))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(format_err(
                    path,
                    lineno,
                    format!("row has {} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(Error::Consistency(format!(
            "{} has {} rows, expected {n}",
            path.display(),
            rows.len()
        )));
    }
    let d = rows.first().map_or(0, Vec::len);
    Ok(Array2::from_shape_fn((n, d), |(i, j)| rows[i][j]))
}

fn parse_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(lineno, line)| {
            line.parse::<usize>()
                .map_err(|_| format_err(path, lineno, format!("bad class id `{line}`")))
        })
        .collect()
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<GraphBundle> {
    let dir = dir.as_ref();
    let meta: BundleMeta = read_json(&dir.join("meta.json"))?;
    let edges = parse_edges(&dir.join("edges.csv"), meta.n)?;
    let features = if meta.has_features {
        Some(parse_features(&dir.join("features.csv"), meta.n)?)
    } else {
        None
    };
    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() { Some(parse_labels(&labels_path)?) } else { None };
    let split: Split = read_json(&dir.join("splits.json"))?;
    GraphBundle::new(adjacency_from_edges(meta.n, &edges), features, labels, meta.num_classes, split)
}

pub fn save_bundle(bundle: &GraphBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = BundleMeta {
        n: bundle.n(),
        num_classes: bundle.num_classes,
        has_features: bundle.has_features(),
    };
    write_json(&dir.join("meta.json"), &meta)?;

    let mut text = String::new();
    for (u, v) in bundle.edges().iter() {
        writeln!(text, "{u},{v}").unwrap();
    }
    write_text(&dir.join("edges.csv"), &text)?;

    let feature_path = dir.join("features.csv");
    if let Some(x) = &bundle.features {
        let mut text = String::new();
        for row in x.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write_text(&feature_path, &text)?;
    } else if feature_path.exists() {
        fs::remove_file(&feature_path).map_err(|e| Error::io(&feature_path, e))?;
    }

    if let Some(y) = &bundle.labels {
        let mut text = String::new();
        for c in y {
            writeln!(text, "{c}").unwrap();
        }
        write_text(&dir.join("labels.csv"), &text)?;
    }
    write_json(&dir.join("splits.json"), &bundle.split)
}

pub fn load_poison(path: impl AsRef<Path>) -> Result<PoisonRecord> {
    read_json(path.as_ref())
}

pub fn save_poison(record: &PoisonRecord, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), record)
}

/// Resolves a bundle directory's poison sidecar path.
pub fn poison_path(dir: impl AsRef<Path>) -> PathBuf {
    dir.as_ref().join(POISON_FILE)
}
