//! CSV layout: a header of `f<k>` feature columns (k = 0..d-1, each exactly
//! once) and `t:<name>` label columns; label cells are `0`, `1`, or empty.

use std::fmt::Write as _;
use std::path::Path;

use super::MultiLabelDataset;
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Scalar};

enum Column {
    Feature(usize),
    Task(usize),
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_csv<S: Scalar>(text: &str) -> Result<MultiLabelDataset<S>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(perr(1, "empty file"));
    };
    let mut columns = Vec::new();
    let mut feature_seen = Vec::new();
    let mut task_names = Vec::new();
    for name in header.trim_end_matches('\r').split(',') {
        if let Some(k) = name.strip_prefix('f').and_then(|k| k.parse::<usize>().ok()) {
            if feature_seen.len() <= k {
                feature_seen.resize(k + 1, false);
            }
            if feature_seen[k] {
                return Err(perr(1, format!("duplicate feature column {name}")));
            }
            feature_seen[k] = true;
            columns.push(Column::Feature(k));
        } else if let Some(t) = name.strip_prefix("t:") {
            columns.push(Column::Task(task_names.len()));
            task_names.push(t.to_string());
        } else {
            return Err(perr(1, format!("unknown column {name:?}")));
        }
    }
    if let Some(k) = feature_seen.iter().position(|s| !s) {
        return Err(perr(1, format!("feature columns not contiguous: f{k} missing")));
    }
    let d = feature_seen.len();
    let m = task_names.len();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let cells: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if cells.len() != columns.len() {
            return Err(perr(
                lineno,
                format!("expected {} cells, found {}", columns.len(), cells.len()),
            ));
        }
        let mut row = vec![S::zero(); d];
        let mut lab = vec![None; m];
        for (cell, col) in cells.iter().zip(&columns) {
            match *col {
                Column::Feature(k) => {
                    let v: f64 = cell
                        .trim()
                        .parse()
                        .map_err(|_| perr(lineno, format!("non-numeric feature {cell:?}")))?;
                    if !v.is_finite() {
                        return Err(perr(lineno, format!("non-finite feature {cell:?}")));
                    }
                    row[k] = S::lit(v);
                }
                Column::Task(j) => {
                    lab[j] = match cell.trim() {
                        "" => None,
                        "0" => Some(false),
                        "1" => Some(true),
                        other => return Err(perr(lineno, format!("bad label {other:?}"))),
                    }
                }
            }
        }
        values.extend(row);
        labels.push(lab);
    }
    let n = labels.len();
    let features = DenseMatrix::from_vec(n, d, values)?;
    MultiLabelDataset::new(features, labels, task_names)
}

pub fn to_csv_string<S: Scalar>(ds: &MultiLabelDataset<S>) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..ds.d())
        .map(|k| format!("f{k}"))
        .chain(ds.task_names().iter().map(|t| format!("t:{t}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..ds.n() {
        let mut first = true;
        for &v in ds.features().row(i) {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        for j in 0..ds.m() {
            if !first {
                out.push(',');
            }
            first = false;
            match ds.label(i, j) {
                Some(true) => out.push('1'),
                Some(false) => out.push('0'),
                None => {}
            }
        }
        out.push('\n');
    }
    out
}

pub fn load_csv<S: Scalar>(path: impl AsRef<Path>) -> Result<MultiLabelDataset<S>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn save_csv<S: Scalar>(ds: &MultiLabelDataset<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv_string(ds)).map_err(|e| Error::io(path, e))
}
