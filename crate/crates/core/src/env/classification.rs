//! Classification datasets turned into K-armed bandits.
//!
//! Each sample `(c, l)` becomes one round. Arm `a` sees the block context
//! `[0, …, 0, c, 0, …, 0]` with `c` in the a-th block of width `|c|`, and
//! pulling the arm pays `1{a = l}`.
//!
//! Supported files (comma-separated, no header):
//! - Mushroom: 23 single-character columns, class `e`/`p` first, then the 22
//!   categorical attributes. Attributes are one-hot encoded with one extra
//!   "unseen" slot per attribute; `?` is an ordinary category.
//! - MAGIC: 10 decimal columns followed by class `g`/`h`. Columns are
//!   standardized to zero mean and unit variance.
//!
//! Malformed rows are skipped with a warning and counted.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{ContextBatch, EnvKind, Environment, RewardModel};
use crate::error::{Error, Result};
use crate::seed::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mushroom,
    Magic,
}

impl DatasetKind {
    pub fn n_classes(&self) -> usize {
        2
    }

    fn env_kind(&self) -> EnvKind {
        match self {
            DatasetKind::Mushroom => EnvKind::Mushroom,
            DatasetKind::Magic => EnvKind::Magic,
        }
    }
}

/// One-hot encoder over categorical columns, one unseen slot per column.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotEncoder {
    categories: Vec<BTreeMap<String, usize>>,
    offsets: Vec<usize>,
    width: usize,
}

impl OneHotEncoder {
    pub fn fit<S: AsRef<str>>(rows: &[Vec<S>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut categories: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); n_cols];
        for row in rows {
            for (col, v) in categories.iter_mut().zip(row) {
                col.entry(v.as_ref().to_string()).or_insert(0);
            }
        }
        let mut offsets = Vec::with_capacity(n_cols);
        let mut width = 0;
        for col in &mut categories {
            for (i, slot) in col.values_mut().enumerate() {
                *slot = i;
            }
            offsets.push(width);
            width += col.len() + 1;
        }
        Self {
            categories,
            offsets,
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_columns(&self) -> usize {
        self.categories.len()
    }

    pub fn encode<S: AsRef<str>>(&self, row: &[S]) -> Result<Vec<f64>> {
        if row.len() != self.categories.len() {
            return Err(Error::input(format!(
                "row has {} attributes, encoder expects {}",
                row.len(),
                self.categories.len()
            )));
        }
        let mut out = vec![0.0; self.width];
        for ((col, offset), v) in self.categories.iter().zip(&self.offsets).zip(row) {
            let slot = col.get(v.as_ref()).copied().unwrap_or(col.len());
            out[offset + slot] = 1.0;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationData {
    pub kind: DatasetKind,
    /// Encoded feature vector per row.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub skipped_rows: usize,
}

impl ClassificationData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

fn parse_mushroom(line: &str) -> std::result::Result<(usize, Vec<String>), String> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.len() != 23 {
        return Err(format!("expected 23 columns, found {}", cols.len()));
    }
    if let Some(bad) = cols.iter().find(|c| c.chars().count() != 1) {
        return Err(format!("expected single-character values, found {bad:?}"));
    }
    let label = match cols[0] {
        "e" => 0,
        "p" => 1,
        other => return Err(format!("unknown class {other:?}")),
    };
    Ok((label, cols[1..].iter().map(|s| s.to_string()).collect()))
}

fn parse_magic(line: &str) -> std::result::Result<(usize, Vec<f64>), String> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.len() != 11 {
        return Err(format!("expected 11 columns, found {}", cols.len()));
    }
    let values = cols[..10]
        .iter()
        .map(|c| match c.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("bad numeric value {c:?}")),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let label = match cols[10] {
        "g" => 0,
        "h" => 1,
        other => return Err(format!("unknown class {other:?}")),
    };
    Ok((label, values))
}

fn standardize(rows: &mut [Vec<f64>]) {
    let Some(first) = rows.first() else { return };
    let (n, d) = (rows.len() as f64, first.len());
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in rows.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
    }
}

/// Reads and encodes a dataset file.
pub fn read_dataset(path: &Path, kind: DatasetKind) -> Result<ClassificationData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    let mut skipped = 0;
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let features = match kind {
        DatasetKind::Mushroom => {
            let mut attrs = Vec::new();
            for (i, line) in lines {
                match parse_mushroom(line) {
                    Ok((label, row)) => {
                        labels.push(label);
                        attrs.push(row);
                    }
                    Err(msg) => {
                        warn!("{}:{}: skipping row: {msg}", path.display(), i + 1);
                        skipped += 1;
                    }
                }
            }
            let encoder = OneHotEncoder::fit(&attrs);
            attrs
                .iter()
                .map(|row| encoder.encode(row))
                .collect::<Result<Vec<_>>>()?
        }
        DatasetKind::Magic => {
            let mut rows = Vec::new();
            for (i, line) in lines {
                match parse_magic(line) {
                    Ok((label, row)) => {
                        labels.push(label);
                        rows.push(row);
                    }
                    Err(msg) => {
                        warn!("{}:{}: skipping row: {msg}", path.display(), i + 1);
                        skipped += 1;
                    }
                }
            }
            standardize(&mut rows);
            rows
        }
    };
    Ok(ClassificationData {
        kind,
        features,
        labels,
        skipped_rows: skipped,
    })
}

/// Draws `horizon` samples without replacement and builds the bandit rounds.
pub fn classification_env(
    data: &ClassificationData,
    horizon: usize,
    seed: u64,
) -> Result<Environment> {
    if horizon == 0 {
        return Err(Error::config("T must be positive"));
    }
    if horizon > data.len() {
        return Err(Error::config(format!(
            "T = {horizon} exceeds the {} usable rows of the dataset",
            data.len()
        )));
    }
    let k = data.kind.n_classes();
    let w = data.feature_width();
    let mut rng = substream(seed, "env-sample", 0);
    let picks = index::sample(&mut rng, data.len(), horizon);
    let mut rounds = Vec::with_capacity(horizon);
    for (t0, i) in picks.iter().enumerate() {
        let c = &data.features[i];
        let label = data.labels[i];
        let raw: Vec<Vec<f64>> = (0..k)
            .map(|a| {
                let mut x = vec![0.0; k * w];
                x[a * w..(a + 1) * w].copy_from_slice(c);
                x
            })
            .collect();
        let means = (0..k).map(|a| if a == label { 1.0 } else { 0.0 }).collect();
        rounds.push(ContextBatch::new(t0 + 1, raw, means, 0.0)?);
    }
    Ok(Environment {
        kind: data.kind.env_kind(),
        model: RewardModel::Classification { n_classes: k },
        noise_std: 0.0,
        rounds,
    })
}

pub fn load_classification(
    path: &Path,
    kind: DatasetKind,
    horizon: usize,
    seed: u64,
) -> Result<Environment> {
    classification_env(&read_dataset(path, kind)?, horizon, seed)
}
