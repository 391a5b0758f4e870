//! Tabular datasets as `(X, Y, S)` triples.
//!
//! Loaders keep both the unscaled feature matrix and a standardized copy so
//! that every split can re-fit the z-scoring on its own training rows.

mod adult;
mod encoding;
mod german;
mod split;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub use adult::{load_adult, load_adult_with};
pub use encoding::{one_hot, ColumnRole, ColumnSpec};
pub use german::{load_german, load_german_with};
pub use split::{batches, make_folds, train_validation_split, SplitPlan};

/// Options shared by the loaders.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Keep the sensitive attribute as an input column. Off by default: the
    /// adversary could otherwise read it straight from the input.
    pub keep_sensitive_feature: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    /// Number of rows the statistics were fitted on.
    pub fitted_rows: usize,
    pub columns: Vec<ColumnStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    /// Rows read from disk, before filtering.
    pub raw_rows: usize,
    /// Rows discarded for missing values.
    pub dropped_rows: usize,
    /// Two-valued categorical columns stored as a single 0/1 column.
    pub binary_columns: Vec<String>,
    pub sensitive_in_features: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    raw: Matrix,
    y: Vec<u8>,
    s: Vec<u8>,
    feature_names: Vec<String>,
    continuous: Vec<usize>,
    stats: NormalizationStats,
    meta: DatasetMeta,
}

impl Dataset {
    /// Builds a dataset from unscaled features and standardizes the
    /// `continuous` columns over all rows. Both classes must occur in `y` and `s`.
    pub fn new(
        raw: Matrix,
        y: Vec<u8>,
        s: Vec<u8>,
        feature_names: Vec<String>,
        continuous: Vec<usize>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let n = raw.rows();
        if y.len() != n || s.len() != n {
            return Err(Error::Contract(format!(
                "dataset has {n} feature rows, {} labels, {} sensitive values",
                y.len(),
                s.len()
            )));
        }
        if feature_names.len() != raw.cols() {
            return Err(Error::Contract(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                raw.cols()
            )));
        }
        if let Some(&c) = continuous.iter().find(|&&c| c >= raw.cols()) {
            return Err(Error::Contract(format!("continuous column {c} out of range")));
        }
        check_both_classes(&y, "label")?;
        check_both_classes(&s, "sensitive")?;
        let all: Vec<usize> = (0..n).collect();
        let stats = fit_stats(&raw, &continuous, &all);
        let x = apply_stats(&raw, &stats);
        Ok(Dataset {
            x,
            raw,
            y,
            s,
            feature_names,
            continuous,
            stats,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Standardized features.
    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn s(&self) -> &[u8] {
        &self.s
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn continuous_columns(&self) -> &[usize] {
        &self.continuous
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn y_column(&self) -> Matrix {
        labels_column(&self.y)
    }

    pub fn s_column(&self) -> Matrix {
        labels_column(&self.s)
    }

    /// Re-fits the z-scoring on `train` rows only and applies it to every row.
    pub fn standardized_on(&self, train: &[usize]) -> Dataset {
        let stats = fit_stats(&self.raw, &self.continuous, train);
        Dataset {
            x: apply_stats(&self.raw, &stats),
            raw: self.raw.clone(),
            y: self.y.clone(),
            s: self.s.clone(),
            feature_names: self.feature_names.clone(),
            continuous: self.continuous.clone(),
            stats,
            meta: self.meta.clone(),
        }
    }

    /// Rows at `indices`, keeping the current normalization. Unlike
    /// [`Dataset::new`] this does not require both classes to be present.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            raw: self.raw.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            s: indices.iter().map(|&i| self.s[i]).collect(),
            feature_names: self.feature_names.clone(),
            continuous: self.continuous.clone(),
            stats: self.stats.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Applies previously fitted statistics, e.g. those stored with a model.
    pub fn with_stats(&self, stats: &NormalizationStats) -> Result<Dataset> {
        let fitted: Vec<usize> = stats.columns.iter().map(|c| c.column).collect();
        if fitted != self.continuous {
            return Err(Error::Contract(format!(
                "normalization covers columns {fitted:?} but the dataset's continuous columns are {:?}",
                self.continuous
            )));
        }
        Ok(Dataset {
            x: apply_stats(&self.raw, stats),
            stats: stats.clone(),
            ..self.clone()
        })
    }

    pub fn summary(&self) -> DatasetSummary {
        let n = self.len();
        let frac = |v: &[u8]| {
            if n == 0 {
                0.0
            } else {
                v.iter().map(|&b| b as usize).sum::<usize>() as f64 / n as f64
            }
        };
        DatasetSummary {
            name: self.meta.name.clone(),
            n,
            d: self.dim(),
            positive_rate: frac(&self.y),
            sensitive_one_rate: frac(&self.s),
            raw_rows: self.meta.raw_rows,
            dropped_rows: self.meta.dropped_rows,
            continuous_columns: self.continuous.len(),
            binary_columns: self.meta.binary_columns.clone(),
        }
    }
}

/// Size and class/group balance, as written next to experiment outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub n: usize,
    pub d: usize,
    /// Fraction of rows with Y = 1.
    pub positive_rate: f64,
    /// Fraction of rows with S = 1.
    pub sensitive_one_rate: f64,
    pub raw_rows: usize,
    pub dropped_rows: usize,
    pub continuous_columns: usize,
    pub binary_columns: Vec<String>,
}

/// `n × 1` column of 0.0 / 1.0.
pub fn labels_column(v: &[u8]) -> Matrix {
    Matrix::from_vec(v.len(), 1, v.iter().map(|&b| b as f64).collect()).expect("n×1")
}

fn check_both_classes(v: &[u8], what: &str) -> Result<()> {
    let ones = v.iter().filter(|&&b| b == 1).count();
    if ones == 0 || ones == v.len() {
        return Err(Error::Contract(format!(
            "sensitive/label column degenerate: {what} column has a single class"
        )));
    }
    Ok(())
}

fn fit_stats(raw: &Matrix, continuous: &[usize], rows: &[usize]) -> NormalizationStats {
    let n = rows.len().max(1) as f64;
    let columns = continuous
        .iter()
        .map(|&c| {
            let mean = rows.iter().map(|&r| raw.get(r, c)).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (raw.get(r, c) - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            ColumnStats {
                column: c,
                mean,
                std: if std > 0.0 { std } else { 1.0 },
            }
        })
        .collect();
    NormalizationStats {
        fitted_rows: rows.len(),
        columns,
    }
}

fn apply_stats(raw: &Matrix, stats: &NormalizationStats) -> Matrix {
    let mut x = raw.clone();
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        for cs in &stats.columns {
            row[cs.column] = (row[cs.column] - cs.mean) / cs.std;
        }
    }
    x
}
