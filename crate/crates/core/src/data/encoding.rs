//! Turning string-valued records into numeric feature matrices.

use crate::autodiff::Matrix;
use crate::data::{Dataset, DatasetMeta, LoadOptions};
use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy)]
pub enum ColumnRole {
    /// Parsed as a number and z-scored.
    Continuous,
    /// One column per vocabulary entry, or a single 0/1 column when the
    /// vocabulary has exactly two entries (1 ⇔ second entry).
    Categorical(&'static [&'static str]),
    /// Source of S; optionally kept as a 0/1 feature.
    Sensitive,
    /// Source of Y.
    Label,
}

#[derive(Debug, Clone, Copy)]
pub struct ColumnSpec {
    pub name: &'static str,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub const fn new(name: &'static str, role: ColumnRole) -> Self {
        ColumnSpec { name, role }
    }
}

/// One-hot block for `values` over `vocab`. Fails on a value outside `vocab`.
pub fn one_hot(values: &[&str], vocab: &[&str], column: &str) -> Result<Matrix> {
    let mut m = Matrix::zeros(values.len(), vocab.len());
    for (r, v) in values.iter().enumerate() {
        let c = vocab
            .iter()
            .position(|x| x == v)
            .ok_or_else(|| Error::Contract(format!("unknown category {v:?} in column {column}")))?;
        m.set(r, c, 1.0);
    }
    Ok(m)
}

/// Encodes pre-split records. `label` and `sensitive` map the raw strings of
/// the corresponding columns to 0/1 (or `None` when unrecognized).
#[allow(clippy::too_many_arguments)]
pub(crate) fn encode_records(
    path: &Path,
    name: &str,
    schema: &[ColumnSpec],
    records: &[Vec<String>],
    label: impl Fn(&str) -> Option<u8>,
    sensitive: impl Fn(&str) -> Option<u8>,
    raw_rows: usize,
    options: LoadOptions,
) -> Result<Dataset> {
    let mut names = Vec::new();
    let mut continuous = Vec::new();
    let mut binary_columns = Vec::new();
    for spec in schema {
        match spec.role {
            ColumnRole::Continuous => {
                continuous.push(names.len());
                names.push(spec.name.to_string());
            }
            ColumnRole::Categorical(vocab) if vocab.len() == 2 => {
                binary_columns.push(spec.name.to_string());
                names.push(format!("{}={}", spec.name, vocab[1]));
            }
            ColumnRole::Categorical(vocab) => {
                names.extend(vocab.iter().map(|v| format!("{}={v}", spec.name)));
            }
            ColumnRole::Sensitive if options.keep_sensitive_feature => {
                binary_columns.push(spec.name.to_string());
                names.push(spec.name.to_string());
            }
            ColumnRole::Sensitive | ColumnRole::Label => {}
        }
    }

    let d = names.len();
    let mut data = Vec::with_capacity(records.len() * d);
    let mut y = Vec::with_capacity(records.len());
    let mut s = Vec::with_capacity(records.len());
    for (line, rec) in records.iter().enumerate() {
        let bad = |reason: String| Error::load(path, format!("record {}: {reason}", line + 1));
        if rec.len() != schema.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                schema.len(),
                rec.len()
            )));
        }
        for (spec, field) in schema.iter().zip(rec) {
            match spec.role {
                ColumnRole::Continuous => {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| bad(format!("{} is not numeric: {field:?}", spec.name)))?;
                    if !v.is_finite() {
                        return Err(bad(format!("{} is not finite", spec.name)));
                    }
                    data.push(v);
                }
                ColumnRole::Categorical(vocab) => {
                    let pos = vocab
                        .iter()
                        .position(|v| v == field)
                        .ok_or_else(|| bad(format!("unknown category {field:?} in column {}", spec.name)))?;
                    if vocab.len() == 2 {
                        data.push(pos as f64);
                    } else {
                        data.extend((0..vocab.len()).map(|i| if i == pos { 1.0 } else { 0.0 }));
                    }
                }
                ColumnRole::Sensitive => {
                    let v = sensitive(field)
                        .ok_or_else(|| bad(format!("unknown sensitive value {field:?} in {}", spec.name)))?;
                    if options.keep_sensitive_feature {
                        data.push(v as f64);
                    }
                    s.push(v);
                }
                ColumnRole::Label => {
                    let v = label(field)
                        .ok_or_else(|| bad(format!("unknown label {field:?} in {}", spec.name)))?;
                    y.push(v);
                }
            }
        }
    }

    let raw = Matrix::from_vec(records.len(), d, data)?;
    let meta = DatasetMeta {
        name: name.to_string(),
        raw_rows,
        dropped_rows: raw_rows - records.len(),
        binary_columns,
        sensitive_in_features: options.keep_sensitive_feature,
    };
    Dataset::new(raw, y, s, names, continuous, meta).map_err(|e| match e {
        Error::Contract(reason) => Error::load(path, reason),
        other => other,
    })
}
