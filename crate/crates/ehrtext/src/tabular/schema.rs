//! Feature schema inference and row encoding for the tabular modality.
//!
//! Columns are classified from training rows only: anything with a
//! non-numeric value, or with fewer than three unique numeric values, is
//! categorical; the rest are numerical and get standardization statistics.
//! Columns containing a missing cell are dropped entirely.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// One cell of a raw table, as read from CSV or built synthetically.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Value(String),
}

impl Cell {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Missing => None,
            Cell::Value(s) => Some(s),
        }
    }
}

/// A raw table: named columns over string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Categorical,
    Numerical,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ColumnSchema {
    pub name: String,
    pub role: ColumnRole,
    /// Seen categories in lexicographic order; encoded index is position + 1,
    /// with 0 reserved for unknown. Empty for numerical columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSchema>,
}

impl FeatureSchema {
    pub fn categorical_columns(&self) -> impl Iterator<Item = &ColumnSchema> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Categorical)
    }

    pub fn numerical_columns(&self) -> impl Iterator<Item = &ColumnSchema> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Numerical)
    }

    pub fn num_categorical(&self) -> usize {
        self.categorical_columns().count()
    }

    pub fn num_numerical(&self) -> usize {
        self.numerical_columns().count()
    }

    /// Total feature count d (columns, not embedded width).
    pub fn d(&self) -> usize {
        self.columns.len()
    }
}

/// Encoded rows ready for the encoder: ordinal category indices and
/// standardized numericals, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularBatch {
    pub n_rows: usize,
    /// [n_rows * n_cat] ordinal indices, 0 = unknown
    pub cat: Vec<usize>,
    pub n_cat: usize,
    /// [n_rows * n_num] standardized values
    pub num: Vec<f64>,
    pub n_num: usize,
    pub labels: Option<Vec<u8>>,
}

impl TabularBatch {
    pub fn cat_column(&self, col: usize) -> Vec<usize> {
        (0..self.n_rows).map(|r| self.cat[r * self.n_cat + col]).collect()
    }

    /// Extracts the given rows into a new batch, preserving order.
    pub fn select(&self, rows: &[usize]) -> TabularBatch {
        let mut cat = Vec::with_capacity(rows.len() * self.n_cat);
        let mut num = Vec::with_capacity(rows.len() * self.n_num);
        for &r in rows {
            cat.extend_from_slice(&self.cat[r * self.n_cat..(r + 1) * self.n_cat]);
            num.extend_from_slice(&self.num[r * self.n_num..(r + 1) * self.n_num]);
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        TabularBatch {
            n_rows: rows.len(),
            cat,
            n_cat: self.n_cat,
            num,
            n_num: self.n_num,
            labels,
        }
    }
}

/// Infers a schema from training rows. `excluded` columns are skipped; names
/// not present in the table are ignored with a warning.
pub fn build_schema(table: &RawTable, excluded: &[String]) -> Result<FeatureSchema> {
    if table.rows.is_empty() {
        return Err(Error::Schema("cannot build schema from empty table".into()));
    }
    for name in excluded {
        if table.column_index(name).is_none() {
            log::warn!("excluded column {:?} not present in table", name);
        }
    }

    let mut columns = Vec::new();
    for (ci, name) in table.columns.iter().enumerate() {
        if excluded.iter().any(|e| e == name) {
            continue;
        }
        let cells: Vec<&Cell> = table.rows.iter().map(|r| &r[ci]).collect();
        if cells.iter().any(|c| matches!(c, Cell::Missing)) {
            log::info!("dropping column {:?}: contains missing values", name);
            continue;
        }
        let values: Vec<&str> = cells.iter().map(|c| c.as_str().unwrap()).collect();
        let parsed: Option<Vec<f64>> = values
            .iter()
            .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect();

        let numeric_uniques = parsed.as_ref().map(|nums| {
            nums.iter()
                .map(|x| x.to_bits())
                .collect::<BTreeSet<u64>>()
                .len()
        });

        match (parsed, numeric_uniques) {
            (Some(nums), Some(u)) if u >= 3 => {
                let n = nums.len() as f64;
                let mean = nums.iter().sum::<f64>() / n;
                let var = nums.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let std = var.sqrt();
                if std <= 0.0 {
                    return Err(Error::Schema(format!(
                        "column {:?} has zero variance despite {} unique values",
                        name, u
                    )));
                }
                columns.push(ColumnSchema {
                    name: name.clone(),
                    role: ColumnRole::Numerical,
                    vocabulary: Vec::new(),
                    mean: Some(mean),
                    std: Some(std),
                });
            }
            _ => {
                let vocab: Vec<String> = values
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<BTreeSet<String>>()
                    .into_iter()
                    .collect();
                columns.push(ColumnSchema {
                    name: name.clone(),
                    role: ColumnRole::Categorical,
                    vocabulary: vocab,
                    mean: None,
                    std: None,
                });
            }
        }
    }

    if columns.is_empty() {
        return Err(Error::Schema(
            "no usable columns: everything was excluded, missing, or dropped".into(),
        ));
    }
    Ok(FeatureSchema { columns })
}

/// Encodes rows against a schema. Unknown categories map to index 0;
/// unparseable numericals are an error.
pub fn encode_rows(schema: &FeatureSchema, table: &RawTable) -> Result<TabularBatch> {
    let mut col_idx = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let ci = table.column_index(&col.name).ok_or_else(|| {
            Error::Schema(format!("table is missing schema column {:?}", col.name))
        })?;
        col_idx.push(ci);
    }

    let n_cat = schema.num_categorical();
    let n_num = schema.num_numerical();
    let mut cat = Vec::with_capacity(table.rows.len() * n_cat);
    let mut num = Vec::with_capacity(table.rows.len() * n_num);

    for (ri, row) in table.rows.iter().enumerate() {
        for (col, &ci) in schema.columns.iter().zip(&col_idx) {
            let cell = &row[ci];
            let value = cell.as_str().ok_or_else(|| {
                Error::Data(format!(
                    "row {}: missing value in column {:?}",
                    ri, col.name
                ))
            })?;
            match col.role {
                ColumnRole::Categorical => {
                    let idx = match col.vocabulary.binary_search_by(|v| v.as_str().cmp(value)) {
                        Ok(pos) => pos + 1,
                        Err(_) => 0,
                    };
                    cat.push(idx);
                }
                ColumnRole::Numerical => {
                    let x: f64 = value.trim().parse().map_err(|_| {
                        Error::Data(format!(
                            "row {}: column {:?} expected a number, got {:?}",
                            ri, col.name, value
                        ))
                    })?;
                    if !x.is_finite() {
                        return Err(Error::Data(format!(
                            "row {}: column {:?} is not finite",
                            ri, col.name
                        )));
                    }
                    num.push((x - col.mean.unwrap()) / col.std.unwrap());
                }
            }
        }
    }

    Ok(TabularBatch {
        n_rows: table.rows.len(),
        cat,
        n_cat,
        num,
        n_num,
        labels: None,
    })
}
