//! CSV ingestion and the preprocessing pipeline: categorical binarization,
//! per-column scaling, per-record normalization, target mapping, and the
//! appended constant feature.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::RngStream;
use crate::types::{Dataset, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl ColumnSchema {
    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: None,
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: Some(categories.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn target(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Target,
            categories: None,
        }
    }
}

/// Ordered column descriptions with exactly one target column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct Schema {
    columns: Vec<ColumnSchema>,
}

#[derive(Deserialize)]
struct RawSchema {
    columns: Vec<ColumnSchema>,
}

impl TryFrom<RawSchema> for Schema {
    type Error = Error;

    fn try_from(r: RawSchema) -> Result<Self> {
        Self::new(r.columns)
    }
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        let targets = columns.iter().filter(|c| c.kind == ColumnKind::Target).count();
        if targets != 1 {
            return Err(Error::Schema(format!("expected exactly one target column, found {targets}")));
        }
        for c in &columns {
            match (c.kind, &c.categories) {
                (ColumnKind::Categorical, Some(cats)) if !cats.is_empty() => {}
                (ColumnKind::Categorical, _) => {
                    return Err(Error::Schema(format!("categorical column `{}` lists no categories", c.name)))
                }
                _ => {}
            }
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    fn target(&self) -> &ColumnSchema {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Target)
            .expect("validated in Schema::new")
    }
}

/// String cells keyed by header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in input header")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<String>> {
        let idx = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[idx].clone()).collect())
    }
}

/// Reads a UTF-8 CSV with a header row; cells are trimmed.
pub fn read_raw_csv<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok(RawTable { headers, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn ncols(&self) -> usize {
        self.names.len()
    }
}

/// Replaces each categorical column with one indicator per category.
/// Output order: numeric columns in schema order, then indicator blocks in
/// schema order. The target column is not included.
pub fn binarize(table: &RawTable, schema: &Schema) -> Result<NumericTable> {
    let numerics: Vec<&ColumnSchema> =
        schema.columns.iter().filter(|c| c.kind == ColumnKind::Numeric).collect();
    let categoricals: Vec<&ColumnSchema> =
        schema.columns.iter().filter(|c| c.kind == ColumnKind::Categorical).collect();

    let mut names: Vec<String> = numerics.iter().map(|c| c.name.clone()).collect();
    for c in &categoricals {
        for cat in c.categories.as_deref().unwrap_or_default() {
            names.push(format!("{}={}", c.name, cat));
        }
    }
    let num_idx = numerics
        .iter()
        .map(|c| table.column_index(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let cat_idx = categoricals
        .iter()
        .map(|c| table.column_index(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(table.rows.len());
    for (r, cells) in table.rows.iter().enumerate() {
        let mut out = Vec::with_capacity(names.len());
        for (col, &i) in numerics.iter().zip(&num_idx) {
            let cell = &cells[i];
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
                column: col.name.clone(),
                row: r,
                value: cell.clone(),
            })?;
            out.push(v);
        }
        for (col, &i) in categoricals.iter().zip(&cat_idx) {
            let cats = col.categories.as_deref().unwrap_or_default();
            let cell = &cells[i];
            let hit = cats.iter().position(|c| c == cell).ok_or_else(|| Error::UnknownCategory {
                column: col.name.clone(),
                value: cell.clone(),
            })?;
            out.extend((0..cats.len()).map(|k| if k == hit { 1.0 } else { 0.0 }));
        }
        rows.push(out);
    }
    Ok(NumericTable { names, rows })
}

fn normalize_row(row: &mut [f64]) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Divides every column by its maximum absolute value (all-zero columns are
/// left alone), then rescales any row whose L2 norm exceeds 1 onto the unit
/// sphere.
pub fn scale_and_normalize(table: &NumericTable) -> NumericTable {
    let ncols = table.ncols();
    let mut max_abs = vec![0.0f64; ncols];
    for row in &table.rows {
        for (m, v) in max_abs.iter_mut().zip(row) {
            *m = m.max(v.abs());
        }
    }
    let rows = table
        .rows
        .iter()
        .map(|row| {
            let mut out: Vec<f64> = row
                .iter()
                .zip(&max_abs)
                .map(|(v, m)| if *m > 0.0 { v / m } else { *v })
                .collect();
            normalize_row(&mut out);
            out
        })
        .collect();
    NumericTable {
        names: table.names.clone(),
        rows,
    }
}

/// Which raw target value became which label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetMapping {
    pub negative: String,
    pub positive: String,
}

/// Maps a two-valued column to labels: the lexicographically smaller raw
/// value becomes −1, the larger +1.
pub fn map_target(values: &[String]) -> Result<(Vec<i8>, TargetMapping)> {
    let distinct: BTreeSet<&str> = values.iter().map(String::as_str).collect();
    if distinct.len() != 2 {
        return Err(Error::NotBinaryTarget(distinct.len()));
    }
    let mut it = distinct.into_iter();
    let negative = it.next().expect("two values").to_string();
    let positive = it.next().expect("two values").to_string();
    let labels = values.iter().map(|v| if *v == negative { -1 } else { 1 }).collect();
    Ok((labels, TargetMapping { negative, positive }))
}

/// Appends a constant 1.0 feature and rescales rows whose norm exceeds 1.
pub fn append_constant_and_renormalize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            let mut out = Vec::with_capacity(row.len() + 1);
            out.extend_from_slice(row);
            out.push(1.0);
            normalize_row(&mut out);
            out
        })
        .collect()
}

/// Randomly permutes the records, then keeps the first `n1` rows and the
/// first `d1` feature columns.
pub fn extract_subset(
    table: &NumericTable,
    labels: &[i8],
    n1: usize,
    d1: usize,
    rng: &mut RngStream,
) -> Result<(NumericTable, Vec<i8>)> {
    if labels.len() != table.rows.len() {
        return Err(Error::DimensionMismatch {
            expected: table.rows.len(),
            found: labels.len(),
        });
    }
    if n1 == 0 || n1 > table.rows.len() {
        return Err(invalid("n1", format!("must lie in 1..={}", table.rows.len())));
    }
    if d1 == 0 || d1 > table.ncols() {
        return Err(invalid("d1", format!("must lie in 1..={}", table.ncols())));
    }
    let mut order: Vec<usize> = (0..table.rows.len()).collect();
    order.shuffle(rng);
    order.truncate(n1);
    let rows = order.iter().map(|&i| table.rows[i][..d1].to_vec()).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    Ok((
        NumericTable {
            names: table.names[..d1].to_vec(),
            rows,
        },
        labels,
    ))
}

/// Optional sub-dataset extraction applied after scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub n1: usize,
    pub d1: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub dataset: Dataset,
    pub feature_names: Vec<String>,
    pub mapping: TargetMapping,
    /// Dimensionality before the constant feature was appended.
    pub reported_dim: usize,
}

/// Full pipeline from raw table to a validated dataset.
pub fn prepare(table: &RawTable, schema: &Schema, subset: Option<SubsetSpec>) -> Result<Prepared> {
    if table.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let features = binarize(table, schema)?;
    let (labels, mapping) = map_target(&table.column(&schema.target().name)?)?;
    let scaled = scale_and_normalize(&features);
    let (scaled, labels) = match subset {
        Some(s) => extract_subset(&scaled, &labels, s.n1, s.d1, &mut RngStream::new(s.seed, 0))?,
        None => (scaled, labels),
    };
    let reported_dim = scaled.ncols();
    let rows = append_constant_and_renormalize(&scaled.rows);
    let records = rows.into_iter().zip(labels).map(|(x, y)| Record::new(x, y)).collect();
    let mut feature_names = scaled.names;
    feature_names.push("const".into());
    Ok(Prepared {
        dataset: Dataset::new(records)?,
        feature_names,
        mapping,
        reported_dim,
    })
}

/// Writes the processed form: header `f0,…,f{d'-1},label`, features with 17
/// significant digits, labels as -1 or 1.
pub fn write_processed_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..d.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for r in d.records() {
        let mut row: Vec<String> = r.features.iter().map(|v| format!("{v:.16e}")).collect();
        row.push(r.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the processed form written by [`write_processed_csv`].
pub fn read_processed_csv<R: Read>(reader: R) -> Result<Dataset> {
    let table = read_raw_csv(reader)?;
    let label_idx = table.column_index("label")?;
    let feature_idx: Vec<usize> = (0..table.headers.len()).filter(|&i| i != label_idx).collect();
    let mut records = Vec::with_capacity(table.rows.len());
    for (r, cells) in table.rows.iter().enumerate() {
        let parse_err = |i: usize| Error::Parse {
            column: table.headers[i].clone(),
            row: r,
            value: cells[i].clone(),
        };
        let x = feature_idx
            .iter()
            .map(|&i| cells[i].parse::<f64>().map_err(|_| parse_err(i)))
            .collect::<Result<Vec<f64>>>()?;
        let y: i8 = cells[label_idx].parse().map_err(|_| parse_err(label_idx))?;
        records.push(Record::new(x, y));
    }
    Dataset::new(records)
}
