//! Tabular data model: column schemas, CSV ingestion and emission,
//! categorical encoding, and the positivity filter that must run before any
//! causal analysis.
//!
//! Tables are stored column-wise. Every cell may be explicitly missing;
//! operations that need complete columns either reject missing cells or drop
//! the affected rows and report how many were dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Binary,
}

impl ColumnKind {
    fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Binary => "binary",
        }
    }
}

/// What a column means to the causal analysis.
///
/// `PreTreatment` columns are fixed before the group attribute is perceived;
/// `PostTreatment` and `Outcome` columns may be affected by it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    PreTreatment,
    Group,
    PostTreatment,
    Outcome,
    Id,
    Weight,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
        }
    }
}

/// Column storage. `None` is the explicit-missing marker.
///
/// Categorical and binary columns keep their level set sorted
/// lexicographically; codes index into it. A binary column whose observed
/// levels are a subset of `{"0", "1"}` always uses the levels `["0", "1"]`,
/// so the code equals the numeric value.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical {
        levels: Vec<String>,
        codes: Vec<Option<u32>>,
    },
    Binary {
        levels: Vec<String>,
        values: Vec<Option<u8>>,
    },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
            Column::Binary { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            Column::Numeric(_) => ColumnKind::Numeric,
            Column::Categorical { .. } => ColumnKind::Categorical,
            Column::Binary { .. } => ColumnKind::Binary,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_none(),
            Column::Categorical { codes, .. } => codes[row].is_none(),
            Column::Binary { values, .. } => values[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_missing(i)).count()
    }

    /// Text form of a cell as written to CSV (empty for missing).
    pub fn cell_text(&self, row: usize) -> String {
        match self {
            Column::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            Column::Categorical { levels, codes } => codes[row]
                .map(|c| levels[c as usize].clone())
                .unwrap_or_default(),
            Column::Binary { levels, values } => values[row]
                .map(|c| levels[c as usize].clone())
                .unwrap_or_default(),
        }
    }

    /// Binary column from 0/1 values.
    pub fn binary(values: Vec<u8>) -> Self {
        Column::Binary {
            levels: vec!["0".into(), "1".into()],
            values: values.into_iter().map(Some).collect(),
        }
    }

    pub fn numeric(values: Vec<f64>) -> Self {
        Column::Numeric(values.into_iter().map(Some).collect())
    }

    /// Categorical column from raw strings; levels sorted lexicographically.
    pub fn categorical<S: AsRef<str>>(values: &[S]) -> Self {
        let levels: Vec<String> = values
            .iter()
            .map(|s| s.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let codes = values
            .iter()
            .map(|s| Some(levels.binary_search_by(|l| l.as_str().cmp(s.as_ref())).unwrap() as u32))
            .collect();
        Column::Categorical { levels, codes }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical { levels, codes } => Column::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
            Column::Binary { levels, values } => Column::Binary {
                levels: levels.clone(),
                values: rows.iter().map(|&r| values[r]).collect(),
            },
        }
    }
}

/// A rectangular, immutable table with a declared schema.
#[derive(Clone, Debug, PartialEq)]
pub struct DataTable {
    specs: Vec<ColumnSpec>,
    columns: Vec<Column>,
    n: usize,
}

impl DataTable {
    /// Validates and assembles a table.
    ///
    /// Requires unique names, matching kinds, equal column lengths, and
    /// exactly one binary column with role `Group`.
    pub fn new(specs: Vec<ColumnSpec>, columns: Vec<Column>) -> Result<Self> {
        if specs.len() != columns.len() {
            return Err(Error::DimensionMismatch {
                what: "columns vs schema",
                expected: specs.len(),
                actual: columns.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for s in &specs {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", s.name)));
            }
        }
        let n = columns.first().map(Column::len).unwrap_or(0);
        for (s, c) in specs.iter().zip(&columns) {
            if c.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "column length",
                    expected: n,
                    actual: c.len(),
                });
            }
            if c.kind() != s.kind {
                return Err(Error::WrongKind {
                    column: s.name.clone(),
                    expected: s.kind.as_str(),
                    actual: c.kind().as_str(),
                });
            }
        }
        let groups: Vec<&ColumnSpec> = specs.iter().filter(|s| s.role == ColumnRole::Group).collect();
        match groups.as_slice() {
            [g] if g.kind == ColumnKind::Binary => {}
            [g] => {
                return Err(Error::Schema(format!(
                    "group column `{}` must be binary",
                    g.name
                )))
            }
            _ => {
                return Err(Error::Schema(format!(
                    "exactly one group column required, found {}",
                    groups.len()
                )))
            }
        }
        Ok(Self { specs, columns, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn specs(&self) -> &[ColumnSpec] {
        &self.specs
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn spec(&self, name: &str) -> Result<&ColumnSpec> {
        Ok(&self.specs[self.index_of(name)?])
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        Ok(&self.columns[self.index_of(name)?])
    }

    pub fn group_name(&self) -> &str {
        &self
            .specs
            .iter()
            .find(|s| s.role == ColumnRole::Group)
            .expect("validated in new")
            .name
    }

    /// Group membership as 0/1, erroring on missing cells.
    pub fn group(&self) -> Result<Vec<u8>> {
        self.binary(self.group_name())
    }

    /// Complete numeric values of a numeric or binary column.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column(name)?;
        let missing = col.missing_count();
        if missing > 0 {
            return Err(Error::MissingValues {
                column: name.into(),
                count: missing,
            });
        }
        match col {
            Column::Numeric(v) => Ok(v.iter().map(|x| x.unwrap()).collect()),
            Column::Binary { .. } => Ok(self.binary(name)?.into_iter().map(f64::from).collect()),
            Column::Categorical { .. } => Err(Error::WrongKind {
                column: name.into(),
                expected: "numeric",
                actual: "categorical",
            }),
        }
    }

    /// Complete 0/1 values of a binary column.
    pub fn binary(&self, name: &str) -> Result<Vec<u8>> {
        match self.column(name)? {
            Column::Binary { values, .. } => values
                .iter()
                .map(|v| {
                    v.ok_or_else(|| Error::MissingValues {
                        column: name.into(),
                        count: values.iter().filter(|x| x.is_none()).count(),
                    })
                })
                .collect(),
            other => Err(Error::WrongKind {
                column: name.into(),
                expected: "binary",
                actual: other.kind().as_str(),
            }),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            specs: self.specs.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n: rows.len(),
        }
    }

    /// Drops rows with a missing cell in any of `names`, returning the
    /// reduced table and the number of dropped rows.
    pub fn drop_missing(&self, names: &[&str]) -> Result<(DataTable, usize)> {
        let cols = names
            .iter()
            .map(|n| self.column(n))
            .collect::<Result<Vec<_>>>()?;
        let keep: Vec<usize> = (0..self.n)
            .filter(|&r| cols.iter().all(|c| !c.is_missing(r)))
            .collect();
        let dropped = self.n - keep.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} row(s) with missing values in {names:?}");
            Ok((self.select_rows(&keep), dropped))
        } else {
            Ok((self.clone(), 0))
        }
    }
}

/// Incremental construction of a [`DataTable`] from complete vectors.
#[derive(Default)]
pub struct TableBuilder {
    specs: Vec<ColumnSpec>,
    columns: Vec<Column>,
}

impl TableBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn numeric(mut self, name: &str, role: ColumnRole, values: Vec<f64>) -> Self {
        self.specs.push(ColumnSpec::new(name, ColumnKind::Numeric, role));
        self.columns.push(Column::numeric(values));
        self
    }

    pub fn binary(mut self, name: &str, role: ColumnRole, values: Vec<u8>) -> Self {
        self.specs.push(ColumnSpec::new(name, ColumnKind::Binary, role));
        self.columns.push(Column::binary(values));
        self
    }

    pub fn categorical<S: AsRef<str>>(mut self, name: &str, role: ColumnRole, values: &[S]) -> Self {
        self.specs
            .push(ColumnSpec::new(name, ColumnKind::Categorical, role));
        self.columns.push(Column::categorical(values));
        self
    }

    pub fn build(self) -> Result<DataTable> {
        DataTable::new(self.specs, self.columns)
    }
}

fn parse_column(name: &str, kind: ColumnKind, raw: &[String]) -> Result<Column> {
    match kind {
        ColumnKind::Numeric => Ok(Column::Numeric(
            raw.iter()
                .map(|s| {
                    let t = s.trim();
                    if t.is_empty() {
                        None
                    } else {
                        t.parse::<f64>().ok()
                    }
                })
                .collect(),
        )),
        ColumnKind::Categorical | ColumnKind::Binary => {
            let levels: Vec<String> = raw
                .iter()
                .filter(|s| !s.is_empty())
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if kind == ColumnKind::Categorical {
                let codes = raw
                    .iter()
                    .map(|s| {
                        (!s.is_empty()).then(|| levels.binary_search(s).unwrap() as u32)
                    })
                    .collect();
                return Ok(Column::Categorical { levels, codes });
            }
            if levels.len() > 2 {
                return Err(Error::NotBinary {
                    column: name.into(),
                    levels,
                });
            }
            let levels = if levels.iter().all(|l| l == "0" || l == "1") {
                vec!["0".to_string(), "1".to_string()]
            } else {
                levels
            };
            let values = raw
                .iter()
                .map(|s| (!s.is_empty()).then(|| levels.binary_search(s).unwrap() as u8))
                .collect();
            Ok(Column::Binary { levels, values })
        }
    }
}

/// Reads a CSV file with a mandatory header whose names match `schema`
/// (order-insensitive). Empty or unparseable cells become missing.
pub fn load_csv(path: impl AsRef<Path>, schema: &[ColumnSpec]) -> Result<DataTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let declared: BTreeSet<&str> = schema.iter().map(|s| s.name.as_str()).collect();
    let present: BTreeSet<&str> = header.iter().map(String::as_str).collect();
    if declared != present || header.len() != present.len() {
        return Err(Error::HeaderMismatch {
            missing: declared.difference(&present).map(|s| s.to_string()).collect(),
            unexpected: present.difference(&declared).map(|s| s.to_string()).collect(),
        });
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            raw[j].push(field.to_string());
        }
    }

    let mut columns = Vec::with_capacity(schema.len());
    for spec in schema {
        let j = header.iter().position(|h| *h == spec.name).unwrap();
        columns.push(parse_column(&spec.name, spec.kind, &raw[j])?);
    }
    DataTable::new(schema.to_vec(), columns)
}

/// Builds a schema from a CSV header. `group_col` becomes the binary group
/// column and `categorical_cols` are categorical; any other column is
/// numeric when every non-empty cell parses as a number, categorical
/// otherwise. Non-group columns are treated as pre-treatment.
pub fn infer_schema(path: impl AsRef<Path>, group_col: &str, categorical_cols: &[&str]) -> Result<Vec<ColumnSpec>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    for name in std::iter::once(&group_col).chain(categorical_cols) {
        if !header.iter().any(|h| h == name) {
            return Err(Error::UnknownColumn((*name).to_string()));
        }
    }
    let mut numeric = vec![true; header.len()];
    for record in reader.records() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            let t = field.trim();
            if !t.is_empty() && t.parse::<f64>().is_err() {
                numeric[j] = false;
            }
        }
    }
    Ok(header
        .iter()
        .zip(numeric)
        .map(|(name, is_numeric)| {
            if name == group_col {
                ColumnSpec::new(name, ColumnKind::Binary, ColumnRole::Group)
            } else if categorical_cols.contains(&name.as_str()) || !is_numeric {
                ColumnSpec::new(name, ColumnKind::Categorical, ColumnRole::PreTreatment)
            } else {
                ColumnSpec::new(name, ColumnKind::Numeric, ColumnRole::PreTreatment)
            }
        })
        .collect())
}

/// Writes the table as CSV in schema order. Missing cells are empty fields;
/// numbers use the shortest representation that parses back exactly.
pub fn write_csv(table: &DataTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer.write_record(table.specs.iter().map(|s| s.name.as_str()))?;
    for r in 0..table.n {
        writer.write_record(table.columns.iter().map(|c| c.cell_text(r)))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceBlock {
    pub column: String,
    pub range: Range<usize>,
}

/// A dense design matrix with named features and a map back to the source
/// columns each feature came from.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMatrix {
    pub design: Array2<f64>,
    pub feature_names: Vec<String>,
    pub source_mapping: Vec<SourceBlock>,
}

impl EncodedMatrix {
    /// Wraps a raw matrix; each feature is its own source block.
    pub fn from_parts(design: Array2<f64>, feature_names: Vec<String>) -> Result<Self> {
        if design.ncols() != feature_names.len() {
            return Err(Error::DimensionMismatch {
                what: "feature names",
                expected: design.ncols(),
                actual: feature_names.len(),
            });
        }
        let source_mapping = feature_names
            .iter()
            .enumerate()
            .map(|(j, n)| SourceBlock {
                column: n.clone(),
                range: j..j + 1,
            })
            .collect();
        Ok(Self {
            design,
            feature_names,
            source_mapping,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.design.ncols()
    }

    pub fn block(&self, column: &str) -> Option<Range<usize>> {
        self.source_mapping
            .iter()
            .find(|b| b.column == column)
            .map(|b| b.range.clone())
    }
}

/// Builds a design matrix from `columns`: categorical columns expand to one
/// indicator per level (lexicographic order), numeric and binary columns pass
/// through unchanged.
pub fn one_hot_encode(table: &DataTable, columns: &[&str]) -> Result<EncodedMatrix> {
    let mut names = Vec::new();
    let mut blocks = Vec::new();
    let mut sources = Vec::new();
    for &name in columns {
        let col = table.column(name)?;
        let missing = col.missing_count();
        if missing > 0 {
            return Err(Error::MissingValues {
                column: name.into(),
                count: missing,
            });
        }
        let start = names.len();
        match col {
            Column::Categorical { levels, .. } => {
                names.extend(levels.iter().map(|l| format!("{name}={l}")));
            }
            _ => names.push(name.to_string()),
        }
        blocks.push(SourceBlock {
            column: name.to_string(),
            range: start..names.len(),
        });
        sources.push(col);
    }

    let mut design = Array2::<f64>::zeros((table.n(), names.len()));
    for (block, col) in blocks.iter().zip(sources) {
        let start = block.range.start;
        match col {
            Column::Numeric(v) => {
                for (r, x) in v.iter().enumerate() {
                    design[[r, start]] = x.unwrap();
                }
            }
            Column::Binary { values, .. } => {
                for (r, x) in values.iter().enumerate() {
                    design[[r, start]] = f64::from(x.unwrap());
                }
            }
            Column::Categorical { codes, .. } => {
                for (r, c) in codes.iter().enumerate() {
                    design[[r, start + c.unwrap() as usize]] = 1.0;
                }
            }
        }
    }
    Ok(EncodedMatrix {
        design,
        feature_names: names,
        source_mapping: blocks,
    })
}

/// One joint level combination that lacked one of the two groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivityCell {
    pub levels: BTreeMap<String, String>,
    pub group_counts: [usize; 2],
    pub removed: usize,
}

#[derive(Clone, Debug)]
pub struct PositivityOutcome {
    pub table: DataTable,
    pub removed: usize,
    pub audit: Vec<PositivityCell>,
}

/// Removes every row whose joint level combination of `categorical_cols`
/// is observed in only one group. Numeric columns are never binned.
pub fn positivity_filter(
    table: &DataTable,
    group_col: &str,
    categorical_cols: &[&str],
) -> Result<PositivityOutcome> {
    let group_spec = table.spec(group_col)?;
    if group_spec.kind != ColumnKind::Binary {
        let levels = match table.column(group_col)? {
            Column::Categorical { levels, .. } => levels.clone(),
            _ => Vec::new(),
        };
        return Err(Error::NotBinary {
            column: group_col.into(),
            levels,
        });
    }
    let group = table.binary(group_col)?;
    let cols = categorical_cols
        .iter()
        .map(|&c| {
            let col = table.column(c)?;
            let missing = col.missing_count();
            if missing > 0 {
                return Err(Error::MissingValues {
                    column: c.into(),
                    count: missing,
                });
            }
            Ok(col)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells: BTreeMap<Vec<String>, ([usize; 2], Vec<usize>)> = BTreeMap::new();
    for (r, &g) in group.iter().enumerate() {
        let key: Vec<String> = cols.iter().map(|c| c.cell_text(r)).collect();
        let entry = cells.entry(key).or_default();
        entry.0[g as usize] += 1;
        entry.1.push(r);
    }

    let mut keep = Vec::with_capacity(table.n());
    let mut audit = Vec::new();
    for (key, (counts, rows)) in cells {
        if counts[0] > 0 && counts[1] > 0 {
            keep.extend(rows);
        } else {
            audit.push(PositivityCell {
                levels: categorical_cols
                    .iter()
                    .map(|c| c.to_string())
                    .zip(key)
                    .collect(),
                group_counts: counts,
                removed: rows.len(),
            });
        }
    }
    keep.sort_unstable();
    let removed = table.n() - keep.len();
    Ok(PositivityOutcome {
        table: table.select_rows(&keep),
        removed,
        audit,
    })
}

pub fn write_audit_json(audit: &[PositivityCell], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, audit)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}
