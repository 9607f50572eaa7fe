//! Column-typed tables with explicit missing cells, CSV ingestion driven by a
//! JSON schema config, and feature-pool filtering.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CactusError, Result};
use crate::explain::RankReport;

/// Features with at most this many distinct integer values are categorical.
pub const MAX_CATEGORICAL_LEVELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: FeatureKind,
    /// Kind forced by the schema config rather than detected.
    pub declared: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Level(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_level(&self) -> Option<&str> {
        match self {
            Cell::Level(s) => Some(s),
            _ => None,
        }
    }
}

/// Canonical text for a categorical value: integer-valued numerics lose
/// their fractional part ("2.0" -> "2"), everything else is kept verbatim.
pub fn canonical_level(raw: &str) -> String {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => {
            format!("{}", v as i64)
        }
        _ => raw.to_string(),
    }
}

/// Categorical iff every observed value is an integer and there are at most
/// [`MAX_CATEGORICAL_LEVELS`] distinct values. `None` when nothing was observed.
pub fn detect_kind(observed: &[f64]) -> Option<FeatureKind> {
    if observed.is_empty() {
        return None;
    }
    let mut distinct = HashSet::new();
    for v in observed {
        if v.fract() != 0.0 {
            return Some(FeatureKind::Continuous);
        }
        distinct.insert(v.to_bits());
        if distinct.len() > MAX_CATEGORICAL_LEVELS {
            return Some(FeatureKind::Continuous);
        }
    }
    Some(FeatureKind::Categorical)
}

/// JSON schema config accompanying a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub label_column: String,
    #[serde(default = "default_markers")]
    pub missing_markers: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub excluded: Vec<String>,
}

fn default_markers() -> Vec<String> {
    vec![String::new(), "NA".into(), "NaN".into()]
}

impl SchemaConfig {
    pub fn new(label_column: impl Into<String>) -> Self {
        SchemaConfig {
            label_column: label_column.into(),
            missing_markers: default_markers(),
            categorical: Vec::new(),
            continuous: Vec::new(),
            excluded: Vec::new(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CactusError::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| CactusError::json(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| CactusError::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| CactusError::io(path, e))
    }

    fn is_missing(&self, cell: &str) -> bool {
        self.missing_markers
            .iter()
            .any(|m| m.trim().eq_ignore_ascii_case(cell))
    }
}

/// Feature columns without labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Vec<FeatureSchema>,
    columns: Vec<Vec<Cell>>,
    n_rows: usize,
}

impl Table {
    pub fn new(schema: Vec<FeatureSchema>, columns: Vec<Vec<Cell>>) -> Result<Self> {
        if schema.len() != columns.len() {
            return Err(CactusError::InvalidDataset(format!(
                "{} schema entries for {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &schema {
            if !seen.insert(s.name.as_str()) {
                return Err(CactusError::DuplicateFeature(s.name.clone()));
            }
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        for (s, col) in schema.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(CactusError::InvalidDataset(format!(
                    "column `{}` has {} cells, expected {n_rows}",
                    s.name,
                    col.len()
                )));
            }
            let bad = col.iter().find(|c| match (s.kind, c) {
                (_, Cell::Missing) => false,
                (FeatureKind::Continuous, Cell::Number(v)) => !v.is_finite(),
                (FeatureKind::Categorical, Cell::Level(_)) => false,
                _ => true,
            });
            if let Some(c) = bad {
                return Err(CactusError::InvalidDataset(format!(
                    "cell {c:?} does not match the {:?} kind of `{}`",
                    s.kind, s.name
                )));
            }
        }
        Ok(Table {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[FeatureSchema] {
        &self.schema
    }

    pub fn column(&self, feature: usize) -> &[Cell] {
        &self.columns[feature]
    }

    pub fn cell(&self, row: usize, feature: usize) -> &Cell {
        &self.columns[feature][row]
    }

    pub fn row(&self, row: usize) -> Vec<Cell> {
        self.columns.iter().map(|c| c[row].clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s.name == name)
    }

    pub fn observed_count(&self, feature: usize) -> usize {
        self.columns[feature].iter().filter(|c| !c.is_missing()).count()
    }

    pub fn missing_fraction(&self, feature: usize) -> f64 {
        if self.n_rows == 0 {
            return 0.0;
        }
        1.0 - self.observed_count(feature) as f64 / self.n_rows as f64
    }

    pub fn total_observed(&self) -> usize {
        (0..self.n_features()).map(|f| self.observed_count(f)).sum()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            columns: self
                .columns
                .iter()
                .map(|col| rows.iter().map(|&r| col[r].clone()).collect())
                .collect(),
            n_rows: rows.len(),
        }
    }

    pub fn select_features(&self, features: &[usize]) -> Table {
        Table {
            schema: features.iter().map(|&f| self.schema[f].clone()).collect(),
            columns: features.iter().map(|&f| self.columns[f].clone()).collect(),
            n_rows: self.n_rows,
        }
    }

    /// Same schema, cells rewritten by `f(row, feature, cell)`.
    pub fn map_cells(&self, mut f: impl FnMut(usize, usize, &Cell) -> Cell) -> Table {
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, col)| col.iter().enumerate().map(|(i, c)| f(i, j, c)).collect())
            .collect();
        Table {
            schema: self.schema.clone(),
            columns,
            n_rows: self.n_rows,
        }
    }
}

/// A labelled table. Labels are dense class indices into `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    table: Table,
    labels: Vec<usize>,
    class_names: Vec<String>,
    label_column: String,
}

impl Dataset {
    pub fn new(
        table: Table,
        labels: Vec<usize>,
        class_names: Vec<String>,
        label_column: impl Into<String>,
    ) -> Result<Self> {
        let k = class_names.len();
        if k < 2 {
            return Err(CactusError::InvalidDataset(format!(
                "need at least 2 classes, found {k}"
            )));
        }
        if labels.is_empty() {
            return Err(CactusError::InvalidDataset("dataset has no rows".into()));
        }
        if table.n_features() > 0 && labels.len() != table.n_rows() {
            return Err(CactusError::InvalidDataset(format!(
                "{} labels for {} rows",
                labels.len(),
                table.n_rows()
            )));
        }
        let mut present = vec![false; k];
        for &l in &labels {
            if l >= k {
                return Err(CactusError::InvalidDataset(format!(
                    "label {l} outside 0..{k}"
                )));
            }
            present[l] = true;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(CactusError::EmptyClass(c));
        }
        let mut table = table;
        table.n_rows = labels.len();
        Ok(Dataset {
            table,
            labels,
            class_names,
            label_column: label_column.into(),
        })
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    /// Replace the feature table, keeping labels.
    pub fn with_table(&self, table: Table) -> Result<Dataset> {
        Dataset::new(
            table,
            self.labels.clone(),
            self.class_names.clone(),
            self.label_column.clone(),
        )
    }

    /// Row subset. Every class must still be represented.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.table.select_rows(rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
            self.class_names.clone(),
            self.label_column.clone(),
        )
    }

    /// Schema config that reproduces this dataset's kinds exactly on reload.
    pub fn schema_config(&self) -> SchemaConfig {
        let mut cfg = SchemaConfig::new(&self.label_column);
        for s in self.table.schema() {
            match s.kind {
                FeatureKind::Continuous => cfg.continuous.push(s.name.clone()),
                FeatureKind::Categorical => cfg.categorical.push(s.name.clone()),
            }
        }
        cfg
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |source| CactusError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<&str> = self.table.schema.iter().map(|s| s.name.as_str()).collect();
        header.push(&self.label_column);
        w.write_record(&header).map_err(csv_err)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            for col in &self.table.columns {
                record.push(match &col[r] {
                    Cell::Missing => String::new(),
                    Cell::Number(v) => format!("{v}"),
                    Cell::Level(s) => s.clone(),
                });
            }
            record.push(self.class_names[self.labels[r]].clone());
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CactusError::io(path, e))
    }
}

/// Result of reading a CSV whose label column may be absent.
#[derive(Debug, Clone)]
pub struct RawLoad {
    pub table: Table,
    /// Raw label strings, `None` when the label column is absent.
    pub labels: Option<Vec<String>>,
}

/// Read a CSV into a feature table; the label column is optional.
pub fn read_csv(path: impl AsRef<Path>, config: &SchemaConfig) -> Result<RawLoad> {
    let path = path.as_ref();
    let csv_err = |source| CactusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|e| CactusError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let label_idx = header.iter().position(|h| *h == config.label_column);
    let header_set: HashSet<&str> = header.iter().map(String::as_str).collect();
    for name in config.categorical.iter().chain(&config.continuous) {
        if !header_set.contains(name.as_str()) {
            return Err(CactusError::UnknownFeature(name.clone()));
        }
    }
    if let Some(name) = config
        .categorical
        .iter()
        .find(|n| config.continuous.contains(n))
    {
        return Err(CactusError::InvalidSpec(format!(
            "`{name}` declared both categorical and continuous"
        )));
    }
    let excluded: HashSet<&str> = config.excluded.iter().map(String::as_str).collect();
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != label_idx && !excluded.contains(header[i].as_str()))
        .collect();

    // raw[f][r]: Some(trimmed text) or None for missing
    let mut raw: Vec<Vec<Option<String>>> = vec![Vec::new(); feature_cols.len()];
    let mut labels = label_idx.map(|_| Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = i + 2;
        if record.len() != header.len() {
            return Err(CactusError::RowLength {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (slot, &c) in raw.iter_mut().zip(&feature_cols) {
            let cell = record[c].trim();
            slot.push((!config.is_missing(cell)).then(|| cell.to_string()));
        }
        if let (Some(labels), Some(li)) = (labels.as_mut(), label_idx) {
            let cell = record[li].trim();
            if config.is_missing(cell) {
                return Err(CactusError::MissingLabel { row });
            }
            labels.push(cell.to_string());
        }
    }

    let mut schema = Vec::with_capacity(feature_cols.len());
    let mut columns = Vec::with_capacity(feature_cols.len());
    for (cells, &c) in raw.into_iter().zip(&feature_cols) {
        let name = header[c].clone();
        let declared = if config.categorical.contains(&name) {
            Some(FeatureKind::Categorical)
        } else if config.continuous.contains(&name) {
            Some(FeatureKind::Continuous)
        } else {
            None
        };
        let kind = match declared {
            Some(k) => k,
            None => {
                let mut observed = Vec::new();
                for (r, cell) in cells.iter().enumerate() {
                    if let Some(text) = cell {
                        observed.push(parse_number(text).ok_or_else(|| {
                            CactusError::NonNumeric {
                                row: r + 2,
                                column: name.clone(),
                                value: text.clone(),
                            }
                        })?);
                    }
                }
                detect_kind(&observed).unwrap_or(FeatureKind::Continuous)
            }
        };
        let column = cells
            .into_iter()
            .enumerate()
            .map(|(r, cell)| match (cell, kind) {
                (None, _) => Ok(Cell::Missing),
                (Some(text), FeatureKind::Categorical) => Ok(Cell::Level(canonical_level(&text))),
                (Some(text), FeatureKind::Continuous) => parse_number(&text)
                    .map(Cell::Number)
                    .ok_or(CactusError::NonNumeric {
                        row: r + 2,
                        column: name.clone(),
                        value: text,
                    }),
            })
            .collect::<Result<Vec<_>>>()?;
        schema.push(FeatureSchema {
            name,
            kind,
            declared: declared.is_some(),
        });
        columns.push(column);
    }
    let mut table = Table::new(schema, columns)?;
    if let Some(l) = &labels {
        table.n_rows = l.len();
    }
    Ok(RawLoad { table, labels })
}

fn parse_number(text: &str) -> Option<f64> {
    text.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Class names for raw labels: ascending numeric order when every label is
/// an integer, first-appearance order otherwise.
pub fn class_names_for(raw: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut names: Vec<String> = raw
        .iter()
        .filter(|l| seen.insert(l.as_str()))
        .cloned()
        .collect();
    let numeric: Option<Vec<i64>> = names.iter().map(|n| n.parse::<i64>().ok()).collect();
    if let Some(values) = numeric {
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by_key(|&i| values[i]);
        names = order.into_iter().map(|i| names[i].clone()).collect();
    }
    names
}

/// Map raw labels onto indices of `class_names`.
pub fn index_labels(raw: &[String], class_names: &[String]) -> Result<Vec<usize>> {
    let lookup: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    raw.iter()
        .enumerate()
        .map(|(r, l)| {
            lookup.get(l.as_str()).copied().ok_or_else(|| {
                CactusError::SchemaMismatch(format!("row {}: unknown class label `{l}`", r + 2))
            })
        })
        .collect()
}

/// Load a labelled CSV.
pub fn load_csv(path: impl AsRef<Path>, config: &SchemaConfig) -> Result<Dataset> {
    let RawLoad { table, labels } = read_csv(path, config)?;
    let raw = labels.ok_or_else(|| CactusError::LabelColumnMissing(config.label_column.clone()))?;
    let class_names = class_names_for(&raw);
    let labels = index_labels(&raw, &class_names)?;
    Dataset::new(table, labels, class_names, config.label_column.clone())
}

/// Feature-pool filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    #[serde(default)]
    pub excluded: BTreeSet<String>,
    #[serde(default = "one")]
    pub max_missing_fraction: f64,
    #[serde(default)]
    pub keep_top_k_by_rank: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            excluded: BTreeSet::new(),
            max_missing_fraction: 1.0,
            keep_top_k_by_rank: None,
        }
    }
}

impl FilterSpec {
    pub fn is_identity(&self) -> bool {
        self.excluded.is_empty()
            && self.max_missing_fraction >= 1.0
            && self.keep_top_k_by_rank.is_none()
    }
}

/// Drop excluded, overly missing, and unobserved features, then optionally
/// keep the `k` features with the highest average rank. Rows are untouched.
pub fn apply_filter(d: &Dataset, f: &FilterSpec, ranks: Option<&RankReport>) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&f.max_missing_fraction) {
        return Err(CactusError::InvalidFilter(format!(
            "max_missing_fraction {} outside [0, 1]",
            f.max_missing_fraction
        )));
    }
    let table = d.table();
    for name in &f.excluded {
        if table.feature_index(name).is_none() {
            return Err(CactusError::UnknownFeature(name.clone()));
        }
    }
    if f.keep_top_k_by_rank.is_some() && ranks.is_none() {
        return Err(CactusError::InvalidFilter(
            "keep_top_k_by_rank requires a rank report".into(),
        ));
    }

    let mut keep: Vec<usize> = (0..table.n_features()).collect();
    let stage = |keep: &mut Vec<usize>, name: &'static str, pred: &dyn Fn(usize) -> bool| {
        keep.retain(|&i| pred(i));
        if keep.is_empty() {
            Err(CactusError::FilterEmptied(name))
        } else {
            Ok(())
        }
    };
    stage(&mut keep, "excluded", &|i| {
        !f.excluded.contains(&table.schema()[i].name)
    })?;
    stage(&mut keep, "max_missing_fraction", &|i| {
        table.missing_fraction(i) <= f.max_missing_fraction
    })?;
    stage(&mut keep, "observed values", &|i| table.observed_count(i) > 0)?;

    if let (Some(k), Some(report)) = (f.keep_top_k_by_rank, ranks) {
        if k == 0 {
            return Err(CactusError::FilterEmptied("keep_top_k_by_rank"));
        }
        let rank_of: HashMap<&str, f64> = report
            .features
            .iter()
            .map(|fr| (fr.feature.as_str(), fr.avg_rank))
            .collect();
        let mut ordered = keep.clone();
        ordered.sort_by(|&a, &b| {
            let (na, nb) = (&table.schema()[a].name, &table.schema()[b].name);
            let ra = rank_of.get(na.as_str()).copied().unwrap_or(f64::NEG_INFINITY);
            let rb = rank_of.get(nb.as_str()).copied().unwrap_or(f64::NEG_INFINITY);
            rb.total_cmp(&ra).then_with(|| na.cmp(nb))
        });
        ordered.truncate(k);
        let chosen: HashSet<usize> = ordered.into_iter().collect();
        keep.retain(|i| chosen.contains(i));
    }

    d.with_table(table.select_features(&keep))
}

/// Write a string to a file with path context.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = File::create(path).map_err(|e| CactusError::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| CactusError::io(path, e))
}
