//! Abstraction of raw feature values into flips.
//!
//! Continuous features get a single cut-off chosen by exhaustive search over
//! every bipartition of the classes and every candidate threshold, scoring
//! each pair by balanced accuracy. Values at or below the cut-off become the
//! `_D` flip, values above it `_U`. Categorical features get one flip per
//! observed level. Missing cells produce no flip.

use std::cmp::Ordering;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CactusError, Result};
use crate::tabular::{Cell, Dataset, FeatureKind, Table};

/// Class-count ceiling for bipartition enumeration.
pub const MAX_CLASSES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Down,
    Up,
    Category(String),
}

impl Level {
    pub fn label(&self) -> &str {
        match self {
            Level::Down => "D",
            Level::Up => "U",
            Level::Category(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flip {
    pub feature: String,
    /// Index into [`AbstractionMap::features`].
    pub feature_index: usize,
    pub level: Level,
}

impl Flip {
    pub fn name(&self) -> String {
        format!("{}_{}", self.feature, self.level.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub feature: String,
    pub threshold: f64,
    /// Bitmask of the classes placed in group 1.
    pub partition: u32,
    pub achieved_ba: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureAbstraction {
    Continuous(Cutoff),
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractedFeature {
    pub name: String,
    /// Column position in the source schema.
    pub column: usize,
    pub abstraction: FeatureAbstraction,
    pub first_flip: usize,
    pub n_flips: usize,
}

impl AbstractedFeature {
    pub fn flip_range(&self) -> std::ops::Range<usize> {
        self.first_flip..self.first_flip + self.n_flips
    }

    pub fn kind(&self) -> FeatureKind {
        match self.abstraction {
            FeatureAbstraction::Continuous(_) => FeatureKind::Continuous,
            FeatureAbstraction::Categorical { .. } => FeatureKind::Categorical,
        }
    }
}

/// A feature left out of the flip universe and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub feature: String,
    pub reason: String,
}

/// Learned cut-offs and levels plus the dense flip universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MapRepr", try_from = "MapRepr")]
pub struct AbstractionMap {
    source_columns: Vec<String>,
    features: Vec<AbstractedFeature>,
    flips: Vec<Flip>,
    dropped: Vec<DroppedFeature>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum FeatureRepr {
    Continuous {
        threshold: f64,
        partition: u32,
        achieved_ba: f64,
    },
    Categorical {
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MapRepr {
    source_columns: Vec<String>,
    features: IndexMap<String, FeatureRepr>,
    #[serde(default)]
    dropped: Vec<DroppedFeature>,
}

impl From<AbstractionMap> for MapRepr {
    fn from(map: AbstractionMap) -> Self {
        let features = map
            .features
            .into_iter()
            .map(|f| {
                let repr = match f.abstraction {
                    FeatureAbstraction::Continuous(c) => FeatureRepr::Continuous {
                        threshold: c.threshold,
                        partition: c.partition,
                        achieved_ba: c.achieved_ba,
                    },
                    FeatureAbstraction::Categorical { levels } => {
                        FeatureRepr::Categorical { levels }
                    }
                };
                (f.name, repr)
            })
            .collect();
        MapRepr {
            source_columns: map.source_columns,
            features,
            dropped: map.dropped,
        }
    }
}

impl TryFrom<MapRepr> for AbstractionMap {
    type Error = CactusError;

    fn try_from(repr: MapRepr) -> Result<Self> {
        let features = repr
            .features
            .into_iter()
            .map(|(name, f)| {
                let column = repr
                    .source_columns
                    .iter()
                    .position(|c| *c == name)
                    .ok_or_else(|| CactusError::UnknownFeature(name.clone()))?;
                let abstraction = match f {
                    FeatureRepr::Continuous {
                        threshold,
                        partition,
                        achieved_ba,
                    } => FeatureAbstraction::Continuous(Cutoff {
                        feature: name.clone(),
                        threshold,
                        partition,
                        achieved_ba,
                    }),
                    FeatureRepr::Categorical { levels } => {
                        FeatureAbstraction::Categorical { levels }
                    }
                };
                Ok((name, column, abstraction))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AbstractionMap::assemble(
            repr.source_columns,
            features,
            repr.dropped,
        ))
    }
}

impl AbstractionMap {
    fn assemble(
        source_columns: Vec<String>,
        parts: Vec<(String, usize, FeatureAbstraction)>,
        dropped: Vec<DroppedFeature>,
    ) -> Self {
        let mut features = Vec::with_capacity(parts.len());
        let mut flips = Vec::new();
        for (feature_index, (name, column, abstraction)) in parts.into_iter().enumerate() {
            let levels: Vec<Level> = match &abstraction {
                FeatureAbstraction::Continuous(_) => vec![Level::Down, Level::Up],
                FeatureAbstraction::Categorical { levels } => {
                    levels.iter().cloned().map(Level::Category).collect()
                }
            };
            let first_flip = flips.len();
            let n_flips = levels.len();
            flips.extend(levels.into_iter().map(|level| Flip {
                feature: name.clone(),
                feature_index,
                level,
            }));
            features.push(AbstractedFeature {
                name,
                column,
                abstraction,
                first_flip,
                n_flips,
            });
        }
        AbstractionMap {
            source_columns,
            features,
            flips,
            dropped,
        }
    }

    pub fn source_columns(&self) -> &[String] {
        &self.source_columns
    }

    pub fn features(&self) -> &[AbstractedFeature] {
        &self.features
    }

    pub fn flips(&self) -> &[Flip] {
        &self.flips
    }

    pub fn n_flips(&self) -> usize {
        self.flips.len()
    }

    pub fn dropped(&self) -> &[DroppedFeature] {
        &self.dropped
    }

    pub fn flip(&self, index: usize) -> Option<&Flip> {
        self.flips.get(index)
    }

    pub fn flip_index(&self, name: &str) -> Option<usize> {
        self.flips.iter().position(|f| f.name() == name)
    }

    pub fn feature(&self, name: &str) -> Option<&AbstractedFeature> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Feature index (into `features()`) owning each flip.
    pub fn flip_features(&self) -> Vec<usize> {
        self.flips.iter().map(|f| f.feature_index).collect()
    }

    fn flip_for(&self, feature: &AbstractedFeature, cell: &Cell) -> FlipLookup {
        match (&feature.abstraction, cell) {
            (_, Cell::Missing) => FlipLookup::None,
            (FeatureAbstraction::Continuous(c), Cell::Number(v)) => {
                let offset = if *v <= c.threshold { 0 } else { 1 };
                FlipLookup::Flip(feature.first_flip + offset)
            }
            (FeatureAbstraction::Categorical { levels }, Cell::Level(s)) => {
                match levels.iter().position(|l| l == s) {
                    Some(i) => FlipLookup::Flip(feature.first_flip + i),
                    None => FlipLookup::Unseen(s.clone()),
                }
            }
            _ => FlipLookup::KindMismatch,
        }
    }
}

enum FlipLookup {
    None,
    Flip(usize),
    Unseen(String),
    KindMismatch,
}

/// Flip sets per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipTable {
    rows: Vec<Vec<usize>>,
    n_flips: usize,
}

impl FlipTable {
    pub fn new(rows: Vec<Vec<usize>>, n_flips: usize) -> Result<Self> {
        if let Some(&bad) = rows.iter().flatten().find(|&&f| f >= n_flips) {
            return Err(CactusError::UnknownFlip(bad));
        }
        Ok(FlipTable { rows, n_flips })
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_flips(&self) -> usize {
        self.n_flips
    }

    pub fn select_rows(&self, rows: &[usize]) -> FlipTable {
        FlipTable {
            rows: rows.iter().map(|&r| self.rows[r].clone()).collect(),
            n_flips: self.n_flips,
        }
    }
}

/// A categorical level seen at encode time but not during abstraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnseenLevel {
    pub row: Option<usize>,
    pub feature: String,
    pub level: String,
}

/// Encoded sample plus encode-time warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub flips: Vec<usize>,
    pub warnings: Vec<UnseenLevel>,
}

/// All non-trivial bipartitions of `k` classes as group-1 bitmasks. Class 0
/// always sits in group 0, so complementary splits appear once.
pub fn enumerate_bipartitions(k: usize) -> Result<Vec<u32>> {
    if !(2..=MAX_CLASSES).contains(&k) {
        return Err(CactusError::ClassCount(k));
    }
    Ok((1u32..(1 << (k - 1))).map(|m| m << 1).collect())
}

/// Midpoint strictly below `hi`, so `lo <= t < hi` always holds.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

fn symmetrized(tp: usize, n1: usize, tn: usize, n0: usize) -> f64 {
    let ba = 0.5 * (tp as f64 / n1 as f64 + tn as f64 / n0 as f64);
    ba.max(1.0 - ba)
}

/// Exhaustive cut-off search over `partitions` × midpoints of consecutive
/// distinct values. `values` and `labels` hold observed rows only.
///
/// The rule "value <= threshold predicts group 0" is scored by two-group
/// balanced accuracy, symmetrized as `max(ba, 1 - ba)`. Ties keep the
/// smallest partition mask, then the smallest threshold.
pub fn best_cutoff(
    feature: &str,
    values: &[f64],
    labels: &[usize],
    n_classes: usize,
    partitions: &[u32],
) -> Result<Cutoff> {
    assert_eq!(values.len(), labels.len(), "values and labels must align");
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    // distinct sorted values and per-class cumulative counts at each one
    let mut distinct: Vec<f64> = Vec::new();
    let mut cum: Vec<Vec<usize>> = Vec::new();
    let mut running = vec![0usize; n_classes];
    for (pos, &i) in order.iter().enumerate() {
        running[labels[i]] += 1;
        let last_of_run = order
            .get(pos + 1)
            .is_none_or(|&j| values[j] != values[i]);
        if last_of_run {
            distinct.push(values[i]);
            cum.push(running.clone());
        }
    }
    if distinct.len() < 2 {
        return Err(CactusError::ConstantFeature(feature.to_string()));
    }
    let totals = &running;
    let n = values.len();

    let mut best: Option<(f64, u32, usize)> = None;
    for &mask in partitions {
        let in_group1 = |c: usize| mask >> c & 1 == 1;
        let n1: usize = (0..n_classes).filter(|&c| in_group1(c)).map(|c| totals[c]).sum();
        let n0 = n - n1;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        for (j, counts) in cum[..distinct.len() - 1].iter().enumerate() {
            let mut le0 = 0;
            let mut le1 = 0;
            for (c, &cnt) in counts.iter().enumerate() {
                if in_group1(c) {
                    le1 += cnt;
                } else {
                    le0 += cnt;
                }
            }
            let score = symmetrized(n1 - le1, n1, le0, n0);
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, mask, j));
            }
        }
    }
    let (achieved_ba, partition, j) =
        best.ok_or_else(|| CactusError::Unseparable(feature.to_string()))?;
    Ok(Cutoff {
        feature: feature.to_string(),
        threshold: midpoint(distinct[j], distinct[j + 1]),
        partition,
        achieved_ba,
    })
}

fn level_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

fn abstract_feature(
    table: &Table,
    column: usize,
    labels: &[usize],
    n_classes: usize,
    partitions: &[u32],
) -> std::result::Result<FeatureAbstraction, DroppedFeature> {
    let schema = &table.schema()[column];
    let cells = table.column(column);
    let drop = |reason: String| DroppedFeature {
        feature: schema.name.clone(),
        reason,
    };
    match schema.kind {
        FeatureKind::Continuous => {
            let (values, labels): (Vec<f64>, Vec<usize>) = cells
                .iter()
                .zip(labels)
                .filter_map(|(c, &l)| c.as_number().map(|v| (v, l)))
                .unzip();
            if values.is_empty() {
                return Err(drop("no observed values".into()));
            }
            best_cutoff(&schema.name, &values, &labels, n_classes, partitions)
                .map(FeatureAbstraction::Continuous)
                .map_err(|e| drop(e.to_string()))
        }
        FeatureKind::Categorical => {
            let mut levels: Vec<String> = cells
                .iter()
                .filter_map(|c| c.as_level().map(str::to_string))
                .collect();
            if levels.is_empty() {
                return Err(drop("no observed values".into()));
            }
            levels.sort_by(|a, b| level_order(a, b));
            levels.dedup();
            Ok(FeatureAbstraction::Categorical { levels })
        }
    }
}

/// Learn the abstraction of `d` and encode its rows.
///
/// Features without observations, constant continuous features, and
/// continuous features observed in a single class only are dropped and
/// listed in [`AbstractionMap::dropped`].
pub fn abstract_dataset(d: &Dataset) -> Result<(AbstractionMap, FlipTable)> {
    let table = d.table();
    if d.n_rows() == 0 || table.n_features() == 0 {
        return Err(CactusError::Empty("dataset has no rows or no features"));
    }
    let partitions = enumerate_bipartitions(d.n_classes())?;
    let outcomes: Vec<_> = (0..table.n_features())
        .into_par_iter()
        .map(|col| abstract_feature(table, col, d.labels(), d.n_classes(), &partitions))
        .collect();

    let mut parts = Vec::new();
    let mut dropped = Vec::new();
    for (col, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(a) => parts.push((table.schema()[col].name.clone(), col, a)),
            Err(dr) => {
                log::warn!("dropping feature `{}`: {}", dr.feature, dr.reason);
                dropped.push(dr);
            }
        }
    }
    if parts.is_empty() {
        return Err(CactusError::Empty("no feature survived abstraction"));
    }
    let source_columns = table.schema().iter().map(|s| s.name.clone()).collect();
    let map = AbstractionMap::assemble(source_columns, parts, dropped);

    let rows = (0..d.n_rows())
        .map(|r| {
            map.features
                .iter()
                .filter_map(|f| match map.flip_for(f, table.cell(r, f.column)) {
                    FlipLookup::Flip(i) => Some(i),
                    _ => None,
                })
                .collect()
        })
        .collect();
    let ft = FlipTable::new(rows, map.n_flips())?;
    Ok((map, ft))
}

/// Encode one raw row laid out like the schema the map was learned on.
pub fn encode(sample: &[Cell], map: &AbstractionMap) -> Result<Encoded> {
    if sample.len() != map.source_columns.len() {
        return Err(CactusError::FeatureCountMismatch {
            expected: map.source_columns.len(),
            found: sample.len(),
        });
    }
    let mut flips = Vec::new();
    let mut warnings = Vec::new();
    for f in &map.features {
        match map.flip_for(f, &sample[f.column]) {
            FlipLookup::None => {}
            FlipLookup::Flip(i) => flips.push(i),
            FlipLookup::Unseen(level) => {
                log::warn!("feature `{}`: unseen level `{level}` skipped", f.name);
                warnings.push(UnseenLevel {
                    row: None,
                    feature: f.name.clone(),
                    level,
                });
            }
            FlipLookup::KindMismatch => {
                return Err(CactusError::SchemaMismatch(format!(
                    "cell {:?} does not fit feature `{}`",
                    sample[f.column], f.name
                )))
            }
        }
    }
    Ok(Encoded { flips, warnings })
}

/// Encode every row of `table`, matching columns to the map by name.
pub fn encode_table(table: &Table, map: &AbstractionMap) -> Result<(FlipTable, Vec<UnseenLevel>)> {
    let mut columns = Vec::with_capacity(map.features.len());
    for f in &map.features {
        let col = table
            .feature_index(&f.name)
            .ok_or_else(|| CactusError::SchemaMismatch(format!("input lacks feature `{}`", f.name)))?;
        if table.schema()[col].kind != f.kind() {
            return Err(CactusError::SchemaMismatch(format!(
                "feature `{}` is {:?} in the model but {:?} in the input",
                f.name,
                f.kind(),
                table.schema()[col].kind
            )));
        }
        columns.push(col);
    }
    let mut rows = Vec::with_capacity(table.n_rows());
    let mut warnings = Vec::new();
    for r in 0..table.n_rows() {
        let mut flips = Vec::new();
        for (f, &col) in map.features.iter().zip(&columns) {
            match map.flip_for(f, table.cell(r, col)) {
                FlipLookup::Flip(i) => flips.push(i),
                FlipLookup::Unseen(level) => warnings.push(UnseenLevel {
                    row: Some(r),
                    feature: f.name.clone(),
                    level,
                }),
                FlipLookup::None | FlipLookup::KindMismatch => {}
            }
        }
        rows.push(flips);
    }
    if !warnings.is_empty() {
        log::warn!("{} cells carried categorical levels unseen in training", warnings.len());
    }
    Ok((FlipTable::new(rows, map.n_flips())?, warnings))
}
