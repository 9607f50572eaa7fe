//! Evaluation protocol: balanced accuracy, controlled value removal,
//! synthetic cohorts, stratified cross-validation, chance baselines and the
//! fragmentation study.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::classifier::Metric;
use crate::error::{CactusError, Result};
use crate::model::{fit, TrainConfig};
use crate::rng::{derive, stream};
use crate::svg::{Svg, PALETTE};
use crate::tabular::{write_text, Cell, Dataset, FeatureKind, FeatureSchema, Table};

/// Mean recall over classes with at least one reference sample.
pub fn recall_mean(hits: &[usize], totals: &[usize]) -> Option<f64> {
    let mut sum = 0.0;
    let mut present = 0usize;
    for (&h, &t) in hits.iter().zip(totals) {
        if t > 0 {
            sum += h as f64 / t as f64;
            present += 1;
        }
    }
    (present > 0).then(|| sum / present as f64)
}

/// Mean per-class recall. Every class in `0..k` must occur in `actual`.
pub fn balanced_accuracy(predicted: &[usize], actual: &[usize], k: usize) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(CactusError::LengthMismatch(predicted.len(), actual.len()));
    }
    if actual.is_empty() {
        return Err(CactusError::Empty("labels"));
    }
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (&p, &a) in predicted.iter().zip(actual) {
        if a >= k {
            return Err(CactusError::InvalidDataset(format!("label {a} outside 0..{k}")));
        }
        totals[a] += 1;
        if p == a {
            hits[a] += 1;
        }
    }
    if let Some(c) = totals.iter().position(|&t| t == 0) {
        return Err(CactusError::ClassAbsent(c));
    }
    Ok(recall_mean(&hits, &totals).expect("all classes present"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragmentationSpec {
    pub removal_fraction: f64,
    pub seed: u64,
}

impl FragmentationSpec {
    pub fn none() -> Self {
        FragmentationSpec { removal_fraction: 0.0, seed: 0 }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.removal_fraction) {
            return Err(CactusError::InvalidSpec(format!(
                "removal fraction {} outside [0, 1)",
                self.removal_fraction
            )));
        }
        Ok(())
    }
}

/// Blank each observed cell independently with probability
/// `removal_fraction`. One uniform draw is consumed per cell, missing or
/// not, so with a fixed seed higher fractions remove supersets of lower ones.
pub fn fragment(d: &Dataset, spec: &FragmentationSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.removal_fraction == 0.0 {
        return Ok(d.clone());
    }
    let mut rng = derive(spec.seed, stream::FRAGMENT, 0);
    let n = d.n_rows();
    let f = d.table().n_features();
    let draws: Vec<f64> = (0..n * f).map(|_| rng.random::<f64>()).collect();
    let table = d.table().map_cells(|row, col, cell| {
        if !cell.is_missing() && draws[col * n + row] < spec.removal_fraction {
            Cell::Missing
        } else {
            cell.clone()
        }
    });
    d.with_table(table)
}

/// Stage proportions of the last-visit cohort.
pub const DEFAULT_PROPORTIONS: [f64; 5] = [0.5546, 0.2685, 0.1076, 0.0315, 0.0378];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub class_proportions: Vec<f64>,
    pub n_continuous: usize,
    pub n_categorical: usize,
    pub n_informative: usize,
    /// Class-mean shift of informative continuous features, in standard
    /// deviations. Informative categorical features put `Phi(separation / 2)`
    /// of the target class's mass on one signature level.
    pub separation: f64,
    pub n_levels: usize,
    pub base_missing_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_rows: 3000,
            class_proportions: DEFAULT_PROPORTIONS.to_vec(),
            n_continuous: 30,
            n_categorical: 10,
            n_informative: 30,
            separation: 2.0,
            n_levels: 3,
            base_missing_fraction: 0.7,
            seed: 0,
        }
    }
}

/// One generated feature: its name and, when informative, the class it marks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticFeature {
    pub name: String,
    pub kind: FeatureKind,
    pub target_class: Option<usize>,
}

impl SyntheticSpec {
    pub fn n_classes(&self) -> usize {
        self.class_proportions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CactusError::InvalidSpec(m));
        let k = self.n_classes();
        if !(2..=20).contains(&k) {
            return bad(format!("{k} classes; need 2..=20"));
        }
        if self.class_proportions.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return bad("class proportions must be positive".into());
        }
        let total: f64 = self.class_proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("class proportions sum to {total}"));
        }
        if self.n_rows < k {
            return bad(format!("{} rows cannot hold {k} classes", self.n_rows));
        }
        if self.n_continuous + self.n_categorical == 0 {
            return bad("no features requested".into());
        }
        if self.n_informative > self.n_continuous + self.n_categorical {
            return bad("more informative features than features".into());
        }
        if !(2..=10).contains(&self.n_levels) {
            return bad(format!("{} categorical levels; need 2..=10", self.n_levels));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return bad("separation must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.base_missing_fraction) {
            return bad("base missing fraction outside [0, 1)".into());
        }
        Ok(())
    }

    /// Feature layout: continuous then categorical, informative first within
    /// each kind; informative feature `t` marks class `t mod K`.
    pub fn features(&self) -> Vec<SyntheticFeature> {
        let total = self.n_continuous + self.n_categorical;
        let inf_cat = (self.n_informative * self.n_categorical / total.max(1)).min(self.n_categorical);
        let inf_cont = (self.n_informative - inf_cat).min(self.n_continuous);
        let inf_cat = self.n_informative - inf_cont;
        let k = self.n_classes();
        let mut out = Vec::with_capacity(total);
        let mut target = 0usize;
        for i in 0..self.n_continuous {
            let informative = i < inf_cont;
            out.push(SyntheticFeature {
                name: if informative { format!("sig_cont_{i:02}") } else { format!("noise_cont_{i:02}") },
                kind: FeatureKind::Continuous,
                target_class: informative.then(|| {
                    target += 1;
                    (target - 1) % k
                }),
            });
        }
        for i in 0..self.n_categorical {
            let informative = i < inf_cat;
            out.push(SyntheticFeature {
                name: if informative { format!("sig_cat_{i:02}") } else { format!("noise_cat_{i:02}") },
                kind: FeatureKind::Categorical,
                target_class: informative.then(|| {
                    target += 1;
                    (target - 1) % k
                }),
            });
        }
        out
    }

    pub fn informative_names(&self) -> Vec<String> {
        self.features()
            .into_iter()
            .filter(|f| f.target_class.is_some())
            .map(|f| f.name)
            .collect()
    }
}

/// Class counts by largest remainder, at least one row per class.
fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let k = weights.len();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[c] += 1;
        left -= 1;
    }
    counts
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Generate a cohort following `spec`.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let k = spec.n_classes();
    let n = spec.n_rows;
    let mut rng = derive(spec.seed, stream::SYNTHESIZE, 0);

    let mut counts = allocate(n, &spec.class_proportions);
    // every class needs a row
    for c in 0..k {
        if counts[c] == 0 {
            let donor = (0..k).max_by_key(|&i| counts[i]).expect("k >= 2");
            counts[donor] -= 1;
            counts[c] = 1;
        }
    }
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c, m)).collect();
    labels.shuffle(&mut rng);

    let p_sig = normal_cdf(spec.separation / 2.0);
    let signature = spec.n_levels - 1;
    let features = spec.features();
    let mut schema = Vec::with_capacity(features.len());
    let mut columns = Vec::with_capacity(features.len());
    for feat in &features {
        let mut col = Vec::with_capacity(n);
        for &label in &labels {
            let hit = feat.target_class == Some(label);
            let cell = match feat.kind {
                FeatureKind::Continuous => {
                    let z: f64 = rng.sample(StandardNormal);
                    Cell::Number(if hit { z + spec.separation } else { z })
                }
                FeatureKind::Categorical => {
                    let level = if feat.target_class.is_none() {
                        rng.random_range(0..spec.n_levels)
                    } else {
                        let p = if hit { p_sig } else { 1.0 - p_sig };
                        if rng.random::<f64>() < p {
                            signature
                        } else {
                            rng.random_range(0..signature)
                        }
                    };
                    Cell::Level(level.to_string())
                }
            };
            let missing = rng.random::<f64>() < spec.base_missing_fraction;
            col.push(if missing { Cell::Missing } else { cell });
        }
        schema.push(FeatureSchema { name: feat.name.clone(), kind: feat.kind, declared: true });
        columns.push(col);
    }
    let class_names = (0..k).map(|c| c.to_string()).collect();
    Dataset::new(Table::new(schema, columns)?, labels, class_names, "stage")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Independent stratified train/test splits, one per fold.
    #[default]
    RepeatedHoldout,
    /// Disjoint stratified folds; `holdout` is ignored.
    KFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub holdout: f64,
    pub mode: SplitMode,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            holdout: 0.2,
            mode: SplitMode::RepeatedHoldout,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl CvConfig {
    fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(CactusError::InvalidSpec(format!("{} folds; need at least 2", self.folds)));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(CactusError::InvalidSpec(format!("holdout {} outside (0, 1)", self.holdout)));
        }
        Ok(())
    }
}

/// A train/test split of row indices, both ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_members(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// Stratified splits for every fold.
pub fn stratified_splits(labels: &[usize], k: usize, cfg: &CvConfig) -> Result<Vec<Split>> {
    cfg.validate()?;
    let members = class_members(labels, k);
    let splits: Vec<Split> = match cfg.mode {
        SplitMode::RepeatedHoldout => {
            let sizes: Vec<f64> = members.iter().map(|m| m.len() as f64).collect();
            let n_test = (labels.len() as f64 * cfg.holdout).round() as usize;
            let mut per_class = allocate(n_test, &sizes);
            for (c, m) in members.iter().enumerate() {
                if m.len() >= 2 {
                    per_class[c] = per_class[c].clamp(1, m.len() - 1);
                } else {
                    per_class[c] = 0;
                }
            }
            (0..cfg.folds)
                .map(|fold| {
                    let mut rng = derive(cfg.seed, stream::SPLIT, fold as u64);
                    let mut train = Vec::new();
                    let mut test = Vec::new();
                    for (c, m) in members.iter().enumerate() {
                        let mut idx = m.clone();
                        idx.shuffle(&mut rng);
                        test.extend_from_slice(&idx[..per_class[c]]);
                        train.extend_from_slice(&idx[per_class[c]..]);
                    }
                    train.sort_unstable();
                    test.sort_unstable();
                    Split { train, test }
                })
                .collect()
        }
        SplitMode::KFold => {
            let mut rng = derive(cfg.seed, stream::SPLIT, 0);
            let mut fold_of = vec![0usize; labels.len()];
            let mut next = 0usize;
            for m in &members {
                let mut idx = m.clone();
                idx.shuffle(&mut rng);
                for i in idx {
                    fold_of[i] = next % cfg.folds;
                    next += 1;
                }
            }
            (0..cfg.folds)
                .map(|fold| {
                    let (test, train): (Vec<usize>, Vec<usize>) =
                        (0..labels.len()).partition(|&i| fold_of[i] == fold);
                    Split { train, test }
                })
                .collect()
        }
    };
    for (fold, s) in splits.iter().enumerate() {
        let mut seen = vec![false; k];
        for &i in &s.train {
            seen[labels[i]] = true;
        }
        if let Some(class) = seen.iter().position(|p| !p) {
            return Err(CactusError::Stratification { fold, class });
        }
    }
    Ok(splits)
}

/// Train on `split.train`, score every metric on `split.test`.
pub fn evaluate_split(d: &Dataset, split: &Split, metrics: &[Metric], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let train = d.select_rows(&split.train)?;
    let model = fit(&train, cfg)?;
    let test = d.table().select_rows(&split.test);
    let actual: Vec<usize> = split.test.iter().map(|&i| d.labels()[i]).collect();
    let (ft, _) = model.encode(&test)?;
    metrics
        .iter()
        .map(|&m| {
            let pred: Vec<usize> = crate::classifier::classify_dataset(&ft, &model.profile, m)?
                .iter()
                .map(|r| r.label)
                .collect();
            balanced_accuracy(&pred, &actual, d.n_classes())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// `CPB`, `CDG`, `CPR`, or `MAJORITY`.
    pub method: String,
    pub level: f64,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across folds.
    pub sd: f64,
}

impl EvalResult {
    fn new(method: impl Into<String>, level: f64, fold_scores: Vec<f64>) -> Self {
        let n = fold_scores.len() as f64;
        let mean = fold_scores.iter().sum::<f64>() / n;
        let var = fold_scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        EvalResult {
            method: method.into(),
            level,
            fold_scores,
            mean,
            sd: var.sqrt(),
        }
    }

    /// `0.34±0.01`
    pub fn summary(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.sd)
    }
}

/// Cross-validate several metrics over shared folds and trained models.
pub fn cross_validate_metrics(
    d: &Dataset,
    metrics: &[Metric],
    cfg: &CvConfig,
    frag: &FragmentationSpec,
) -> Result<Vec<EvalResult>> {
    let d = fragment(d, frag)?;
    let splits = stratified_splits(d.labels(), d.n_classes(), cfg)?;
    let per_fold = splits
        .par_iter()
        .map(|s| evaluate_split(&d, s, metrics, &cfg.train))
        .collect::<Result<Vec<_>>>()?;
    Ok(metrics
        .iter()
        .enumerate()
        .map(|(mi, m)| EvalResult::new(m.name(), frag.removal_fraction, per_fold.iter().map(|f| f[mi]).collect()))
        .collect())
}

pub fn cross_validate(d: &Dataset, metric: Metric, cfg: &CvConfig, frag: &FragmentationSpec) -> Result<EvalResult> {
    let mut out = cross_validate_metrics(d, &[metric], cfg, frag)?;
    Ok(out.remove(0))
}

/// Predict the training split's majority class on every test row.
pub fn baseline_majority(d: &Dataset, cfg: &CvConfig) -> Result<EvalResult> {
    let k = d.n_classes();
    let splits = stratified_splits(d.labels(), k, cfg)?;
    let scores = splits
        .iter()
        .map(|s| {
            let mut counts = vec![0usize; k];
            for &i in &s.train {
                counts[d.labels()[i]] += 1;
            }
            let majority = (0..k).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });
            let actual: Vec<usize> = s.test.iter().map(|&i| d.labels()[i]).collect();
            balanced_accuracy(&vec![majority; actual.len()], &actual, k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::new("MAJORITY", 0.0, scores))
}

/// Results of the level × metric grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub levels: Vec<f64>,
    pub metrics: Vec<Metric>,
    /// Level-major, metric-minor.
    pub cells: Vec<EvalResult>,
    pub baselines: Vec<EvalResult>,
}

impl StudyTable {
    pub fn cell(&self, level: usize, metric: Metric) -> Option<&EvalResult> {
        let mi = self.metrics.iter().position(|&m| m == metric)?;
        self.cells.get(level * self.metrics.len() + mi)
    }

    /// Long block `level,metric,fold,balanced_accuracy`, then a summary in
    /// the layout of one row per level and one column per method.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,metric,fold,balanced_accuracy\n");
        for (li, &level) in self.levels.iter().enumerate() {
            let row = self.cells[li * self.metrics.len()..(li + 1) * self.metrics.len()]
                .iter()
                .chain(std::iter::once(&self.baselines[li]));
            for r in row {
                for (fold, ba) in r.fold_scores.iter().enumerate() {
                    s.push_str(&format!("{level},{},{fold},{ba}\n", r.method));
                }
            }
        }
        s.push_str("\nmissing_values_added");
        for m in &self.metrics {
            s.push_str(&format!(",{m}"));
        }
        s.push_str(",MAJORITY\n");
        for (li, &level) in self.levels.iter().enumerate() {
            s.push_str(&format!("{}%", (level * 100.0).round()));
            for mi in 0..self.metrics.len() {
                s.push_str(&format!(",{}", self.cells[li * self.metrics.len() + mi].summary()));
            }
            s.push_str(&format!(",{}\n", self.baselines[li].summary()));
        }
        s
    }

    /// Balanced accuracy against removal fraction, one polyline per method.
    pub fn to_svg(&self) -> String {
        let (w, h) = (520.0, 360.0);
        let (ax, ay, aw, ah) = (50.0, 30.0, w - 80.0, h - 80.0);
        let max_level = self.levels.iter().copied().fold(0.0, f64::max).max(1e-9);
        let x_of = |l: f64| ax + l / max_level * aw;
        let y_of = |v: f64| ay + ah - v * ah;
        let mut svg = Svg::new(w, h);
        svg.text(ax, 20.0, 13.0, "balanced accuracy vs. removed values");
        svg.frame(ax, ay, aw, ah);
        let mut series: Vec<(String, Vec<f64>)> = self
            .metrics
            .iter()
            .enumerate()
            .map(|(mi, m)| {
                let means = (0..self.levels.len())
                    .map(|li| self.cells[li * self.metrics.len() + mi].mean)
                    .collect();
                (m.name().to_string(), means)
            })
            .collect();
        series.push(("MAJORITY".into(), self.baselines.iter().map(|b| b.mean).collect()));
        for (i, (name, means)) in series.iter().enumerate() {
            let pts: Vec<(f64, f64)> = self.levels.iter().zip(means).map(|(&l, &m)| (x_of(l), y_of(m))).collect();
            let color = PALETTE[i % PALETTE.len()];
            svg.polyline(&pts, color, "series");
            svg.text(ax + aw - 70.0, ay + 15.0 + 14.0 * i as f64, 11.0, name);
        }
        for &l in &self.levels {
            svg.text(x_of(l) - 8.0, ay + ah + 15.0, 10.0, &format!("{}%", (l * 100.0).round()));
        }
        svg.finish()
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CactusError::io(dir, e))?;
        write_text(&dir.join("study.csv"), &self.to_csv())?;
        write_text(&dir.join("study.svg"), &self.to_svg())
    }
}

/// Cross-validate every metric at every removal level, plus the majority
/// baseline. Every level shares the fragmentation seed and the fold splits.
pub fn run_fragmentation_study(d: &Dataset, levels: &[f64], metrics: &[Metric], cfg: &CvConfig) -> Result<StudyTable> {
    let rows = levels
        .iter()
        .map(|&level| {
            let frag = FragmentationSpec { removal_fraction: level, seed: cfg.seed };
            let fragmented = fragment(d, &frag)?;
            let cells = cross_validate_metrics(&fragmented, metrics, cfg, &FragmentationSpec::none())?
                .into_iter()
                .map(|mut r| {
                    r.level = level;
                    r
                })
                .collect::<Vec<_>>();
            let mut base = baseline_majority(&fragmented, cfg)?;
            base.level = level;
            Ok((cells, base))
        })
        .collect::<Result<Vec<_>>>()?;
    let (cells, baselines): (Vec<Vec<EvalResult>>, Vec<EvalResult>) = rows.into_iter().unzip();
    Ok(StudyTable {
        levels: levels.to_vec(),
        metrics: metrics.to_vec(),
        cells: cells.into_iter().flatten().collect(),
        baselines,
    })
}
