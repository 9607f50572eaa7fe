//! Significance metrics, additive class costs, argmax classification and
//! confidence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{AbstractionMap, FlipTable};
use crate::error::{CactusError, Result};
use crate::knowledge_graph::{CentralityTable, ClassGraph};
use crate::tabular::write_text;

/// Flip significance metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    /// Class-conditional probability only.
    #[serde(rename = "CPB")]
    Cpb,
    /// Probability times total degree.
    #[serde(rename = "CDG")]
    Cdg,
    /// Probability times PageRank.
    #[serde(rename = "CPR")]
    Cpr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Cpb, Metric::Cdg, Metric::Cpr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cpb => "CPB",
            Metric::Cdg => "CDG",
            Metric::Cpr => "CPR",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = CactusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CPB" => Ok(Metric::Cpb),
            "CDG" => Ok(Metric::Cdg),
            "CPR" => Ok(Metric::Cpr),
            other => Err(CactusError::InvalidSpec(format!("unknown metric `{other}`"))),
        }
    }
}

/// How raw confidences map onto [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Min-max over the training cohort, clamped.
    #[default]
    MinMax,
    /// Divide by the training maximum, clamped.
    MaxScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBounds {
    pub min_raw: f64,
    pub max_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricProfile {
    /// `sigma[class][flip]`
    pub sigma: Vec<Vec<f64>>,
    pub bounds: ConfidenceBounds,
}

/// The trained model: significance of every flip in every class for each
/// metric, plus the confidence bounds seen on the training cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceProfile {
    pub abstraction: AbstractionMap,
    pub class_names: Vec<String>,
    pub normalization: Normalization,
    pub metrics: BTreeMap<Metric, MetricProfile>,
}

impl SignificanceProfile {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_flips(&self) -> usize {
        self.abstraction.n_flips()
    }

    pub fn sigma(&self, metric: Metric) -> &[Vec<f64>] {
        &self.metrics[&metric].sigma
    }

    pub fn bounds(&self, metric: Metric) -> ConfidenceBounds {
        self.metrics[&metric].bounds
    }

    /// `sigma(metric, class, flip)`
    pub fn significance(&self, metric: Metric, class: usize, flip: usize) -> f64 {
        self.metrics[&metric].sigma[class][flip]
    }

    /// Replace the sigma tensor of one metric and recompute its bounds on `ft`.
    pub fn with_sigma(&self, metric: Metric, sigma: Vec<Vec<f64>>, ft: &FlipTable) -> Result<Self> {
        let mut out = self.clone();
        out.metrics.insert(
            metric,
            MetricProfile {
                sigma,
                bounds: ConfidenceBounds { min_raw: 0.0, max_raw: 0.0 },
            },
        );
        let bounds = training_bounds(&out, metric, ft)?;
        out.metrics.get_mut(&metric).expect("inserted").bounds = bounds;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub metric: Metric,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifyWarning {
    /// Several classes share the maximum cost; the smallest index won.
    Tie(Vec<usize>),
    /// Training bounds collapse to a point; confidence set to 0.
    DegenerateBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationResult {
    pub label: usize,
    pub scores: ClassScores,
    pub raw_confidence: f64,
    /// Normalized to [0, 100].
    pub confidence: f64,
    /// Every class cost is zero.
    pub degenerate: bool,
    pub warnings: Vec<ClassifyWarning>,
}

/// Fill the significance tensors and compute per-metric confidence bounds
/// by classifying every training row.
pub fn train(
    ft: &FlipTable,
    map: &AbstractionMap,
    class_names: &[String],
    graphs: &[ClassGraph],
    centralities: &CentralityTable,
    normalization: Normalization,
) -> Result<SignificanceProfile> {
    let k = class_names.len();
    let n = map.n_flips();
    if graphs.len() != k || centralities.pagerank.len() != k || centralities.degree.len() != k {
        return Err(CactusError::InvalidSpec(format!(
            "expected {k} class graphs and centrality rows"
        )));
    }
    if ft.n_flips() != n || graphs.iter().any(|g| g.n_nodes != n) {
        return Err(CactusError::InvalidSpec("inputs disagree on the flip universe".into()));
    }
    for c in 0..k {
        for f in 0..n {
            let (pr, dg) = (centralities.pagerank[c][f], centralities.degree[c][f]);
            if !pr.is_finite() || !dg.is_finite() {
                return Err(CactusError::NonFiniteCentrality {
                    flip: map.flips()[f].name(),
                    class: c,
                });
            }
        }
    }
    let build = |centrality: Option<&Vec<Vec<f64>>>| -> Vec<Vec<f64>> {
        (0..k)
            .map(|c| {
                let p = &graphs[c].flip_class_prob;
                match centrality {
                    None => p.clone(),
                    Some(cent) => p.iter().zip(&cent[c]).map(|(a, b)| a * b).collect(),
                }
            })
            .collect()
    };
    let unset = ConfidenceBounds { min_raw: 0.0, max_raw: 0.0 };
    let mut metrics = BTreeMap::new();
    metrics.insert(Metric::Cpb, MetricProfile { sigma: build(None), bounds: unset });
    metrics.insert(
        Metric::Cdg,
        MetricProfile { sigma: build(Some(&centralities.degree)), bounds: unset },
    );
    metrics.insert(
        Metric::Cpr,
        MetricProfile { sigma: build(Some(&centralities.pagerank)), bounds: unset },
    );
    let mut profile = SignificanceProfile {
        abstraction: map.clone(),
        class_names: class_names.to_vec(),
        normalization,
        metrics,
    };
    for metric in Metric::ALL {
        let bounds = training_bounds(&profile, metric, ft)?;
        profile.metrics.get_mut(&metric).expect("all metrics present").bounds = bounds;
    }
    Ok(profile)
}

fn training_bounds(profile: &SignificanceProfile, metric: Metric, ft: &FlipTable) -> Result<ConfidenceBounds> {
    let raws = ft
        .rows()
        .par_iter()
        .map(|row| score(row, profile, metric).map(|s| raw_confidence(&s.costs).1))
        .collect::<Result<Vec<f64>>>()?;
    let min_raw = raws.iter().copied().fold(f64::INFINITY, f64::min);
    let max_raw = raws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raws.is_empty() {
        return Ok(ConfidenceBounds { min_raw: 0.0, max_raw: 0.0 });
    }
    Ok(ConfidenceBounds { min_raw, max_raw })
}

/// Additive cost of each class: the sum of the sample flips' significances.
pub fn score(sample_flips: &[usize], profile: &SignificanceProfile, metric: Metric) -> Result<ClassScores> {
    let sigma = profile.sigma(metric);
    let n = profile.n_flips();
    if let Some(&bad) = sample_flips.iter().find(|&&f| f >= n) {
        return Err(CactusError::UnknownFlip(bad));
    }
    let costs = sigma
        .iter()
        .map(|row| sample_flips.iter().map(|&f| row[f]).sum())
        .collect();
    Ok(ClassScores { metric, costs })
}

/// `(argmax, mean |C_m - C_i| over the other classes)`. Ties resolve to the
/// smallest index.
pub fn raw_confidence(costs: &[f64]) -> (usize, f64) {
    let mut m = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c > costs[m] {
            m = i;
        }
    }
    if costs.len() < 2 {
        return (m, 0.0);
    }
    let spread: f64 = costs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != m)
        .map(|(_, &c)| (costs[m] - c).abs())
        .sum();
    (m, spread / (costs.len() - 1) as f64)
}

/// Assign the class with the highest cost and attach its confidence.
pub fn classify(sample_flips: &[usize], profile: &SignificanceProfile, metric: Metric) -> Result<ClassificationResult> {
    let scores = score(sample_flips, profile, metric)?;
    let (label, raw) = raw_confidence(&scores.costs);
    let mut warnings = Vec::new();
    let top = scores.costs[label];
    let tied: Vec<usize> = (0..scores.costs.len()).filter(|&i| scores.costs[i] == top).collect();
    if tied.len() > 1 {
        warnings.push(ClassifyWarning::Tie(tied));
    }
    let degenerate = scores.costs.iter().all(|&c| c == 0.0);
    let bounds = profile.bounds(metric);
    let confidence = if degenerate {
        0.0
    } else {
        let (lo, span) = match profile.normalization {
            Normalization::MinMax => (bounds.min_raw, bounds.max_raw - bounds.min_raw),
            Normalization::MaxScale => (0.0, bounds.max_raw),
        };
        if span > 0.0 {
            100.0 * ((raw - lo) / span).clamp(0.0, 1.0)
        } else {
            warnings.push(ClassifyWarning::DegenerateBounds);
            0.0
        }
    };
    Ok(ClassificationResult {
        label,
        scores,
        raw_confidence: if degenerate { 0.0 } else { raw },
        confidence,
        degenerate,
        warnings,
    })
}

/// Classify every row of `ft`, preserving order.
pub fn classify_dataset(ft: &FlipTable, profile: &SignificanceProfile, metric: Metric) -> Result<Vec<ClassificationResult>> {
    ft.rows()
        .par_iter()
        .map(|row| classify(row, profile, metric))
        .collect()
}

/// Predictions CSV: `row_id,label,confidence,degenerate,cost_<class>...`.
pub fn write_predictions(
    results: &[ClassificationResult],
    class_names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut text = String::from("row_id,label,confidence,degenerate");
    for name in class_names {
        text.push_str(&format!(",cost_{name}"));
    }
    text.push('\n');
    for (i, r) in results.iter().enumerate() {
        text.push_str(&format!(
            "{i},{},{},{}",
            class_names[r.label], r.confidence, r.degenerate
        ));
        for c in &r.scores.costs {
            text.push_str(&format!(",{c}"));
        }
        text.push('\n');
    }
    write_text(path.as_ref(), &text)
}
