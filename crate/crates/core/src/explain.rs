//! Interpretability artifacts: per-flip and per-feature ranks, and the
//! confidence / balanced-accuracy / population analysis.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassificationResult, Metric, SignificanceProfile};
use crate::error::{CactusError, Result};
use crate::harness::{balanced_accuracy, recall_mean};
use crate::svg::{Svg, PALETTE};
use crate::tabular::write_text;

/// Coverage levels (percent of the population) reported by the analysis.
pub const COVERAGE_LEVELS: [u32; 5] = [90, 80, 70, 60, 50];

/// Mean absolute significance gap of `flip` over all unordered class pairs.
pub fn flip_rank(profile: &SignificanceProfile, metric: Metric, flip: usize) -> f64 {
    let column: Vec<f64> = profile.sigma(metric).iter().map(|row| row[flip]).collect();
    pairwise_spread(&column)
}

pub(crate) fn pairwise_spread(values: &[f64]) -> f64 {
    let k = values.len();
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..k - 1 {
        for j in i + 1..k {
            total += (values[i] - values[j]).abs();
        }
    }
    total / (k * (k - 1) / 2) as f64
}

/// Average flip rank over the flips of `feature` (index into the map's features).
pub fn feature_rank(profile: &SignificanceProfile, metric: Metric, feature: usize) -> f64 {
    let range = profile.abstraction.features()[feature].flip_range();
    let n = range.len();
    if n == 0 {
        return 0.0;
    }
    range.map(|f| flip_rank(profile, metric, f)).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRankEntry {
    pub flip: String,
    pub flip_rank: f64,
    /// Raw significance per class.
    pub sigma: Vec<f64>,
    /// Significance divided by the feature's total in the same class.
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRankEntry {
    pub feature: String,
    pub avg_rank: f64,
    pub flips: Vec<FlipRankEntry>,
}

/// Features in descending average-rank order (ties by name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub metric: Metric,
    pub class_names: Vec<String>,
    pub features: Vec<FeatureRankEntry>,
}

impl RankReport {
    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.feature.as_str()).collect()
    }

    pub fn position(&self, feature: &str) -> Option<usize> {
        self.features.iter().position(|f| f.feature == feature)
    }
}

/// Ranks for every feature, truncated to the `top_k` most influential.
pub fn rank_report(profile: &SignificanceProfile, metric: Metric, top_k: usize) -> RankReport {
    let k = profile.n_classes();
    let sigma = profile.sigma(metric);
    let mut features: Vec<FeatureRankEntry> = profile
        .abstraction
        .features()
        .iter()
        .enumerate()
        .map(|(fi, feat)| {
            let range = feat.flip_range();
            let totals: Vec<f64> = (0..k)
                .map(|c| range.clone().map(|f| sigma[c][f]).sum())
                .collect();
            let flips = range
                .clone()
                .map(|f| {
                    let sig: Vec<f64> = (0..k).map(|c| sigma[c][f]).collect();
                    let normalized = sig
                        .iter()
                        .zip(&totals)
                        .map(|(s, t)| if *t > 0.0 { s / t } else { 0.0 })
                        .collect();
                    FlipRankEntry {
                        flip: profile.abstraction.flips()[f].name(),
                        flip_rank: flip_rank(profile, metric, f),
                        sigma: sig,
                        normalized,
                    }
                })
                .collect();
            FeatureRankEntry {
                feature: feat.name.clone(),
                avg_rank: feature_rank(profile, metric, fi),
                flips,
            }
        })
        .collect();
    features.sort_by(|a, b| {
        b.avg_rank
            .total_cmp(&a.avg_rank)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    features.truncate(top_k);
    RankReport {
        metric,
        class_names: profile.class_names.clone(),
        features,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBin {
    pub lo: f64,
    pub hi: f64,
    pub population: usize,
    /// Mean recall over the classes present in the bin; `None` when empty.
    pub balanced_accuracy: Option<f64>,
    /// Classes absent from the bin and left out of its recall mean.
    pub classes_excluded: usize,
    pub cum_population_fraction: f64,
    /// Balanced accuracy of all samples in this and lower bins: each class
    /// recall is the population-weighted mean of its per-bin recalls.
    pub cum_weighted_ba: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageThreshold {
    /// Percent of the population to cover.
    pub coverage: u32,
    /// Largest confidence whose `>=` set still covers `coverage` percent.
    pub threshold: f64,
    pub achieved_fraction: f64,
    /// Balanced accuracy on the covered samples.
    pub balanced_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub metric: Metric,
    pub bins: Vec<ConfidenceBin>,
    pub coverage_thresholds: Vec<CoverageThreshold>,
    pub chance_line: f64,
    pub cohort_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    pub bin_width: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig { bin_width: 10.0 }
    }
}

/// Per-class (hits, totals) over a set of samples.
fn class_counts<'a>(
    samples: impl Iterator<Item = (usize, usize)> + 'a,
    k: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut hits = vec![0; k];
    let mut totals = vec![0; k];
    for (pred, actual) in samples {
        totals[actual] += 1;
        if pred == actual {
            hits[actual] += 1;
        }
    }
    (hits, totals)
}

/// Bin the cohort by confidence and derive the cumulative curves.
pub fn confidence_analysis(
    results: &[ClassificationResult],
    labels: &[usize],
    n_classes: usize,
    cfg: &ConfidenceConfig,
) -> Result<ConfidenceReport> {
    if results.is_empty() {
        return Err(CactusError::Empty("cohort"));
    }
    if results.len() != labels.len() {
        return Err(CactusError::LengthMismatch(results.len(), labels.len()));
    }
    if !(cfg.bin_width > 0.0 && cfg.bin_width <= 100.0) {
        return Err(CactusError::InvalidSpec(format!("bin width {}", cfg.bin_width)));
    }
    let metric = results[0].scores.metric;
    let n_bins = (100.0 / cfg.bin_width).ceil() as usize;
    let bin_of = |c: f64| ((c / cfg.bin_width).floor() as usize).min(n_bins - 1);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, r) in results.iter().enumerate() {
        members[bin_of(r.confidence)].push(i);
    }
    let n = results.len();
    let mut bins = Vec::with_capacity(n_bins);
    let mut cum_hits = vec![0usize; n_classes];
    let mut cum_totals = vec![0usize; n_classes];
    let mut cum_pop = 0usize;
    for (b, idx) in members.iter().enumerate() {
        let (hits, totals) = class_counts(idx.iter().map(|&i| (results[i].label, labels[i])), n_classes);
        for c in 0..n_classes {
            cum_hits[c] += hits[c];
            cum_totals[c] += totals[c];
        }
        cum_pop += idx.len();
        let lo = b as f64 * cfg.bin_width;
        bins.push(ConfidenceBin {
            lo,
            hi: (lo + cfg.bin_width).min(100.0),
            population: idx.len(),
            balanced_accuracy: recall_mean(&hits, &totals),
            classes_excluded: totals.iter().filter(|&&t| t == 0).count(),
            cum_population_fraction: if b + 1 == n_bins { 1.0 } else { cum_pop as f64 / n as f64 },
            cum_weighted_ba: recall_mean(&cum_hits, &cum_totals),
        });
    }

    let mut sorted: Vec<f64> = results.iter().map(|r| r.confidence).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let coverage_thresholds = COVERAGE_LEVELS
        .iter()
        .map(|&p| {
            // smallest covered count reaching p percent, then extend over ties
            let need = ((p as usize * n).div_ceil(100)).clamp(1, n);
            let threshold = sorted[need - 1];
            let covered: Vec<usize> = (0..n).filter(|&i| results[i].confidence >= threshold).collect();
            let (hits, totals) =
                class_counts(covered.iter().map(|&i| (results[i].label, labels[i])), n_classes);
            CoverageThreshold {
                coverage: p,
                threshold,
                achieved_fraction: covered.len() as f64 / n as f64,
                balanced_accuracy: recall_mean(&hits, &totals),
            }
        })
        .collect();

    Ok(ConfidenceReport {
        metric,
        bins,
        coverage_thresholds,
        chance_line: 1.0 / n_classes as f64,
        cohort_size: n,
    })
}

/// Balanced accuracy of a whole cohort, for comparison with the curves.
pub fn cohort_balanced_accuracy(
    results: &[ClassificationResult],
    labels: &[usize],
    n_classes: usize,
) -> Result<f64> {
    let pred: Vec<usize> = results.iter().map(|r| r.label).collect();
    balanced_accuracy(&pred, labels, n_classes)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn rank_csv(report: &RankReport) -> String {
    let mut s = String::from("feature,flip,class,sigma,normalized_sigma,flip_rank,avg_rank\n");
    for feat in &report.features {
        for flip in &feat.flips {
            for (c, class) in report.class_names.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    feat.feature, flip.flip, class, flip.sigma[c], flip.normalized[c], flip.flip_rank, feat.avg_rank
                ));
            }
        }
    }
    s
}

fn confidence_csv(report: &ConfidenceReport) -> String {
    let mut s = String::from(
        "bin_lo,bin_hi,population,balanced_accuracy,cum_population_fraction,cum_weighted_ba\n",
    );
    for b in &report.bins {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.lo,
            b.hi,
            b.population,
            fmt_opt(b.balanced_accuracy),
            b.cum_population_fraction,
            fmt_opt(b.cum_weighted_ba)
        ));
    }
    s.push_str("\ncoverage,threshold,achieved_fraction,balanced_accuracy\n");
    for t in &report.coverage_thresholds {
        s.push_str(&format!(
            "{},{},{},{}\n",
            t.coverage,
            t.threshold,
            t.achieved_fraction,
            fmt_opt(t.balanced_accuracy)
        ));
    }
    s.push_str(&format!("\nchance_line\n{}\n", report.chance_line));
    s
}

fn rank_svg(report: &RankReport) -> String {
    let cols = 3usize;
    let (pw, ph) = (300.0, 200.0);
    let rows = report.features.len().div_ceil(cols).max(1);
    let mut svg = Svg::new(pw * cols as f64, ph * rows as f64 + 30.0);
    svg.text(10.0, 20.0, 14.0, &format!("{} ranks", report.metric));
    let k = report.class_names.len().max(1);
    for (i, feat) in report.features.iter().enumerate() {
        let (x0, y0) = ((i % cols) as f64 * pw, (i / cols) as f64 * ph + 30.0);
        let (ax, ay, aw, ah) = (x0 + 30.0, y0 + 25.0, pw - 45.0, ph - 55.0);
        svg.open_group("panel");
        svg.text(x0 + 30.0, y0 + 15.0, 11.0, &format!("{} ({i})", feat.feature));
        svg.frame(ax, ay, aw, ah);
        let group_w = aw / k as f64;
        let bar_w = group_w * 0.8 / feat.flips.len().max(1) as f64;
        for (c, class) in report.class_names.iter().enumerate() {
            let gx = ax + c as f64 * group_w + group_w * 0.1;
            for (j, flip) in feat.flips.iter().enumerate() {
                let h = flip.normalized[c] * ah;
                svg.rect(gx + j as f64 * bar_w, ay + ah - h, bar_w, h, PALETTE[j % PALETTE.len()]);
            }
            svg.text(gx, ay + ah + 12.0, 9.0, class);
        }
        svg.close_group();
    }
    svg.finish()
}

fn confidence_svg(report: &ConfidenceReport) -> String {
    let (w, ph) = (520.0, 240.0);
    let mut svg = Svg::new(w, 2.0 * ph + 30.0);
    svg.text(10.0, 20.0, 14.0, &format!("{} confidence", report.metric));
    let (ax, aw, ah) = (45.0, w - 70.0, ph - 60.0);
    let x_of = |c: f64| ax + c / 100.0 * aw;
    let max_pop = report.bins.iter().map(|b| b.population).max().unwrap_or(0).max(1) as f64;

    for panel in 0..2 {
        let ay = 30.0 + panel as f64 * ph + 20.0;
        let y_of = |v: f64| ay + ah - v * ah;
        svg.open_group("panel");
        svg.frame(ax, ay, aw, ah);
        svg.text(ax, ay - 5.0, 11.0, if panel == 0 { "balanced accuracy" } else { "population" });
        svg.open_group("histogram");
        for b in &report.bins {
            let v = if panel == 0 {
                b.balanced_accuracy.unwrap_or(0.0)
            } else {
                b.population as f64 / max_pop
            };
            svg.rect(x_of(b.lo), y_of(v), x_of(b.hi) - x_of(b.lo) - 1.0, v * ah, "#f2c14e");
        }
        svg.close_group();
        let mut pts = vec![(x_of(0.0), y_of(0.0))];
        pts.extend(report.bins.iter().map(|b| {
            let v = if panel == 0 {
                b.cum_weighted_ba.unwrap_or(0.0)
            } else {
                b.cum_population_fraction
            };
            (x_of(b.hi), y_of(v))
        }));
        svg.polyline(&pts, "#1f77b4", "cumulative");
        for (i, t) in report.coverage_thresholds.iter().enumerate() {
            svg.line(
                (x_of(t.threshold), ay),
                (x_of(t.threshold), ay + ah),
                PALETTE[(i + 2) % PALETTE.len()],
                "coverage",
            );
        }
        if panel == 0 {
            let y = y_of(report.chance_line);
            svg.line((ax, y), (ax + aw, y), "#ff7f0e", "chance");
        }
        for tick in (0..=100).step_by(20) {
            svg.text(x_of(tick as f64) - 6.0, ay + ah + 14.0, 9.0, &tick.to_string());
        }
        svg.close_group();
    }
    svg.finish()
}

/// Write rank and confidence artifacts for each report into `out_dir`.
pub fn emit_reports(
    ranks: &[RankReport],
    confidences: &[ConfidenceReport],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| CactusError::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        write_text(&path, &text)?;
        written.push(path);
        Ok(())
    };
    for r in ranks {
        let m = r.metric.name();
        let json = serde_json::to_string_pretty(r).map_err(|e| CactusError::json(dir, e))?;
        put(format!("ranks_{m}.json"), json + "\n")?;
        put(format!("ranks_{m}.csv"), rank_csv(r))?;
        put(format!("ranks_{m}.svg"), rank_svg(r))?;
    }
    for c in confidences {
        let m = c.metric.name();
        put(format!("confidence_{m}.csv"), confidence_csv(c))?;
        put(format!("confidence_{m}.svg"), confidence_svg(c))?;
    }
    Ok(written)
}
