//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line;
//! run with `cargo test -p cactus --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cactus::abstraction::{best_cutoff, enumerate_bipartitions, FeatureAbstraction};
use cactus::classifier::{classify_dataset, raw_confidence, Metric};
use cactus::explain::{confidence_analysis, flip_rank, rank_report, ConfidenceConfig};
use cactus::harness::{
    balanced_accuracy, baseline_majority, cross_validate_metrics, evaluate_split, run_fragmentation_study,
    stratified_splits, synthesize, CvConfig, FragmentationSpec, SyntheticSpec,
};
use cactus::knowledge_graph::{pagerank, ClassGraph, Edge, PageRankConfig};
use cactus::model::{fit, fit_detailed, TrainConfig};
use cactus::tabular::{Cell, Dataset, FeatureKind, FeatureSchema, Table};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    println!("criterion {n}: {} ({})", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
}

// ---- criterion 1 ----

/// Brute force over every (class subset, midpoint) pair, scoring each rule
/// by direct row counting.
fn brute_cutoff(values: &[f64], labels: &[usize], k: usize) -> Option<(u32, f64, f64)> {
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut best: Option<(u32, f64, f64)> = None;
    for subset in 1u32..(1 << k) - 1 {
        // a subset and its complement describe the same split; keep the one
        // without class 0 on the "high" side
        if subset & 1 == 1 {
            continue;
        }
        for w in distinct.windows(2) {
            let mut t = w[0] + (w[1] - w[0]) / 2.0;
            if t >= w[1] {
                t = w[0];
            }
            let (mut tp, mut tn, mut n1, mut n0) = (0usize, 0usize, 0usize, 0usize);
            for (&v, &l) in values.iter().zip(labels) {
                let high_group = subset >> l & 1 == 1;
                if high_group {
                    n1 += 1;
                    if v > t {
                        tp += 1;
                    }
                } else {
                    n0 += 1;
                    if v <= t {
                        tn += 1;
                    }
                }
            }
            if n1 == 0 || n0 == 0 {
                continue;
            }
            let ba = 0.5 * (tp as f64 / n1 as f64 + tn as f64 / n0 as f64);
            let ba = ba.max(1.0 - ba);
            if best.is_none_or(|(_, _, b)| ba > b) {
                best = Some((subset, t, ba));
            }
        }
    }
    best
}

#[test]
fn criterion_01_cutoff_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut instances, mut features, mut mismatches) = (0, 0, 0);
    for _ in 0..60 {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(k..=200);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let partitions = enumerate_bipartitions(k).unwrap();
        for f in 0..rng.random_range(1..=10) {
            let coarse = rng.random_range(2..25);
            let values: Vec<f64> = (0..n)
                .map(|i| {
                    let shift = labels[i] as f64 * rng.random_range(0.0..1.5);
                    if f % 2 == 0 {
                        (rng.random_range(0..coarse) as f64 + shift).round()
                    } else {
                        rng.random::<f64>() * 10.0 + shift
                    }
                })
                .collect();
            let got = best_cutoff("f", &values, &labels, k, &partitions).ok();
            let want = brute_cutoff(&values, &labels, k);
            let same = match (&got, want) {
                (Some(c), Some((p, t, ba))) => c.partition == p && c.threshold == t && c.achieved_ba == ba,
                (None, None) => true,
                _ => false,
            };
            if !same {
                mismatches += 1;
                eprintln!("mismatch k={k} n={n}: {got:?} vs {want:?}");
            }
            features += 1;
        }
        instances += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && instances >= 50 && secs < 60.0;
    report(1, pass, format!("{instances} instances, {features} features, {mismatches} mismatches, {secs:.2}s"));
    assert!(pass);
}

// ---- criterion 2 ----

fn dense_pagerank(n: usize, edges: &[Edge], d: f64) -> Vec<f64> {
    let mut m = vec![vec![0.0; n]; n];
    for e in edges {
        m[e.from][e.to] += e.weight;
    }
    let out: Vec<f64> = m.iter().map(|row| row.iter().sum()).collect();
    let mut r = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let dangling: f64 = (0..n).filter(|&u| out[u] == 0.0).map(|u| r[u]).sum();
        let mut next = vec![(1.0 - d) / n as f64 + d * dangling / n as f64; n];
        for u in 0..n {
            if out[u] > 0.0 {
                for v in 0..n {
                    next[v] += d * r[u] * m[u][v] / out[u];
                }
            }
        }
        let change: f64 = next.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum();
        r = next;
        if change < 1e-15 {
            break;
        }
    }
    r
}

#[test]
fn criterion_02_pagerank_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let cfg = PageRankConfig::default();
    let (mut worst_inf, mut worst_sum) = (0.0f64, 0.0f64);
    let graphs = 25;
    for _ in 0..graphs {
        let n = rng.random_range(2..=50);
        let density = rng.random_range(0.05..0.9);
        let mut edges = Vec::new();
        for u in 0..n {
            if rng.random::<f64>() < 0.1 {
                continue; // dangling
            }
            for v in 0..n {
                if u != v && rng.random::<f64>() < density {
                    let w = if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random_range(0.0..=0.5) };
                    edges.push(Edge { from: u, to: v, weight: w });
                }
            }
        }
        let want = dense_pagerank(n, &edges, cfg.damping);
        let got = pagerank(&ClassGraph::from_edges(0, n, edges), &cfg).unwrap();
        let inf = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_inf = worst_inf.max(inf);
        worst_sum = worst_sum.max((got.iter().sum::<f64>() - 1.0).abs());
    }
    let pass = worst_inf <= 1e-10 && worst_sum <= 1e-9;
    report(2, pass, format!("{graphs} graphs, max L-inf {worst_inf:.2e}, max |sum-1| {worst_sum:.2e}"));
    assert!(pass);
}

// ---- criterion 3 ----

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn criterion_03_rank_and_confidence_recomputation() {
    let d = synthesize(&SyntheticSpec { n_rows: 300, n_continuous: 6, n_categorical: 2, n_informative: 4, ..SyntheticSpec::default() }).unwrap();
    let fitted = fit_detailed(&d, &TrainConfig::default()).unwrap();
    let base = fitted.model.profile;
    let (k, nf) = (base.n_classes(), base.n_flips());
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    let mut vectors = 0;
    while vectors < 1000 {
        let sigma: Vec<Vec<f64>> = (0..k).map(|_| (0..nf).map(|_| rng.random::<f64>() * 3.0).collect()).collect();
        let p = base.with_sigma(Metric::Cpr, sigma.clone(), &fitted.flip_table).unwrap();
        for f in 0..nf {
            // ordered pairs, halved
            let mut total = 0.0;
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        total += (sigma[i][f] - sigma[j][f]).abs();
                    }
                }
            }
            let naive = total / (k * (k - 1)) as f64;
            worst = worst.max(rel_err(flip_rank(&p, Metric::Cpr, f), naive));
            vectors += 1;
        }
    }
    for _ in 0..1000 {
        let n = rng.random_range(2..=10);
        let costs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 5.0).collect();
        let top = costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let m = costs.iter().position(|&c| c == top).unwrap();
        let naive = costs.iter().map(|c| top - c).sum::<f64>() / (n - 1) as f64;
        let (label, raw) = raw_confidence(&costs);
        if label != m {
            worst = f64::INFINITY;
        }
        worst = worst.max(rel_err(raw, naive));
    }
    let pass = worst <= 1e-12;
    report(3, pass, format!("{vectors} rank vectors + 1000 cost vectors, max relative error {worst:.2e}"));
    assert!(pass);
}

// ---- criterion 4 ----

#[test]
fn criterion_04_chance_floor_and_signal() {
    let start = Instant::now();
    let cfg = CvConfig::default();
    let null = synthesize(&SyntheticSpec { n_informative: 0, ..SyntheticSpec::default() }).unwrap();
    let chance = 1.0 / null.n_classes() as f64;
    let null_ba = cross_validate_metrics(&null, &Metric::ALL, &cfg, &FragmentationSpec::none()).unwrap();
    let null_ok = null_ba.iter().all(|r| (r.mean - chance).abs() <= 0.05);
    let strong = synthesize(&SyntheticSpec { separation: 3.0, base_missing_fraction: 0.0, ..SyntheticSpec::default() }).unwrap();
    let strong_ba = cross_validate_metrics(&strong, &[Metric::Cpr], &cfg, &FragmentationSpec::none()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = null_ok && strong_ba[0].mean >= 0.90 && secs < 300.0;
    let nulls: Vec<String> = null_ba.iter().map(|r| format!("{} {:.3}", r.method, r.mean)).collect();
    report(4, pass, format!("null [{}], separable CPR {:.3}, {secs:.1}s", nulls.join(", "), strong_ba[0].mean));
    assert!(pass);
}

// ---- criterion 5 ----

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn criterion_05_fragmentation_degradation() {
    let levels = [0.0, 0.2, 0.4, 0.6, 0.8];
    let seeds = 0..5u64;
    let mut per_metric: BTreeMap<Metric, Vec<Vec<f64>>> = BTreeMap::new();
    let mut baselines = Vec::new();
    for seed in seeds.clone() {
        let d = synthesize(&SyntheticSpec { seed, ..SyntheticSpec::default() }).unwrap();
        let cfg = CvConfig { seed, ..CvConfig::default() };
        let t = run_fragmentation_study(&d, &levels, &Metric::ALL, &cfg).unwrap();
        for m in Metric::ALL {
            per_metric
                .entry(m)
                .or_default()
                .push((0..levels.len()).map(|l| t.cell(l, m).unwrap().mean).collect());
        }
        baselines.push(t.baselines[levels.len() - 1].mean);
    }
    let base = median(baselines);
    let mut pass = true;
    let mut detail = Vec::new();
    for (m, runs) in &per_metric {
        let med: Vec<f64> = (0..levels.len()).map(|l| median(runs.iter().map(|r| r[l]).collect())).collect();
        let worst_rise = med.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        let ok = worst_rise <= 0.01 && med[levels.len() - 1] >= base + 0.05;
        pass &= ok;
        let shown: Vec<String> = med.iter().map(|x| format!("{x:.3}")).collect();
        detail.push(format!("{m} [{}]", shown.join(" ")));
    }
    report(5, pass, format!("medians {}; baseline {base:.3}", detail.join("; ")));
    assert!(pass);
}

// ---- criterion 6 ----

#[test]
fn criterion_06_rank_sanity() {
    let mut hits = 0;
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let spec = SyntheticSpec { n_informative: 1, seed, ..SyntheticSpec::default() };
        let name = spec.informative_names().remove(0);
        let model = fit(&synthesize(&spec).unwrap(), &TrainConfig::default()).unwrap();
        let positions: Vec<Option<usize>> = Metric::ALL
            .iter()
            .map(|&m| rank_report(&model.profile, m, usize::MAX).position(&name))
            .collect();
        if positions.iter().all(|p| *p == Some(0)) {
            hits += 1;
        }
        detail.push(format!("{positions:?}"));
    }
    let pass = hits >= 4;
    report(6, pass, format!("{hits}/5 seeds at position 0; {}", detail.join(" ")));
    assert!(pass);
}

// ---- criterion 7 ----

#[test]
fn criterion_07_confidence_coverage() {
    let mut pass = true;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..3u64 {
        let d = synthesize(&SyntheticSpec { n_rows: 1500, seed, ..SyntheticSpec::default() }).unwrap();
        let fitted = fit_detailed(&d, &TrainConfig::default()).unwrap();
        for m in Metric::ALL {
            let results = classify_dataset(&fitted.flip_table, &fitted.model.profile, m).unwrap();
            let rep = confidence_analysis(&results, d.labels(), d.n_classes(), &ConfidenceConfig::default()).unwrap();
            let last = rep.bins.last().unwrap();
            pass &= last.cum_population_fraction == 1.0;
            let th: Vec<f64> = rep.coverage_thresholds.iter().map(|c| c.threshold).collect();
            let cov: Vec<u32> = rep.coverage_thresholds.iter().map(|c| c.coverage).collect();
            pass &= cov == [90, 80, 70, 60, 50];
            // coverage descends along the list, so thresholds must not fall
            pass &= th.windows(2).all(|w| w[0] <= w[1]);
            let pred: Vec<usize> = results.iter().map(|r| r.label).collect();
            let ba = balanced_accuracy(&pred, d.labels(), d.n_classes()).unwrap();
            let err = (last.cum_weighted_ba.unwrap() - ba).abs();
            worst = worst.max(err);
            pass &= err <= 1e-12;
            cases += 1;
        }
    }
    report(7, pass, format!("{cases} cohort/metric cases, max |cum BA - BA| {worst:.2e}"));
    assert!(pass);
}

// ---- criteria 8 and 9 (CLI) ----

fn cactus(args: &[&str], threads: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_cactus"))
        .args(args)
        .env("CACTUS_THREADS", threads)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "cactus {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn criterion_08_refinement_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    let out = dir.path().join("refine");
    cactus(&["synthesize", "--continuous", "80", "--categorical", "20", "--informative", "9", "--seed", "8", "--out", p(&syn)], "2");
    cactus(
        &[
            "refine",
            "--input",
            p(&syn.join("synthetic.csv")),
            "--schema",
            p(&syn.join("synthetic_schema.json")),
            "--top-k-features",
            "9",
            "--seed",
            "8",
            "--out",
            p(&out),
        ],
        "2",
    );
    let report_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("refine.json")).unwrap()).unwrap();
    let whole = report_json["whole"].as_array().unwrap();
    let top = report_json["top_k"].as_array().unwrap();
    let n_features = report_json["refined_features"].as_array().unwrap().len();
    let mut pass = n_features == 9;
    let mut detail = Vec::new();
    for (w, t) in whole.iter().zip(top) {
        let (wm, tm) = (w["mean"].as_f64().unwrap(), t["mean"].as_f64().unwrap());
        pass &= tm >= wm - 0.05;
        detail.push(format!("{} {wm:.3} -> {tm:.3}", w["method"].as_str().unwrap()));
    }
    report(8, pass, format!("{n_features} features kept; {}", detail.join(", ")));
    assert!(pass);
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    cactus(&["synthesize", "--rows", "800", "--seed", "9", "--out", p(&syn)], "1");
    let csv = syn.join("synthetic.csv");
    let schema = syn.join("synthetic_schema.json");
    let mut mismatched = Vec::new();
    let mut files = 0;
    for cmd in ["train", "explain", "study"] {
        let mut runs = Vec::new();
        for (i, threads) in ["1", "4"].iter().enumerate() {
            let out = dir.path().join(format!("{cmd}{i}"));
            match cmd {
                "train" => cactus(&["train", "--input", p(&csv), "--schema", p(&schema), "--out", p(&out)], threads),
                "explain" => cactus(
                    &["explain", "--model", p(&dir.path().join("train0/model.json")), "--input", p(&csv), "--out", p(&out)],
                    threads,
                ),
                _ => cactus(&["study", "--seed", "7", "--folds", "4", "--out", p(&out)], threads),
            }
            runs.push(dir_bytes(&out));
        }
        files += runs[0].len();
        if runs[0] != runs[1] {
            mismatched.push(cmd);
        }
    }
    let pass = mismatched.is_empty();
    report(9, pass, format!("{files} artifacts compared across CACTUS_THREADS=1/4; mismatched {mismatched:?}"));
    assert!(pass);
}

// ---- criterion 10 ----

/// Append a column that carries the label only on `rows` and is `fill`
/// elsewhere.
fn with_canary(d: &Dataset, rows: &[usize], fill: impl Fn(usize) -> Cell) -> Dataset {
    let mut schema = d.table().schema().to_vec();
    let mut columns: Vec<Vec<Cell>> = (0..d.table().n_features()).map(|f| d.table().column(f).to_vec()).collect();
    let mut canary: Vec<Cell> = (0..d.n_rows()).map(&fill).collect();
    for &r in rows {
        canary[r] = Cell::Number(d.labels()[r] as f64);
    }
    schema.push(FeatureSchema { name: "canary".into(), kind: FeatureKind::Continuous, declared: true });
    columns.push(canary);
    d.with_table(Table::new(schema, columns).unwrap()).unwrap()
}

#[test]
fn criterion_10_no_leak_canary() {
    let d = synthesize(&SyntheticSpec {
        n_rows: 5000,
        n_continuous: 4,
        n_categorical: 1,
        n_informative: 0,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = CvConfig { seed: 10, ..CvConfig::default() };
    let chance = 1.0 / d.n_classes() as f64;
    let splits = stratified_splits(d.labels(), d.n_classes(), &cfg).unwrap();
    let mut worst = 0.0f64;
    let mut cutoff_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for s in &splits {
        // signal on test rows only, missing on training rows
        let hidden = with_canary(&d, &s.test, |_| Cell::Missing);
        let ba = evaluate_split(&hidden, s, &[Metric::Cpr], &cfg.train).unwrap()[0];
        worst = worst.max((ba - chance).abs());

        // signal on test rows only, noise on training rows: the learned
        // cut-off must not be informative on the training rows
        let noise: Vec<f64> = (0..d.n_rows()).map(|_| rng.random::<f64>() * 4.0).collect();
        let noisy = with_canary(&d, &s.test, |i| Cell::Number(noise[i]));
        let model = fit(&noisy.select_rows(&s.train).unwrap(), &cfg.train).unwrap();
        if let Some(FeatureAbstraction::Continuous(c)) = model.profile.abstraction.feature("canary").map(|f| &f.abstraction) {
            cutoff_ok &= c.achieved_ba < 0.6;
        }
    }
    let baseline = baseline_majority(&d, &cfg).unwrap().mean;
    let pass = worst <= 0.05 && cutoff_ok;
    report(
        10,
        pass,
        format!("max |fold BA - 1/K| {worst:.3} over {} folds; canary cut-offs uninformative: {cutoff_ok}; majority {baseline:.3}", splits.len()),
    );
    assert!(pass);
}
