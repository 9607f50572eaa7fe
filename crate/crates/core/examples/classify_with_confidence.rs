//! Train on a stratified split, classify the held-out rows under each
//! metric, and look at per-row costs and confidence.
//!
//! cargo run --example classify_with_confidence [OUT_DIR]

use std::path::PathBuf;

use cactus::classifier::{write_predictions, Metric};
use cactus::harness::{balanced_accuracy, stratified_splits, synthesize, CvConfig, SyntheticSpec};
use cactus::model::{fit, Model, TrainConfig};

pub fn run() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cactus-classify"));
    std::fs::create_dir_all(&dir)?;

    let d = synthesize(&SyntheticSpec { seed: 7, ..SyntheticSpec::default() })?;
    let split = stratified_splits(d.labels(), d.n_classes(), &CvConfig { seed: 7, ..CvConfig::default() })?.remove(0);
    let model = fit(&d.select_rows(&split.train)?, &TrainConfig::default())?;

    // models round-trip through JSON
    let path = dir.join("model.json");
    model.save(&path)?;
    let model = Model::load(&path)?;

    let test = d.table().select_rows(&split.test);
    let actual: Vec<usize> = split.test.iter().map(|&i| d.labels()[i]).collect();
    for m in Metric::ALL {
        let results = model.predict(&test, m)?;
        let pred: Vec<usize> = results.iter().map(|r| r.label).collect();
        let ba = balanced_accuracy(&pred, &actual, d.n_classes())?;
        let mean_conf = results.iter().map(|r| r.confidence).sum::<f64>() / results.len() as f64;
        println!("{m}: balanced accuracy {ba:.3}, mean confidence {mean_conf:.1}");
        write_predictions(&results, model.class_names(), dir.join(format!("predictions_{m}.csv")))?;
    }

    let r = &model.predict(&test, Metric::Cpr)?[0];
    println!(
        "first test row: stage {} predicted {} (confidence {:.1}), costs {:?}",
        d.class_names()[actual[0]],
        model.class_names()[r.label],
        r.confidence,
        r.scores.costs.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>()
    );
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
