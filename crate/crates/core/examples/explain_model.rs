//! Rank features by how much their significance varies between classes,
//! and relate confidence to balanced accuracy and population coverage.
//!
//! cargo run --example explain_model [OUT_DIR]

use std::path::PathBuf;

use cactus::classifier::{classify_dataset, Metric};
use cactus::explain::{confidence_analysis, emit_reports, rank_report, ConfidenceConfig};
use cactus::harness::{synthesize, SyntheticSpec};
use cactus::model::{fit_detailed, TrainConfig};

pub fn run() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cactus-explain"));

    let spec = SyntheticSpec { n_informative: 6, seed: 11, ..SyntheticSpec::default() };
    let d = synthesize(&spec)?;
    let fitted = fit_detailed(&d, &TrainConfig::default())?;
    let profile = &fitted.model.profile;
    println!("informative features: {}", spec.informative_names().join(" "));

    let mut ranks = Vec::new();
    let mut confidences = Vec::new();
    for m in Metric::ALL {
        let r = rank_report(profile, m, 9);
        println!("{m} top ranks: {}", r.feature_names().join(" "));
        ranks.push(r);

        let results = classify_dataset(&fitted.flip_table, profile, m)?;
        let c = confidence_analysis(&results, d.labels(), d.n_classes(), &ConfidenceConfig::default())?;
        for t in &c.coverage_thresholds {
            println!(
                "    {}% of rows have confidence >= {:.1}; balanced accuracy there {:.3}",
                t.coverage,
                t.threshold,
                t.balanced_accuracy.unwrap_or(f64::NAN)
            );
        }
        confidences.push(c);
    }
    for p in emit_reports(&ranks, &confidences, &dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
