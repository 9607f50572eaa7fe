//! Drop heavily missing features, keep the best-ranked ones, and compare
//! cross-validated accuracy before and after.
//!
//! cargo run --release --example refine_features

use cactus::classifier::Metric;
use cactus::explain::rank_report;
use cactus::harness::{cross_validate, synthesize, CvConfig, FragmentationSpec, SyntheticSpec};
use cactus::model::{fit, TrainConfig};
use cactus::tabular::{apply_filter, FilterSpec};

pub fn run() -> anyhow::Result<()> {
    let spec = SyntheticSpec { n_continuous: 40, n_categorical: 10, n_informative: 9, seed: 4, ..SyntheticSpec::default() };
    let d = synthesize(&spec)?;
    let cfg = CvConfig { folds: 5, seed: 4, ..CvConfig::default() };
    let none = FragmentationSpec::none();

    let mostly_observed = FilterSpec {
        excluded: ["noise_cont_39".to_string()].into(),
        max_missing_fraction: 0.75,
        ..FilterSpec::default()
    };
    let refined = apply_filter(&d, &mostly_observed, None)?;
    println!("{} of {} features kept after exclusion and the 75% missing-value cap", refined.table().n_features(), d.table().n_features());

    let ranks = rank_report(&fit(&refined, &TrainConfig::default())?.profile, Metric::Cpr, usize::MAX);
    let top9 = apply_filter(&refined, &FilterSpec { keep_top_k_by_rank: Some(9), ..FilterSpec::default() }, Some(&ranks))?;
    let kept: Vec<&str> = top9.table().schema().iter().map(|s| s.name.as_str()).collect();
    println!("top 9 by CPR rank: {}", kept.join(" "));

    let whole = cross_validate(&d, Metric::Cpr, &cfg, &none)?;
    let after = cross_validate(&top9, Metric::Cpr, &cfg, &none)?;
    println!("CPR balanced accuracy: all features {}, top 9 {}", whole.summary(), after.summary());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
