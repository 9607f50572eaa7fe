//! Generate a synthetic staged cohort, write it, and load it back.
//!
//! cargo run --example synthesize_cohort [OUT_DIR]

use std::path::PathBuf;

use cactus::harness::{synthesize, SyntheticSpec};
use cactus::tabular::load_csv;

fn out_dir(name: &str) -> PathBuf {
    std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("cactus-{name}")))
}

pub fn run() -> anyhow::Result<()> {
    let dir = out_dir("synthesize");
    std::fs::create_dir_all(&dir)?;

    let spec = SyntheticSpec { n_rows: 2000, seed: 42, ..SyntheticSpec::default() };
    let d = synthesize(&spec)?;

    let mut counts = vec![0usize; d.n_classes()];
    for &l in d.labels() {
        counts[l] += 1;
    }
    println!("stage  target  observed");
    for (c, name) in d.class_names().iter().enumerate() {
        println!("{name:>5}  {:>6.4}  {:>8.4}", spec.class_proportions[c], counts[c] as f64 / d.n_rows() as f64);
    }
    let observed = d.table().total_observed() as f64 / (d.n_rows() * d.table().n_features()) as f64;
    println!("{} features, {:.1}% of cells observed", d.table().n_features(), 100.0 * observed);
    println!("informative: {}", spec.informative_names().join(" "));

    let csv = dir.join("synthetic.csv");
    let schema_path = dir.join("synthetic_schema.json");
    d.write_csv(&csv)?;
    let schema = d.schema_config();
    schema.write_json(&schema_path)?;

    let back = load_csv(&csv, &schema)?;
    assert_eq!(back.labels(), d.labels());
    assert_eq!(back.table().schema(), d.table().schema());
    println!("wrote {}", csv.display());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
