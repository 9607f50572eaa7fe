//! Remove increasing fractions of the observed values and track balanced
//! accuracy of every metric against a majority-class baseline.
//!
//! cargo run --release --example fragmentation_study [OUT_DIR]

use std::path::PathBuf;

use cactus::classifier::Metric;
use cactus::harness::{run_fragmentation_study, synthesize, CvConfig, SyntheticSpec};

pub fn run() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cactus-study"));

    let d = synthesize(&SyntheticSpec { n_rows: 2000, seed: 1, ..SyntheticSpec::default() })?;
    let cfg = CvConfig { folds: 5, seed: 1, ..CvConfig::default() };
    let table = run_fragmentation_study(&d, &[0.0, 0.2, 0.4, 0.6, 0.8], &Metric::ALL, &cfg)?;

    println!("{:>8} {:>11} {:>11} {:>11} {:>11}", "removed", "CPB", "CDG", "CPR", "majority");
    for (i, level) in table.levels.iter().enumerate() {
        let cells: Vec<String> = Metric::ALL.iter().map(|&m| table.cell(i, m).unwrap().summary()).collect();
        println!(
            "{:>7}% {:>11} {:>11} {:>11} {:>11}",
            (level * 100.0).round(),
            cells[0],
            cells[1],
            cells[2],
            table.baselines[i].summary()
        );
    }
    table.write(&dir)?;
    println!("wrote {}", dir.join("study.csv").display());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
