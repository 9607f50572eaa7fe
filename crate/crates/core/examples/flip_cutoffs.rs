//! Turn continuous features into Down/Up flips with the exhaustive
//! class-bipartition cut-off search, and categorical features into one flip
//! per level.
//!
//! cargo run --example flip_cutoffs

use cactus::abstraction::{abstract_dataset, best_cutoff, enumerate_bipartitions, FeatureAbstraction};
use cactus::harness::{synthesize, SyntheticSpec};

pub fn run() -> anyhow::Result<()> {
    // one feature, three classes: only {0} vs {1, 2} separates cleanly
    let ages = [55.0, 58.0, 60.0, 61.0, 66.0, 70.0, 72.0, 75.0];
    let classes = [0, 0, 0, 1, 2, 1, 2, 1];
    let partitions = enumerate_bipartitions(3)?;
    let c = best_cutoff("age", &ages, &classes, 3, &partitions)?;
    println!(
        "age: threshold {} partition {:#05b} balanced accuracy {}",
        c.threshold, c.partition, c.achieved_ba
    );

    let d = synthesize(&SyntheticSpec { n_rows: 1500, n_continuous: 6, n_categorical: 2, n_informative: 5, seed: 3, ..SyntheticSpec::default() })?;
    let (map, flips) = abstract_dataset(&d)?;
    println!("\n{:<14} {:>10} {:>10} {:>8}", "feature", "threshold", "group 1", "BA");
    for f in map.features() {
        match &f.abstraction {
            FeatureAbstraction::Continuous(c) => {
                let group1: Vec<String> = (0..d.n_classes())
                    .filter(|&k| c.partition >> k & 1 == 1)
                    .map(|k| d.class_names()[k].clone())
                    .collect();
                println!("{:<14} {:>10.4} {:>10} {:>8.4}", f.name, c.threshold, group1.join(","), c.achieved_ba);
            }
            FeatureAbstraction::Categorical { levels } => {
                println!("{:<14} levels {}", f.name, levels.join(" "));
            }
        }
    }
    println!("\n{} flips; row 0 carries {:?}", map.n_flips(), flips.row(0).iter().map(|&i| map.flips()[i].name()).collect::<Vec<_>>());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
