//! Load a CSV with text stage labels, custom missing markers and a declared
//! categorical column, then inspect the detected schema.
//!
//! cargo run --example load_cohort_csv

use cactus::tabular::{load_csv, SchemaConfig};

const CSV: &str = "\
patient,age,bmi,snp_rs10490924,smoker,stage
p1,71,24.1,0,yes,early
p2,66,?,1,no,none
p3,80,31.5,2,no,late
p4,58,NA,0,yes,none
p5,77,27.8,,no,early
p6,83,22.0,2,unknown,late
";

pub fn run() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("cohort.csv");
    std::fs::write(&path, CSV)?;

    let mut schema = SchemaConfig::new("stage");
    schema.missing_markers.extend(["?".to_string(), "unknown".to_string()]);
    schema.categorical.push("smoker".into());
    // six integer ages would otherwise be read as categorical levels
    schema.continuous.push("age".into());
    schema.excluded.push("patient".into());

    let d = load_csv(&path, &schema)?;
    println!("classes (first appearance order): {:?}", d.class_names());
    println!("labels: {:?}", d.labels());
    for (i, s) in d.table().schema().iter().enumerate() {
        println!(
            "{:<16} {:?}{} observed {}/{}",
            s.name,
            s.kind,
            if s.declared { " (declared)" } else { "" },
            d.table().observed_count(i),
            d.n_rows()
        );
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
