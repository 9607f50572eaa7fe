//! Build one weighted flip graph per class and inspect its centralities.
//! Edge lists and node tables are written for external graph viewers.
//!
//! cargo run --example knowledge_graphs [OUT_DIR]

use std::path::PathBuf;

use cactus::harness::{synthesize, SyntheticSpec};
use cactus::knowledge_graph::{node_table, write_edge_csv, write_node_json};
use cactus::model::{fit_detailed, TrainConfig};

pub fn run() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cactus-graphs"));
    std::fs::create_dir_all(&dir)?;

    let d = synthesize(&SyntheticSpec { n_rows: 1500, n_continuous: 8, n_categorical: 2, n_informative: 6, seed: 5, ..SyntheticSpec::default() })?;
    let fitted = fit_detailed(&d, &TrainConfig::default())?;
    let map = &fitted.model.profile.abstraction;

    for g in &fitted.graphs {
        let live = g.edges.iter().filter(|e| e.weight > 0.0).count();
        let mut nodes = node_table(g, map, &fitted.centralities);
        nodes.sort_by(|a, b| b.pagerank.total_cmp(&a.pagerank).then_with(|| a.flip.cmp(&b.flip)));
        let top: Vec<String> = nodes.iter().take(3).map(|n| format!("{} ({:.4})", n.flip, n.pagerank)).collect();
        println!("class {}: {} edges, {live} non-zero; top PageRank {}", d.class_names()[g.class_id], g.edges.len(), top.join(", "));

        let name = &d.class_names()[g.class_id];
        write_edge_csv(g, map, dir.join(format!("edges_{name}.csv")))?;
        write_node_json(g, map, &fitted.centralities, dir.join(format!("nodes_{name}.json")))?;
    }
    println!("graph exports in {}", dir.display());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
