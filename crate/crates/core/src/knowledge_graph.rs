//! Per-class knowledge graphs over the flip universe.
//!
//! An edge `from -> to` carries `|P(to | from, class) - 0.5|`: zero for
//! independent flips, 0.5 for flips that always or never co-occur. Flips of
//! the same feature are never connected.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{AbstractionMap, FlipTable};
use crate::error::{CactusError, Result};
use crate::tabular::write_text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassGraph {
    pub class_id: usize,
    pub n_nodes: usize,
    pub edges: Vec<Edge>,
    /// `P(flip | class)` per flip; denominators include rows where the
    /// flip's feature is missing.
    pub flip_class_prob: Vec<f64>,
}

impl ClassGraph {
    /// Graph over `n_nodes` flips with the given edges and no probabilities.
    pub fn from_edges(class_id: usize, n_nodes: usize, edges: Vec<Edge>) -> Self {
        ClassGraph {
            class_id,
            n_nodes,
            edges,
            flip_class_prob: vec![0.0; n_nodes],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        PageRankConfig {
            damping: 0.85,
            tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

impl PageRankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(CactusError::PageRankParams(format!(
                "damping {} outside (0, 1)",
                self.damping
            )));
        }
        if !(self.tol > 0.0) {
            return Err(CactusError::PageRankParams(format!("tol {} must be > 0", self.tol)));
        }
        Ok(())
    }
}

/// Per-class centralities, indexed `[class][flip]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralityTable {
    pub pagerank: Vec<Vec<f64>>,
    pub degree: Vec<Vec<f64>>,
}

fn class_rows(labels: &[usize], class_id: usize) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l == class_id)
        .map(|(i, _)| i)
        .collect()
}

fn check_flip(ft: &FlipTable, flip: usize) -> Result<()> {
    if flip >= ft.n_flips() {
        Err(CactusError::UnknownFlip(flip))
    } else {
        Ok(())
    }
}

/// Fraction of the class's rows carrying `flip`.
pub fn class_conditional_prob(
    ft: &FlipTable,
    labels: &[usize],
    class_id: usize,
    flip: usize,
) -> Result<f64> {
    check_flip(ft, flip)?;
    let rows = class_rows(labels, class_id);
    if rows.is_empty() {
        return Err(CactusError::EmptyClass(class_id));
    }
    let hits = rows.iter().filter(|&&r| ft.row(r).contains(&flip)).count();
    Ok(hits as f64 / rows.len() as f64)
}

/// `P(to | from, class)`, or `None` when `from` never occurs in the class.
pub fn conditional_edge_prob(
    ft: &FlipTable,
    map: &AbstractionMap,
    labels: &[usize],
    class_id: usize,
    from: usize,
    to: usize,
) -> Result<Option<f64>> {
    check_flip(ft, from)?;
    check_flip(ft, to)?;
    let (a, b) = (&map.flips()[from], &map.flips()[to]);
    if a.feature_index == b.feature_index {
        return Err(CactusError::SameFeature(a.name(), b.name()));
    }
    let mut with_from = 0usize;
    let mut both = 0usize;
    for r in class_rows(labels, class_id) {
        let row = ft.row(r);
        if row.contains(&from) {
            with_from += 1;
            if row.contains(&to) {
                both += 1;
            }
        }
    }
    Ok((with_from > 0).then(|| both as f64 / with_from as f64))
}

/// Build the graph of one class from co-occurrence counts.
pub fn build_class_graph(
    ft: &FlipTable,
    map: &AbstractionMap,
    labels: &[usize],
    class_id: usize,
) -> Result<ClassGraph> {
    let n = ft.n_flips();
    let rows = class_rows(labels, class_id);
    if rows.is_empty() {
        return Err(CactusError::EmptyClass(class_id));
    }
    let owner = map.flip_features();
    let mut single = vec![0u32; n];
    let mut pair = vec![0u32; n * n];
    for &r in &rows {
        let flips = ft.row(r);
        for &a in flips {
            single[a] += 1;
            for &b in flips {
                if a != b {
                    pair[a * n + b] += 1;
                }
            }
        }
    }
    let mut edges = Vec::new();
    for from in 0..n {
        if single[from] == 0 {
            continue;
        }
        let denom = f64::from(single[from]);
        for to in 0..n {
            if owner[from] == owner[to] {
                continue;
            }
            let p = f64::from(pair[from * n + to]) / denom;
            edges.push(Edge {
                from,
                to,
                weight: (p - 0.5).abs(),
            });
        }
    }
    let total = rows.len() as f64;
    Ok(ClassGraph {
        class_id,
        n_nodes: n,
        edges,
        flip_class_prob: single.iter().map(|&c| f64::from(c) / total).collect(),
    })
}

/// One graph per class, in class order.
pub fn build_graphs(
    ft: &FlipTable,
    map: &AbstractionMap,
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<ClassGraph>> {
    (0..n_classes)
        .into_par_iter()
        .map(|c| build_class_graph(ft, map, labels, c))
        .collect()
}

/// Weighted PageRank by power iteration.
///
/// Transition `u -> v` has probability `w(u, v) / sum_out(u)`; nodes whose
/// outgoing weight is zero spread their mass uniformly. Iterates
/// `r <- (1 - d) / n + d * M^T r` until the L1 change drops below `tol`.
pub fn pagerank(g: &ClassGraph, cfg: &PageRankConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = g.n_nodes;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut out_weight = vec![0.0f64; n];
    for e in &g.edges {
        out_weight[e.from] += e.weight;
    }
    let transitions: Vec<(usize, usize, f64)> = g
        .edges
        .iter()
        .filter(|e| e.weight > 0.0)
        .map(|e| (e.from, e.to, e.weight / out_weight[e.from]))
        .collect();
    let dangling: Vec<usize> = (0..n).filter(|&u| out_weight[u] <= 0.0).collect();

    let d = cfg.damping;
    let nf = n as f64;
    let mut rank = vec![1.0 / nf; n];
    let mut next = vec![0.0f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let dangling_mass: f64 = dangling.iter().map(|&u| rank[u]).sum();
        let base = (1.0 - d) / nf + d * dangling_mass / nf;
        next.iter_mut().for_each(|x| *x = base);
        for &(u, v, p) in &transitions {
            next[v] += d * p * rank[u];
        }
        residual = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if residual < cfg.tol {
            return Ok(rank);
        }
    }
    Err(CactusError::NoConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Sum of incoming and outgoing edge weights per flip.
pub fn total_degree(g: &ClassGraph) -> Vec<f64> {
    let mut degree = vec![0.0; g.n_nodes];
    for e in &g.edges {
        degree[e.from] += e.weight;
        degree[e.to] += e.weight;
    }
    degree
}

/// PageRank and total degree for every class graph.
pub fn centralities(graphs: &[ClassGraph], cfg: &PageRankConfig) -> Result<CentralityTable> {
    let pagerank = graphs
        .par_iter()
        .map(|g| pagerank(g, cfg))
        .collect::<Result<Vec<_>>>()?;
    let degree = graphs.par_iter().map(total_degree).collect();
    Ok(CentralityTable { pagerank, degree })
}

/// Edge list as CSV: `from_flip,to_flip,weight`.
pub fn write_edge_csv(g: &ClassGraph, map: &AbstractionMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("from_flip,to_flip,weight\n");
    for e in &g.edges {
        text.push_str(&format!(
            "{},{},{}\n",
            map.flips()[e.from].name(),
            map.flips()[e.to].name(),
            e.weight
        ));
    }
    write_text(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub flip: String,
    pub class_prob: f64,
    pub pagerank: f64,
    pub degree: f64,
}

/// Node table for one class: flip, class probability, and centralities.
pub fn node_table(
    g: &ClassGraph,
    map: &AbstractionMap,
    centrality: &CentralityTable,
) -> Vec<NodeRecord> {
    (0..g.n_nodes)
        .map(|f| NodeRecord {
            flip: map.flips()[f].name(),
            class_prob: g.flip_class_prob[f],
            pagerank: centrality.pagerank[g.class_id][f],
            degree: centrality.degree[g.class_id][f],
        })
        .collect()
}

pub fn write_node_json(
    g: &ClassGraph,
    map: &AbstractionMap,
    centrality: &CentralityTable,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&node_table(g, map, centrality))
        .map_err(|e| CactusError::json(path, e))?;
    write_text(path, &(text + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::abstract_dataset;
    use crate::tabular::{Cell, Dataset, FeatureKind, FeatureSchema, Table};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn categorical_dataset(columns: Vec<Vec<Option<&str>>>, labels: Vec<usize>) -> Dataset {
        let schema = (0..columns.len())
            .map(|i| FeatureSchema {
                name: format!("f{i}"),
                kind: FeatureKind::Categorical,
                declared: true,
            })
            .collect();
        let cols = columns
            .into_iter()
            .map(|c| {
                c.into_iter()
                    .map(|v| v.map_or(Cell::Missing, |s| Cell::Level(s.into())))
                    .collect()
            })
            .collect();
        let k = labels.iter().max().unwrap() + 1;
        let names = (0..k).map(|i| i.to_string()).collect();
        Dataset::new(Table::new(schema, cols).unwrap(), labels, names, "y").unwrap()
    }

    #[test]
    fn class_probability_counts_missing_rows() {
        // class 0: 10 rows, feature observed in 8 (5 "U", 3 "D")
        let mut col: Vec<Option<&str>> = vec![Some("U"); 5];
        col.extend([Some("D"); 3]);
        col.extend([None; 2]);
        col.extend([Some("U"), Some("D")]);
        let mut labels = vec![0; 10];
        labels.extend([1, 1]);
        let d = categorical_dataset(vec![col], labels);
        let (map, ft) = abstract_dataset(&d).unwrap();
        let up = map.flip_index("f0_U").unwrap();
        let down = map.flip_index("f0_D").unwrap();
        let pu = class_conditional_prob(&ft, d.labels(), 0, up).unwrap();
        let pd = class_conditional_prob(&ft, d.labels(), 0, down).unwrap();
        assert_eq!((pu, pd), (0.5, 0.3));
        assert!(pu + pd < 1.0);
    }

    #[test]
    fn class_probability_simple_and_all_missing() {
        let mut col = vec![Some("a"); 4];
        col.extend([Some("b"); 6]);
        col.extend([None, None]);
        let labels = [vec![0; 10], vec![1; 2]].concat();
        let d = categorical_dataset(vec![col], labels);
        let (map, ft) = abstract_dataset(&d).unwrap();
        let a = map.flip_index("f0_a").unwrap();
        assert_eq!(class_conditional_prob(&ft, d.labels(), 0, a).unwrap(), 0.4);
        assert_eq!(class_conditional_prob(&ft, d.labels(), 1, a).unwrap(), 0.0);
        assert!(matches!(
            class_conditional_prob(&ft, d.labels(), 2, a),
            Err(CactusError::EmptyClass(2))
        ));
    }

    fn six_row_class() -> Dataset {
        // f0 = "x" in rows 0..5, f1 = "y" in rows 0..4
        let f0 = vec![Some("x"), Some("x"), Some("x"), Some("x"), Some("x"), Some("z"), Some("z")];
        let f1 = vec![Some("y"), Some("y"), Some("y"), Some("y"), Some("w"), Some("w"), Some("y")];
        categorical_dataset(vec![f0, f1], vec![0, 0, 0, 0, 0, 0, 1])
    }

    #[test]
    fn edge_probability_hand_count() {
        let d = six_row_class();
        let (map, ft) = abstract_dataset(&d).unwrap();
        let x = map.flip_index("f0_x").unwrap();
        let y = map.flip_index("f1_y").unwrap();
        let z = map.flip_index("f0_z").unwrap();
        let p = conditional_edge_prob(&ft, &map, d.labels(), 0, x, y).unwrap();
        assert_eq!(p, Some(0.8));
        // x never occurs in class 1
        assert_eq!(conditional_edge_prob(&ft, &map, d.labels(), 1, x, y).unwrap(), None);
        assert!(matches!(
            conditional_edge_prob(&ft, &map, d.labels(), 0, x, z),
            Err(CactusError::SameFeature(..))
        ));
        let g = build_class_graph(&ft, &map, d.labels(), 0).unwrap();
        let w = g.edges.iter().find(|e| e.from == x && e.to == y).unwrap().weight;
        assert!((w - 0.3).abs() < 1e-15);
    }

    #[test]
    fn co_occurring_up_flips_get_maximal_weight() {
        let f0 = vec![Some("U"), Some("U"), Some("D"), Some("D"), Some("U")];
        let f1 = vec![Some("U"), Some("U"), Some("D"), Some("D"), Some("D")];
        let d = categorical_dataset(vec![f0, f1], vec![0, 0, 0, 0, 1]);
        let (map, ft) = abstract_dataset(&d).unwrap();
        let g = build_class_graph(&ft, &map, d.labels(), 0).unwrap();
        let u0 = map.flip_index("f0_U").unwrap();
        let u1 = map.flip_index("f1_U").unwrap();
        let w = |a, b| g.edges.iter().find(|e| e.from == a && e.to == b).unwrap().weight;
        assert_eq!(w(u0, u1), 0.5);
        assert_eq!(w(u1, u0), 0.5);
        for e in &g.edges {
            assert!(map.flips()[e.from].feature != map.flips()[e.to].feature);
            assert!((0.0..=0.5).contains(&e.weight));
        }
        assert_eq!(
            conditional_edge_prob(&ft, &map, d.labels(), 0, u0, u1).unwrap(),
            Some(1.0)
        );
    }

    #[test]
    fn independence_gives_zero_weight() {
        // P(f1_a | f0_a) = 0.5 within class 0
        let f0 = vec![Some("a"), Some("a"), Some("b"), Some("b"), Some("a")];
        let f1 = vec![Some("a"), Some("b"), Some("a"), Some("b"), Some("a")];
        let d = categorical_dataset(vec![f0, f1], vec![0, 0, 0, 0, 1]);
        let (map, ft) = abstract_dataset(&d).unwrap();
        let g = build_class_graph(&ft, &map, d.labels(), 0).unwrap();
        let (a0, a1) = (map.flip_index("f0_a").unwrap(), map.flip_index("f1_a").unwrap());
        let e = g.edges.iter().find(|e| e.from == a0 && e.to == a1).unwrap();
        assert_eq!(e.weight, 0.0);
    }

    fn complete_graph(n: usize, w: f64) -> ClassGraph {
        let edges = (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| Edge { from: a, to: b, weight: w }))
            .collect();
        ClassGraph::from_edges(0, n, edges)
    }

    #[test]
    fn pagerank_uniform_on_complete_graph() {
        let g = complete_graph(6, 0.3);
        let r = pagerank(&g, &PageRankConfig::default()).unwrap();
        for v in r {
            assert!((v - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    /// Dense power iteration with an explicit Google matrix.
    fn dense_pagerank(n: usize, edges: &[Edge], d: f64) -> Vec<f64> {
        let mut w = vec![vec![0.0; n]; n];
        for e in edges {
            w[e.from][e.to] += e.weight;
        }
        let mut g = vec![vec![0.0; n]; n]; // g[v][u]: prob u -> v
        for u in 0..n {
            let s: f64 = w[u].iter().sum();
            for v in 0..n {
                let m = if s > 0.0 { w[u][v] / s } else { 1.0 / n as f64 };
                g[v][u] = (1.0 - d) / n as f64 + d * m;
            }
        }
        let mut r = vec![1.0 / n as f64; n];
        for _ in 0..3000 {
            r = (0..n).map(|v| (0..n).map(|u| g[v][u] * r[u]).sum()).collect();
        }
        r
    }

    #[test]
    fn pagerank_three_node_oracle() {
        let edges = vec![
            Edge { from: 0, to: 1, weight: 0.4 },
            Edge { from: 0, to: 2, weight: 0.1 },
            Edge { from: 1, to: 2, weight: 0.25 },
            Edge { from: 2, to: 0, weight: 0.5 },
        ];
        let g = ClassGraph::from_edges(0, 3, edges.clone());
        let r = pagerank(&g, &PageRankConfig::default()).unwrap();
        let oracle = dense_pagerank(3, &edges, 0.85);
        for (a, b) in r.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn pagerank_dangling_conserves_mass() {
        let edges = vec![
            Edge { from: 0, to: 1, weight: 0.2 },
            Edge { from: 1, to: 2, weight: 0.3 },
            Edge { from: 2, to: 3, weight: 0.0 },
        ];
        let g = ClassGraph::from_edges(0, 4, edges);
        let r = pagerank(&g, &PageRankConfig::default()).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(r.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn pagerank_errors() {
        let g = complete_graph(3, 0.1);
        let bad = PageRankConfig { damping: 1.0, ..PageRankConfig::default() };
        assert!(matches!(pagerank(&g, &bad), Err(CactusError::PageRankParams(_))));
        let edges = vec![Edge { from: 0, to: 1, weight: 0.5 }, Edge { from: 1, to: 2, weight: 0.5 }];
        let g = ClassGraph::from_edges(0, 3, edges);
        let tight = PageRankConfig { max_iter: 2, ..PageRankConfig::default() };
        match pagerank(&g, &tight) {
            Err(CactusError::NoConvergence { iterations: 2, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degree_sums() {
        let edges = vec![
            Edge { from: 1, to: 0, weight: 0.2 },
            Edge { from: 2, to: 0, weight: 0.3 },
            Edge { from: 0, to: 3, weight: 0.1 },
        ];
        let g = ClassGraph::from_edges(0, 5, edges);
        let deg = total_degree(&g);
        assert!((deg[0] - 0.6).abs() < 1e-15);
        assert_eq!(deg[4], 0.0);
    }

    #[test]
    fn degree_matches_matrix_oracle_and_edge_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let mut edges = Vec::new();
        let mut adj = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.random_bool(0.4) {
                    let w = rng.random_range(0.0..0.5);
                    edges.push(Edge { from: a, to: b, weight: w });
                    adj[a][b] = w;
                }
            }
        }
        let deg = total_degree(&ClassGraph::from_edges(0, n, edges.clone()));
        for f in 0..n {
            let row: f64 = adj[f].iter().sum();
            let col: f64 = (0..n).map(|u| adj[u][f]).sum();
            assert!((deg[f] - (row + col)).abs() < 1e-12);
        }
        edges.reverse();
        let rev = total_degree(&ClassGraph::from_edges(0, n, edges.clone()));
        for (a, b) in deg.iter().zip(&rev) {
            assert!((a - b).abs() < 1e-12);
        }
        // node relabeling: pagerank follows the permutation
        let perm: Vec<usize> = (0..n).rev().collect();
        let relabeled: Vec<Edge> = edges
            .iter()
            .map(|e| Edge { from: perm[e.from], to: perm[e.to], weight: e.weight })
            .collect();
        let r = pagerank(&ClassGraph::from_edges(0, n, edges), &PageRankConfig::default()).unwrap();
        let rr = pagerank(&ClassGraph::from_edges(0, n, relabeled), &PageRankConfig::default()).unwrap();
        for f in 0..n {
            assert!((r[f] - rr[perm[f]]).abs() < 1e-12);
        }
    }

    #[test]
    fn degree_locality_under_level_split() {
        // Splitting level "a" of f1 into "a1"/"a2" leaves the degree that
        // f0_x collects from edges outside f1 untouched.
        let f0 = vec![Some("x"), Some("x"), Some("y"), Some("y"), Some("x"), Some("y"), Some("x"), Some("y")];
        let f2 = vec![Some("q"), Some("r"), Some("q"), Some("r"), Some("q"), Some("r"), Some("q"), Some("r")];
        let f1a = vec![Some("a"), Some("a"), Some("a"), Some("a"), Some("b"), Some("b"), Some("b"), Some("b")];
        let f1b = vec![Some("a1"), Some("a2"), Some("a1"), Some("a2"), Some("b"), Some("b"), Some("b"), Some("b")];
        let labels = vec![0, 0, 0, 0, 0, 0, 0, 1];
        let before = categorical_dataset(vec![f0.clone(), f1a, f2.clone()], labels.clone());
        let after = categorical_dataset(vec![f0, f1b, f2], labels);
        let deg_of = |d: &Dataset, name: &str| {
            let (map, ft) = abstract_dataset(d).unwrap();
            let g = build_class_graph(&ft, &map, d.labels(), 0).unwrap();
            let idx = map.flip_index(name).unwrap();
            let deg = total_degree(&g);
            // contributions from edges not touching f1
            let f1: Vec<usize> = map.feature("f1").unwrap().flip_range().collect();
            let mut local = 0.0;
            for e in &g.edges {
                if (e.from == idx || e.to == idx) && !f1.contains(&e.from) && !f1.contains(&e.to) {
                    local += e.weight;
                }
            }
            (deg[idx], local)
        };
        let (_, local_before) = deg_of(&before, "f0_x");
        let (_, local_after) = deg_of(&after, "f0_x");
        assert_eq!(local_before, local_after);
    }

    #[test]
    fn exports_write_expected_files() {
        let d = six_row_class();
        let (map, ft) = abstract_dataset(&d).unwrap();
        let graphs = build_graphs(&ft, &map, d.labels(), 2).unwrap();
        let c = centralities(&graphs, &PageRankConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_edge_csv(&graphs[0], &map, dir.path().join("e.csv")).unwrap();
        write_node_json(&graphs[0], &map, &c, dir.path().join("n.json")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
        assert!(csv.starts_with("from_flip,to_flip,weight\n"));
        assert_eq!(csv.lines().count(), graphs[0].edges.len() + 1);
        let nodes: Vec<NodeRecord> =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("n.json")).unwrap()).unwrap();
        assert_eq!(nodes.len(), map.n_flips());
        for row in &c.pagerank {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
