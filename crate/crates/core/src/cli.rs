//! Command-line front end: `train`, `classify`, `explain`, `refine`,
//! `study` and `synthesize`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::abstraction::{AbstractionMap, FeatureAbstraction};
use crate::classifier::{write_predictions, Metric};
use crate::explain::{confidence_analysis, emit_reports, rank_report, ConfidenceConfig};
use crate::harness::{
    cross_validate_metrics, run_fragmentation_study, synthesize, CvConfig, EvalResult, FragmentationSpec, SplitMode,
    SyntheticSpec,
};
use crate::knowledge_graph::PageRankConfig;
use crate::model::{fit, fit_detailed, Model, TrainConfig};
use crate::tabular::{apply_filter, load_csv, Dataset, FilterSpec, SchemaConfig};

#[derive(Debug, Parser)]
#[command(name = "cactus", version, about = "Explainable classification of fragmented tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write model.json, abstraction.csv and train.log.
    Train(TrainArgs),
    /// Predict labels and confidences for every row of a CSV.
    Classify(ClassifyArgs),
    /// Write feature ranks and confidence analyses.
    Explain(ExplainArgs),
    /// Filter features, retrain, and compare cross-validated accuracy.
    Refine(RefineArgs),
    /// Balanced accuracy under increasing removal of values.
    Study(StudyArgs),
    /// Write a synthetic cohort and its schema.
    Synthesize(SynthesizeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Schema config JSON (label column, kinds, missing markers).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Label column when no schema is given.
    #[arg(long, default_value = "stage")]
    pub label: String,
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    #[arg(long, default_value_t = 0.85)]
    pub damping: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
}

impl GraphArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            pagerank: PageRankConfig { damping: self.damping, tol: self.tol, ..PageRankConfig::default() },
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    /// Features to drop, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    /// Drop features missing in more than this fraction of rows.
    #[arg(long, default_value_t = 1.0)]
    pub max_missing: f64,
}

impl FilterArgs {
    fn spec(&self, top_k: Option<usize>) -> FilterSpec {
        FilterSpec {
            excluded: self.exclude.iter().cloned().collect::<BTreeSet<_>>(),
            max_missing_fraction: self.max_missing,
            keep_top_k_by_rank: top_k,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Test fraction of each repeated holdout split.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Disjoint stratified folds instead of repeated holdout.
    #[arg(long)]
    pub kfold: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl CvArgs {
    fn config(&self, train: TrainConfig) -> CvConfig {
        CvConfig {
            folds: self.folds,
            holdout: self.holdout,
            mode: if self.kfold { SplitMode::KFold } else { SplitMode::RepeatedHoldout },
            seed: self.seed,
            train,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = Metric::ALL)]
    pub metrics: Vec<Metric>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled CSV for the confidence analysis.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = Metric::ALL)]
    pub metrics: Vec<Metric>,
    /// Features shown per rank report.
    #[arg(long, default_value_t = 9)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Model whose schema is used to load the input; otherwise `--schema`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Keep the k best-ranked features after filtering.
    #[arg(long)]
    pub top_k_features: Option<usize>,
    /// Metrics compared; the first one ranks features.
    #[arg(long, value_delimiter = ',', default_values_t = [Metric::Cpr, Metric::Cpb, Metric::Cdg])]
    pub metrics: Vec<Metric>,
    #[command(flatten)]
    pub cv: CvArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Dataset to study; a synthetic cohort is generated when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value = "stage")]
    pub label: String,
    /// Synthetic spec JSON used when `--input` is absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.4, 0.6, 0.8])]
    pub levels: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = Metric::ALL)]
    pub metrics: Vec<Metric>,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub cv: CvArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Synthetic spec JSON; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub continuous: Option<usize>,
    #[arg(long)]
    pub categorical: Option<usize>,
    #[arg(long)]
    pub informative: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved settings of one invocation, recorded at the top of its log.
#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub inputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub metrics: Vec<Metric>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

impl RunConfig {
    fn new(command: &'static str, inputs: Vec<PathBuf>) -> Self {
        RunConfig {
            command,
            inputs,
            metrics: Vec::new(),
            train: None,
            filter: None,
            cv: None,
            levels: None,
            synthetic: None,
            top_k: None,
        }
    }
}

/// Output directory plus a log mirrored to the logger.
struct Run {
    out: PathBuf,
    inputs: Vec<PathBuf>,
    log: String,
}

impl Run {
    fn start(out: &Path, config: &RunConfig) -> anyhow::Result<Self> {
        for input in &config.inputs {
            if same_path(input, out) {
                bail!("output directory {} is also an input", out.display());
            }
        }
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut run = Run { out: out.to_path_buf(), inputs: config.inputs.clone(), log: String::new() };
        run.line(format!("config {}", serde_json::to_string(config)?));
        Ok(run)
    }

    fn line(&mut self, s: impl AsRef<str>) {
        log::info!("{}", s.as_ref());
        let _ = writeln!(self.log, "{}", s.as_ref());
    }

    /// Path of an output file, refusing to overwrite an input.
    fn path(&self, name: &str) -> anyhow::Result<PathBuf> {
        let p = self.out.join(name);
        if self.inputs.iter().any(|i| same_path(i, &p)) {
            bail!("refusing to overwrite input {}", p.display());
        }
        Ok(p)
    }

    fn finish(self, name: &str) -> anyhow::Result<()> {
        let p = self.path(name)?;
        std::fs::write(&p, &self.log).with_context(|| format!("writing {}", p.display()))
    }
}

fn same_path(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn schema_for(data: &DataArgs) -> anyhow::Result<SchemaConfig> {
    match &data.schema {
        Some(p) => SchemaConfig::from_json_file(p).context("reading schema config"),
        None => Ok(SchemaConfig::new(data.label.clone())),
    }
}

fn data_inputs(data: &DataArgs) -> Vec<PathBuf> {
    std::iter::once(data.input.clone()).chain(data.schema.clone()).collect()
}

fn abstraction_csv(map: &AbstractionMap) -> String {
    let mut s = String::from("feature,kind,threshold,partition,achieved_ba,levels\n");
    for f in map.features() {
        match &f.abstraction {
            FeatureAbstraction::Continuous(c) => {
                let _ = writeln!(s, "{},continuous,{},{},{},", f.name, c.threshold, c.partition, c.achieved_ba);
            }
            FeatureAbstraction::Categorical { levels } => {
                let _ = writeln!(s, "{},categorical,,,,{}", f.name, levels.join(";"));
            }
        }
    }
    for d in map.dropped() {
        let _ = writeln!(s, "{},dropped,,,,{}", d.feature, d.reason);
    }
    s
}

fn fmt_ba(ba: f64) -> String {
    format!("{ba:.6}")
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::new("train", data_inputs(&a.data));
    cfg.train = Some(a.graph.train_config());
    cfg.filter = Some(a.filter.spec(None));
    let mut run = Run::start(&a.out, &cfg)?;
    let d = load_csv(&a.data.input, &schema_for(&a.data)?).context("loading dataset")?;
    let d = apply_filter(&d, &a.filter.spec(None), None).context("filtering features")?;
    run.line(format!("rows {} features {} classes {:?}", d.n_rows(), d.table().n_features(), d.class_names()));
    let fitted = fit_detailed(&d, &a.graph.train_config()).context("training model")?;
    let model = fitted.model.with_missing_markers(schema_for(&a.data)?.missing_markers);
    run.line(format!(
        "flips {} kept features {} dropped {}",
        model.profile.n_flips(),
        model.profile.abstraction.features().len(),
        model.profile.abstraction.dropped().len()
    ));
    for m in Metric::ALL {
        let ba = model.evaluate(&d, m).context("scoring training data")?;
        run.line(format!("training_ba {m} {}", fmt_ba(ba)));
    }
    model.save(run.path("model.json")?).context("writing model")?;
    std::fs::write(run.path("abstraction.csv")?, abstraction_csv(&model.profile.abstraction))?;
    run.finish("train.log")
}

pub fn cmd_classify(a: &ClassifyArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::new("classify", vec![a.model.clone(), a.input.clone()]);
    cfg.metrics = a.metrics.clone();
    let mut run = Run::start(&a.out, &cfg)?;
    let model = Model::load(&a.model).context("loading model")?;
    let (table, labels) = model.load_input(&a.input).context("loading input")?;
    let (ft, unseen) = model.encode(&table).context("encoding input")?;
    for u in &unseen {
        run.line(format!("unseen level row {} feature {} level {}", u.row.map(|r| r.to_string()).unwrap_or_default(), u.feature, u.level));
    }
    for &m in &a.metrics {
        let results = crate::classifier::classify_dataset(&ft, &model.profile, m).context("classifying")?;
        write_predictions(&results, model.class_names(), run.path(&format!("predictions_{m}.csv"))?)?;
        let degenerate = results.iter().filter(|r| r.degenerate).count();
        run.line(format!("{m} rows {} degenerate {degenerate}", results.len()));
        if let Some(labels) = &labels {
            let pred: Vec<usize> = results.iter().map(|r| r.label).collect();
            match crate::harness::balanced_accuracy(&pred, labels, model.n_classes()) {
                Ok(ba) => run.line(format!("balanced_accuracy {m} {}", fmt_ba(ba))),
                Err(crate::error::CactusError::ClassAbsent(c)) => {
                    run.line(format!("balanced_accuracy {m} NA class {} absent", model.class_names()[c]))
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    run.finish("classify.log")
}

pub fn cmd_explain(a: &ExplainArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::new("explain", vec![a.model.clone(), a.input.clone()]);
    cfg.metrics = a.metrics.clone();
    cfg.top_k = Some(a.top_k);
    let mut run = Run::start(&a.out, &cfg)?;
    let model = Model::load(&a.model).context("loading model")?;
    let (table, labels) = model.load_input(&a.input).context("loading input")?;
    let Some(labels) = labels else {
        bail!("explain needs the label column `{}` in the input", model.schema.label_column);
    };
    let (ft, _) = model.encode(&table)?;
    let mut ranks = Vec::new();
    let mut confidences = Vec::new();
    for &m in &a.metrics {
        let results = crate::classifier::classify_dataset(&ft, &model.profile, m)?;
        let report = confidence_analysis(&results, &labels, model.n_classes(), &ConfidenceConfig::default())
            .context("confidence analysis")?;
        for c in &report.coverage_thresholds {
            run.line(format!(
                "{m} coverage {} threshold {} balanced_accuracy {}",
                c.coverage,
                c.threshold,
                c.balanced_accuracy.map(fmt_ba).unwrap_or_else(|| "NA".into())
            ));
        }
        let r = rank_report(&model.profile, m, a.top_k);
        run.line(format!("{m} top features {}", r.feature_names().join(",")));
        ranks.push(r);
        confidences.push(report);
    }
    for p in emit_reports(&ranks, &confidences, &a.out)? {
        run.line(format!("wrote {}", p.file_name().unwrap_or_default().to_string_lossy()));
    }
    run.finish("explain.log")
}

#[derive(Serialize)]
struct RefineReport {
    whole: Vec<EvalResult>,
    refined: Vec<EvalResult>,
    top_k: Option<Vec<EvalResult>>,
    refined_features: Vec<String>,
}

pub fn cmd_refine(a: &RefineArgs) -> anyhow::Result<()> {
    if a.metrics.is_empty() {
        bail!("at least one metric is required");
    }
    let mut inputs = data_inputs(&a.data);
    inputs.extend(a.model.clone());
    let train = a.graph.train_config();
    let mut cfg = RunConfig::new("refine", inputs);
    cfg.metrics = a.metrics.clone();
    cfg.train = Some(train);
    cfg.filter = Some(a.filter.spec(a.top_k_features));
    cfg.cv = Some(a.cv.config(train));
    let mut run = Run::start(&a.out, &cfg)?;
    let schema = match &a.model {
        Some(p) if a.data.schema.is_none() => Model::load(p).context("loading model")?.schema.schema_config(),
        _ => schema_for(&a.data)?,
    };
    let whole = load_csv(&a.data.input, &schema).context("loading dataset")?;
    let refined = apply_filter(&whole, &a.filter.spec(None), None).context("filtering features")?;
    run.line(format!(
        "features whole {} refined {}",
        whole.table().n_features(),
        refined.table().n_features()
    ));
    let final_data: Dataset = match a.top_k_features {
        Some(k) => {
            let ranker = fit(&refined, &train).context("training ranking model")?;
            let report = rank_report(&ranker.profile, a.metrics[0], usize::MAX);
            let only_top = FilterSpec { keep_top_k_by_rank: Some(k), ..FilterSpec::default() };
            let top = apply_filter(&refined, &only_top, Some(&report)).context("keeping top features")?;
            run.line(format!("top {k} by {}: {}", a.metrics[0], top.table().schema().iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(",")));
            top
        }
        None => refined.clone(),
    };
    let cv = a.cv.config(train);
    let none = FragmentationSpec::none();
    let whole_ba = cross_validate_metrics(&whole, &a.metrics, &cv, &none).context("evaluating whole dataset")?;
    let refined_ba = cross_validate_metrics(&refined, &a.metrics, &cv, &none).context("evaluating refined dataset")?;
    let top_ba = match a.top_k_features {
        Some(_) => Some(cross_validate_metrics(&final_data, &a.metrics, &cv, &none).context("evaluating top features")?),
        None => None,
    };

    let mut table = String::from("metric,whole_dataset,refined_dataset");
    if let Some(k) = a.top_k_features {
        let _ = write!(table, ",top_{k}_ranks");
    }
    table.push('\n');
    for (i, m) in a.metrics.iter().enumerate() {
        let _ = write!(table, "{m},{},{}", whole_ba[i].summary(), refined_ba[i].summary());
        if let Some(t) = &top_ba {
            let _ = write!(table, ",{}", t[i].summary());
        }
        table.push('\n');
        run.line(format!(
            "{m} whole {} refined {}{}",
            fmt_ba(whole_ba[i].mean),
            fmt_ba(refined_ba[i].mean),
            top_ba.as_ref().map(|t| format!(" top {}", fmt_ba(t[i].mean))).unwrap_or_default()
        ));
    }
    std::fs::write(run.path("refine.csv")?, table)?;
    let report = RefineReport {
        whole: whole_ba,
        refined: refined_ba,
        top_k: top_ba,
        refined_features: final_data.table().schema().iter().map(|s| s.name.clone()).collect(),
    };
    std::fs::write(run.path("refine.json")?, serde_json::to_string_pretty(&report)? + "\n")?;

    final_data.write_csv(run.path("refined.csv")?)?;
    let mut refined_schema = final_data.schema_config();
    refined_schema.missing_markers = schema.missing_markers.clone();
    refined_schema.write_json(run.path("refined_schema.json")?)?;
    let model = fit(&final_data, &train).context("retraining")?.with_missing_markers(schema.missing_markers);
    model.save(run.path("model.json")?)?;
    run.finish("refine.log")
}

pub fn cmd_study(a: &StudyArgs) -> anyhow::Result<()> {
    let train = a.graph.train_config();
    let mut inputs: Vec<PathBuf> = a.input.iter().chain(&a.schema).chain(&a.spec).cloned().collect();
    inputs.sort();
    let mut cfg = RunConfig::new("study", inputs);
    cfg.metrics = a.metrics.clone();
    cfg.train = Some(train);
    cfg.cv = Some(a.cv.config(train));
    cfg.levels = Some(a.levels.clone());
    let d = match &a.input {
        Some(input) => {
            let schema = match &a.schema {
                Some(p) => SchemaConfig::from_json_file(p)?,
                None => SchemaConfig::new(a.label.clone()),
            };
            load_csv(input, &schema).context("loading dataset")?
        }
        None => {
            let mut spec = match &a.spec {
                Some(p) => read_spec(p)?,
                None => SyntheticSpec::default(),
            };
            if a.spec.is_none() {
                spec.seed = a.cv.seed;
            }
            let d = synthesize(&spec).context("generating synthetic data")?;
            cfg.synthetic = Some(spec);
            d
        }
    };
    let mut run = Run::start(&a.out, &cfg)?;
    let table = run_fragmentation_study(&d, &a.levels, &a.metrics, &a.cv.config(train)).context("running study")?;
    for (li, level) in a.levels.iter().enumerate() {
        let mut line = format!("level {level}");
        for &m in &a.metrics {
            let _ = write!(line, " {m} {}", table.cell(li, m).map(|c| c.summary()).unwrap_or_default());
        }
        let _ = write!(line, " MAJORITY {}", table.baselines[li].summary());
        run.line(line);
    }
    std::fs::write(run.path("study.csv")?, table.to_csv())?;
    std::fs::write(run.path("study.svg")?, table.to_svg())?;
    run.finish("study.log")
}

fn read_spec(p: &Path) -> anyhow::Result<SyntheticSpec> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

pub fn cmd_synthesize(a: &SynthesizeArgs) -> anyhow::Result<()> {
    let mut spec = match &a.spec {
        Some(p) => read_spec(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.rows {
        spec.n_rows = v;
    }
    if let Some(v) = a.continuous {
        spec.n_continuous = v;
    }
    if let Some(v) = a.categorical {
        spec.n_categorical = v;
    }
    if let Some(v) = a.informative {
        spec.n_informative = v;
    }
    if let Some(v) = a.separation {
        spec.separation = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    let mut cfg = RunConfig::new("synthesize", a.spec.iter().cloned().collect());
    cfg.synthetic = Some(spec.clone());
    let mut run = Run::start(&a.out, &cfg)?;
    let d = synthesize(&spec).context("generating synthetic data")?;
    d.write_csv(run.path("synthetic.csv")?)?;
    d.schema_config().write_json(run.path("synthetic_schema.json")?)?;
    run.line(format!("rows {} features {}", d.n_rows(), d.table().n_features()));
    run.line(format!("informative {}", spec.informative_names().join(",")));
    run.finish("synthesize.log")
}

/// Size the global worker pool from `CACTUS_THREADS`.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CACTUS_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("CACTUS_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Study(a) => cmd_study(a),
        Command::Synthesize(a) => cmd_synthesize(a),
    }
}
