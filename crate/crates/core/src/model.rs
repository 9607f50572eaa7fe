//! End-to-end training and the JSON model file.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstraction::{abstract_dataset, encode_table, FlipTable, UnseenLevel};
use crate::classifier::{classify_dataset, train, ClassificationResult, Metric, Normalization, SignificanceProfile};
use crate::error::{CactusError, Result};
use crate::harness::balanced_accuracy;
use crate::knowledge_graph::{build_graphs, centralities, CentralityTable, ClassGraph, PageRankConfig};
use crate::tabular::{index_labels, read_csv, write_text, Dataset, FeatureKind, SchemaConfig, Table};

pub const MODEL_FORMAT: &str = "cactus-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainConfig {
    pub pagerank: PageRankConfig,
    pub normalization: Normalization,
}

/// Input layout the model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSchema {
    pub label_column: String,
    pub missing_markers: Vec<String>,
    pub continuous: Vec<String>,
    pub categorical: Vec<String>,
}

impl ModelSchema {
    /// Schema config that loads new inputs with the training kinds.
    pub fn schema_config(&self) -> SchemaConfig {
        SchemaConfig {
            label_column: self.label_column.clone(),
            missing_markers: self.missing_markers.clone(),
            categorical: self.categorical.clone(),
            continuous: self.continuous.clone(),
            excluded: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub schema: ModelSchema,
    pub config: TrainConfig,
    pub profile: SignificanceProfile,
}

/// Everything produced while fitting, for inspection.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub flip_table: FlipTable,
    pub graphs: Vec<ClassGraph>,
    pub centralities: CentralityTable,
}

/// Abstraction, class graphs, centralities, then significance profile.
pub fn fit_detailed(d: &Dataset, cfg: &TrainConfig) -> Result<Fitted> {
    cfg.pagerank.validate()?;
    let (map, ft) = abstract_dataset(d)?;
    let graphs = build_graphs(&ft, &map, d.labels(), d.n_classes())?;
    let cent = centralities(&graphs, &cfg.pagerank)?;
    let profile = train(&ft, &map, d.class_names(), &graphs, &cent, cfg.normalization)?;
    let mut schema = ModelSchema {
        label_column: d.label_column().to_string(),
        missing_markers: SchemaConfig::new("").missing_markers,
        continuous: Vec::new(),
        categorical: Vec::new(),
    };
    for s in d.table().schema() {
        match s.kind {
            FeatureKind::Continuous => schema.continuous.push(s.name.clone()),
            FeatureKind::Categorical => schema.categorical.push(s.name.clone()),
        }
    }
    Ok(Fitted {
        model: Model {
            format: MODEL_FORMAT.to_string(),
            schema,
            config: *cfg,
            profile,
        },
        flip_table: ft,
        graphs,
        centralities: cent,
    })
}

pub fn fit(d: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    fit_detailed(d, cfg).map(|f| f.model)
}

impl Model {
    pub fn class_names(&self) -> &[String] {
        &self.profile.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.profile.n_classes()
    }

    pub fn with_missing_markers(mut self, markers: Vec<String>) -> Self {
        self.schema.missing_markers = markers;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CactusError::io(path, e))?;
        let model: Model =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| CactusError::json(path, e))?;
        if model.format != MODEL_FORMAT {
            return Err(CactusError::SchemaMismatch(format!(
                "unsupported model format `{}`",
                model.format
            )));
        }
        Ok(model)
    }

    pub fn encode(&self, table: &Table) -> Result<(FlipTable, Vec<UnseenLevel>)> {
        encode_table(table, &self.profile.abstraction)
    }

    pub fn predict(&self, table: &Table, metric: Metric) -> Result<Vec<ClassificationResult>> {
        let (ft, _) = self.encode(table)?;
        classify_dataset(&ft, &self.profile, metric)
    }

    /// Balanced accuracy on a labelled dataset whose classes match the model.
    pub fn evaluate(&self, d: &Dataset, metric: Metric) -> Result<f64> {
        self.check_classes(d.class_names())?;
        let pred: Vec<usize> = self.predict(d.table(), metric)?.iter().map(|r| r.label).collect();
        balanced_accuracy(&pred, d.labels(), self.n_classes())
    }

    fn check_classes(&self, names: &[String]) -> Result<()> {
        if names != self.class_names() {
            return Err(CactusError::SchemaMismatch(format!(
                "classes {names:?} differ from the model's {:?}",
                self.class_names()
            )));
        }
        Ok(())
    }

    /// Load a CSV for this model; labels are mapped onto the model's classes
    /// when the label column is present.
    pub fn load_input(&self, path: impl AsRef<Path>) -> Result<(Table, Option<Vec<usize>>)> {
        let raw = read_csv(path, &self.schema.schema_config())?;
        let labels = raw
            .labels
            .map(|l| index_labels(&l, self.class_names()))
            .transpose()?;
        Ok((raw.table, labels))
    }
}
