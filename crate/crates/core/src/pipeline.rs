//! End-to-end batch workflow and the file-level building blocks behind the
//! command-line subcommands.
//!
//! A run goes ingest -> clean -> label -> split -> fit both classifiers ->
//! evaluate both on the shared test set -> compare, and writes every artifact
//! into one output directory:
//!
//! ```text
//! cleaned.csv  tree.model  knn.model  eval_tree.{txt,json}  eval_knn.{txt,json}  comparison.{txt,json}
//! ```
//!
//! Nothing in the artifacts depends on wall-clock time or the output path, so
//! identical configurations produce identical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{self, compare, ComparisonReport, EvalReport, ModelInfo};
use crate::features::{label_dataset, BinTable, Feature, FeatureVector, LabeledInstance, PriceClass};
use crate::ingest::{self, clean, generate_synthetic, read_listings, write_listings, CleanStats, Dataset, SynthConfig};
use crate::knn::{fit_knn, FeatureWeights, KnnParams};
use crate::model::{Classifier, ModelFile, ModelMetadata};
use crate::split::{stratified_split, SplitPair, SplitParams};
use crate::tree::{fit_tree, Criterion, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Clean,
    Label,
    Split,
    Train,
    Predict,
    Evaluate,
    Compare,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Data,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Internal => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl fmt::Display) -> PipelineError {
        PipelineError {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn usage(message: impl fmt::Display) -> PipelineError {
        Self::new(Stage::Config, ErrorKind::Usage, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Single-line JSON record for stderr.
    pub fn to_record(&self) -> String {
        serde_json::json!({
            "error": self.message,
            "stage": self.stage,
            "kind": self.kind,
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

fn data_err(stage: Stage) -> impl FnOnce(String) -> PipelineError {
    move |m| PipelineError::new(stage, ErrorKind::Data, m)
}

trait StageExt<T> {
    fn at(self, stage: Stage, kind: ErrorKind) -> Result<T, PipelineError>;
}

impl<T, E: fmt::Display> StageExt<T> for Result<T, E> {
    fn at(self, stage: Stage, kind: ErrorKind) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, kind, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Structured,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Text => "txt",
            ReportFormat::Structured => "json",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "structured" | "json" => Ok(ReportFormat::Structured),
            other => Err(PipelineError::usage(format!(
                "unknown report format `{other}` (expected text or structured)"
            ))),
        }
    }
}

/// Flat key-value settings as read from a config file or command-line flags.
/// Every field is optional so that sources can be layered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSettings {
    pub input: Option<PathBuf>,
    pub synth_n: Option<usize>,
    pub synth_noise: Option<f64>,
    pub synth_seed: Option<u64>,
    pub synth_locations: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub train_ratio: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<String>,
    pub price_lower: Option<u64>,
    pub price_upper: Option<u64>,
    pub land_lower: Option<f64>,
    pub land_upper: Option<f64>,
    pub building_lower: Option<f64>,
    pub building_upper: Option<f64>,
    pub tree_max_depth: Option<usize>,
    pub tree_min_leaf: Option<usize>,
    pub tree_min_gain: Option<f64>,
    pub tree_criterion: Option<String>,
    pub knn_k: Option<usize>,
    pub knn_use_location: Option<bool>,
    pub knn_weight_building_size: Option<f64>,
    pub knn_weight_land_size: Option<f64>,
    pub knn_weight_bedroom: Option<f64>,
    pub knn_weight_bathroom: Option<f64>,
    pub knn_weight_location: Option<f64>,
}

macro_rules! overlay_fields {
    ($base:expr, $top:expr, $($field:ident),* $(,)?) => {
        PipelineSettings { $($field: $top.$field.or($base.$field),)* }
    };
}

impl PipelineSettings {
    pub fn from_toml(text: &str) -> Result<PipelineSettings, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::usage(format!("config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<PipelineSettings, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Values set in `top` win over values in `self`.
    pub fn overlay(self, top: PipelineSettings) -> PipelineSettings {
        overlay_fields!(
            self, top, input, synth_n, synth_noise, synth_seed, synth_locations, seed,
            train_ratio, out_dir, format, price_lower, price_upper, land_lower, land_upper,
            building_lower, building_upper, tree_max_depth, tree_min_leaf, tree_min_gain,
            tree_criterion, knn_k, knn_use_location, knn_weight_building_size,
            knn_weight_land_size, knn_weight_bedroom, knn_weight_bathroom, knn_weight_location,
        )
    }

    pub fn bins(&self) -> Result<BinTable, PipelineError> {
        let d = BinTable::default();
        let bins = BinTable {
            price_lower: self.price_lower.unwrap_or(d.price_lower),
            price_upper: self.price_upper.unwrap_or(d.price_upper),
            land_lower: self.land_lower.unwrap_or(d.land_lower),
            land_upper: self.land_upper.unwrap_or(d.land_upper),
            building_lower: self.building_lower.unwrap_or(d.building_lower),
            building_upper: self.building_upper.unwrap_or(d.building_upper),
        };
        bins.validate().map_err(PipelineError::usage)?;
        Ok(bins)
    }

    pub fn tree_params(&self) -> Result<TreeParams, PipelineError> {
        let d = TreeParams::default();
        let params = TreeParams {
            max_depth: self.tree_max_depth.unwrap_or(d.max_depth),
            min_leaf: self.tree_min_leaf.unwrap_or(d.min_leaf),
            min_gain: self.tree_min_gain.unwrap_or(d.min_gain),
            criterion: match &self.tree_criterion {
                Some(c) => c.parse::<Criterion>().map_err(PipelineError::usage)?,
                None => d.criterion,
            },
        };
        params.validate().map_err(PipelineError::usage)?;
        Ok(params)
    }

    pub fn knn_params(&self) -> Result<KnnParams, PipelineError> {
        let d = KnnParams::default();
        let mut weights = FeatureWeights::default();
        for (feature, w) in [
            (Feature::BuildingSize, self.knn_weight_building_size),
            (Feature::LandSize, self.knn_weight_land_size),
            (Feature::Bedroom, self.knn_weight_bedroom),
            (Feature::Bathroom, self.knn_weight_bathroom),
            (Feature::Location, self.knn_weight_location),
        ] {
            if let Some(w) = w {
                weights.set(feature, w);
            }
        }
        let params = KnnParams {
            k: self.knn_k.unwrap_or(d.k),
            weights,
            use_location: self.knn_use_location.unwrap_or(d.use_location),
        };
        params.validate().map_err(PipelineError::usage)?;
        Ok(params)
    }

    /// Split parameters; the seed has no default.
    pub fn split_params(&self) -> Result<SplitParams, PipelineError> {
        let seed = self
            .seed
            .ok_or_else(|| PipelineError::usage("a split seed is required (seed / --seed)"))?;
        let params = SplitParams {
            train_ratio: self.train_ratio.unwrap_or(SplitParams::DEFAULT_TRAIN_RATIO),
            seed,
        };
        params.validate().map_err(PipelineError::usage)?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SynthConfig),
}

impl DataSource {
    pub fn describe(&self) -> String {
        match self {
            DataSource::Csv(p) => format!("listings CSV {}", p.display()),
            DataSource::Synthetic(c) => format!(
                "synthetic listings (n={}, noise_rate={}, seed={})",
                c.n, c.noise_rate, c.seed
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: DataSource,
    pub bins: BinTable,
    pub split: SplitParams,
    pub tree: TreeParams,
    pub knn: KnnParams,
    pub out_dir: PathBuf,
    pub format: ReportFormat,
}

impl PipelineConfig {
    pub fn from_settings(s: &PipelineSettings) -> Result<PipelineConfig, PipelineError> {
        let synth_keys = s.synth_n.is_some() || s.synth_noise.is_some() || s.synth_seed.is_some();
        let source = match (&s.input, synth_keys) {
            (Some(_), true) => {
                return Err(PipelineError::usage(
                    "give either an input CSV or synthetic settings, not both",
                ))
            }
            (None, false) => {
                return Err(PipelineError::usage(
                    "no data source: set input or synth_n/synth_seed",
                ))
            }
            (Some(path), false) => DataSource::Csv(path.clone()),
            (None, true) => {
                let n = s.synth_n.ok_or_else(|| PipelineError::usage("synth_n is required"))?;
                let seed = s
                    .synth_seed
                    .ok_or_else(|| PipelineError::usage("synth_seed is required"))?;
                let mut cfg = SynthConfig::new(n, s.synth_noise.unwrap_or(0.0), seed);
                if let Some(pool) = &s.synth_locations {
                    cfg.location_pool = pool.clone();
                }
                cfg.validate().map_err(PipelineError::usage)?;
                DataSource::Synthetic(cfg)
            }
        };
        let out_dir = s
            .out_dir
            .clone()
            .ok_or_else(|| PipelineError::usage("out_dir is required"))?;
        let format = match &s.format {
            Some(f) => f.parse()?,
            None => ReportFormat::default(),
        };
        Ok(PipelineConfig {
            source,
            bins: s.bins()?,
            split: s.split_params()?,
            tree: s.tree_params()?,
            knn: s.knn_params()?,
            out_dir,
            format,
        })
    }

    /// Canonical `key=value` rendering of every setting that affects results.
    /// The output directory is left out.
    pub fn canonical(&self) -> String {
        let mut kv: Vec<(String, String)> = Vec::new();
        match &self.source {
            DataSource::Csv(p) => kv.push(("input".into(), p.display().to_string())),
            DataSource::Synthetic(c) => {
                kv.push(("synth_n".into(), c.n.to_string()));
                kv.push(("synth_noise".into(), c.noise_rate.to_string()));
                kv.push(("synth_seed".into(), c.seed.to_string()));
                kv.push(("synth_locations".into(), c.location_pool.join("|")));
            }
        }
        let b = &self.bins;
        kv.extend([
            ("seed".into(), self.split.seed.to_string()),
            ("train_ratio".into(), self.split.train_ratio.to_string()),
            ("price_lower".into(), b.price_lower.to_string()),
            ("price_upper".into(), b.price_upper.to_string()),
            ("land_lower".into(), b.land_lower.to_string()),
            ("land_upper".into(), b.land_upper.to_string()),
            ("building_lower".into(), b.building_lower.to_string()),
            ("building_upper".into(), b.building_upper.to_string()),
            ("tree_max_depth".into(), self.tree.max_depth.to_string()),
            ("tree_min_leaf".into(), self.tree.min_leaf.to_string()),
            ("tree_min_gain".into(), self.tree.min_gain.to_string()),
            ("tree_criterion".into(), format!("{:?}", self.tree.criterion).to_lowercase()),
            ("knn_k".into(), self.knn.k.to_string()),
            ("knn_use_location".into(), self.knn.use_location.to_string()),
        ]);
        for f in Feature::ALL {
            kv.push((format!("knn_weight_{f}"), self.knn.weights.get(f).to_string()));
        }
        kv.push((
            "format".into(),
            format!("{:?}", self.format).to_lowercase(),
        ));
        kv.into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn listings_csv(records: &[ingest::ListingRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_listings(records, &mut buf).expect("writing to memory");
    buf
}

/// SHA-256 of the dataset's canonical CSV form.
pub fn dataset_fingerprint(data: &Dataset) -> String {
    hex_digest(&listings_csv(&data.records))
}

/// Loaded and cleaned input, with bookkeeping for the reports.
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub dataset: Dataset,
    pub incomplete_rows: usize,
    pub stats: CleanStats,
}

pub fn load_listings_file(path: &Path) -> Result<IngestOutcome, PipelineError> {
    let file = fs::File::open(path)
        .map_err(|e| PipelineError::new(Stage::Ingest, ErrorKind::Data, format!("{}: {e}", path.display())))?;
    let raw = read_listings(std::io::BufReader::new(file))
        .map_err(|e| PipelineError::new(Stage::Ingest, ErrorKind::Data, format!("{}: {e}", path.display())))?;
    let (dataset, stats) = clean(raw.records, path.display().to_string()).at(Stage::Clean, ErrorKind::Data)?;
    Ok(IngestOutcome {
        dataset,
        incomplete_rows: raw.incomplete_rows,
        stats,
    })
}

pub fn load_source(source: &DataSource) -> Result<IngestOutcome, PipelineError> {
    match source {
        DataSource::Csv(path) => load_listings_file(path),
        DataSource::Synthetic(cfg) => {
            let generated = generate_synthetic(cfg).at(Stage::Ingest, ErrorKind::Usage)?;
            let provenance = generated.provenance.clone();
            let (dataset, stats) = clean(generated.records, provenance).at(Stage::Clean, ErrorKind::Data)?;
            Ok(IngestOutcome {
                dataset,
                incomplete_rows: 0,
                stats,
            })
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| {
        PipelineError::new(Stage::Write, ErrorKind::Internal, format!("{}: {e}", path.display()))
    })
}

pub fn write_listings_file(path: &Path, records: &[ingest::ListingRecord]) -> Result<(), PipelineError> {
    write_file(path, &listings_csv(records))
}

pub fn render_eval(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => report.render_text(),
        ReportFormat::Structured => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

pub fn render_comparison(report: &ComparisonReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => report.render_text(),
        ReportFormat::Structured => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

/// Fits one classifier kind on the training half.
pub fn train_classifier(
    kind: ModelKind,
    train: &[LabeledInstance],
    tree: &TreeParams,
    knn: &KnnParams,
) -> Result<Classifier, PipelineError> {
    Ok(match kind {
        ModelKind::Tree => Classifier::DecisionTree(fit_tree(train, tree).at(Stage::Train, ErrorKind::Data)?),
        ModelKind::Knn => Classifier::Knn(fit_knn(train, knn).at(Stage::Train, ErrorKind::Data)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tree,
    Knn,
}

impl std::str::FromStr for ModelKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tree" | "decision_tree" => Ok(ModelKind::Tree),
            "knn" | "k-nn" => Ok(ModelKind::Knn),
            other => Err(PipelineError::usage(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Classifies every instance of `test` and builds the evaluation report.
pub fn evaluate_model(
    model: &ModelFile,
    test: &[LabeledInstance],
    provenance: BTreeMap<String, String>,
) -> Result<EvalReport, PipelineError> {
    let mut truths = Vec::with_capacity(test.len());
    let mut preds = Vec::with_capacity(test.len());
    for inst in test {
        let p = model.classifier.predict(inst).at(Stage::Predict, ErrorKind::Data)?;
        truths.push(inst.label);
        preds.push(p.class());
    }
    let cm = eval::accumulate(&truths, &preds).at(Stage::Evaluate, ErrorKind::Data)?;
    EvalReport::new(model.info(), cm, eval::test_set_fingerprint(test), provenance)
        .at(Stage::Evaluate, ErrorKind::Data)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub clean_stats: CleanStats,
    pub incomplete_rows: usize,
    pub class_counts: [usize; 3],
    pub split: SplitPair,
    pub tree: ModelFile,
    pub knn: ModelFile,
    pub tree_report: EvalReport,
    pub knn_report: EvalReport,
    pub comparison: ComparisonReport,
    pub artifacts: Vec<PathBuf>,
}

/// Runs the full workflow and writes its artifacts under `config.out_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    let ingested = load_source(&config.source)?;
    let dataset = &ingested.dataset;
    let cleaned_csv = listings_csv(&dataset.records);
    let input_fingerprint = hex_digest(&cleaned_csv);

    let (instances, class_counts) = label_dataset(dataset, &config.bins);
    let split = stratified_split(&instances, &config.split).at(Stage::Split, ErrorKind::Data)?;

    let metadata = ModelMetadata {
        data_source: config.source.describe(),
        train_size: split.train.len(),
        train_fingerprint: eval::test_set_fingerprint(&split.train),
        split_seed: Some(config.split.seed),
        bins: config.bins,
    };
    let tree = ModelFile::new(
        metadata.clone(),
        train_classifier(ModelKind::Tree, &split.train, &config.tree, &config.knn)?,
    );
    let knn = ModelFile::new(
        metadata,
        train_classifier(ModelKind::Knn, &split.train, &config.tree, &config.knn)?,
    );

    let mut provenance = BTreeMap::new();
    provenance.insert("config".to_string(), config.canonical());
    provenance.insert("seed".to_string(), config.split.seed.to_string());
    provenance.insert("input_fingerprint".to_string(), input_fingerprint);
    provenance.insert("data_source".to_string(), config.source.describe());
    provenance.insert(
        "cleaning".to_string(),
        format!("{}, incomplete_rows={}", ingested.stats, ingested.incomplete_rows),
    );
    provenance.insert(
        "class_counts".to_string(),
        format!("A={}, B={}, C={}", class_counts[0], class_counts[1], class_counts[2]),
    );
    provenance.insert(
        "split".to_string(),
        format!(
            "train={}, test={}, train_ratio={}",
            split.train.len(),
            split.test.len(),
            config.split.train_ratio
        ),
    );

    let tree_report = evaluate_model(&tree, &split.test, provenance.clone())?;
    let knn_report = evaluate_model(&knn, &split.test, provenance)?;
    let comparison = compare(&tree_report, &knn_report).at(Stage::Compare, ErrorKind::Internal)?;

    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| {
        PipelineError::new(Stage::Write, ErrorKind::Internal, format!("{}: {e}", out.display()))
    })?;
    let ext = config.format.extension();
    let files: Vec<(PathBuf, Vec<u8>)> = vec![
        (out.join("cleaned.csv"), cleaned_csv),
        (out.join("tree.model"), tree.to_json().into_bytes()),
        (out.join("knn.model"), knn.to_json().into_bytes()),
        (out.join(format!("eval_tree.{ext}")), render_eval(&tree_report, config.format).into_bytes()),
        (out.join(format!("eval_knn.{ext}")), render_eval(&knn_report, config.format).into_bytes()),
        (
            out.join(format!("comparison.{ext}")),
            render_comparison(&comparison, config.format).into_bytes(),
        ),
    ];
    let mut artifacts = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        write_file(&path, &bytes)?;
        artifacts.push(path);
    }

    Ok(PipelineOutcome {
        clean_stats: ingested.stats,
        incomplete_rows: ingested.incomplete_rows,
        class_counts,
        split,
        tree,
        knn,
        tree_report,
        knn_report,
        comparison,
        artifacts,
    })
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub features: FeatureVector,
    pub truth: Option<PriceClass>,
    pub predicted: PriceClass,
    pub explanation: String,
}

pub const PREDICTION_HEADER: [&str; 8] = [
    "location",
    "building_size",
    "land_size",
    "bedroom",
    "bathroom",
    "truth",
    "predicted",
    "explanation",
];

fn opt_num(field: &'static str, text: Option<&str>) -> Result<Option<f64>, String> {
    match text.map(str::trim).filter(|t| !t.is_empty()) {
        None => Ok(None),
        Some(t) => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| format!("malformed value `{t}` in column `{field}`")),
    }
}

/// Reads query rows. Feature columns may be absent or blank; a `price`
/// column, when present, supplies the truth label.
pub fn read_queries(path: &Path, bins: &BinTable) -> Result<Vec<(FeatureVector, Option<PriceClass>)>, PipelineError> {
    let fail = data_err(Stage::Ingest);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| data_err(Stage::Ingest)(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let cols: Vec<Option<usize>> = ["location", "building_size", "land_size", "bedroom", "bathroom", "price"]
        .iter()
        .map(|n| col(n))
        .collect();
    let mut out = Vec::new();
    for (row_no, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| data_err(Stage::Ingest)(e.to_string()))?;
        let get = |i: usize| cols[i].and_then(|c| row.get(c));
        let line = row_no + 2;
        let with_line = |m: String| data_err(Stage::Ingest)(format!("line {line}: {m}"));
        let features = FeatureVector {
            location: get(0).map(str::trim).filter(|s| !s.is_empty()).map(String::from),
            building_size: opt_num("building_size", get(1)).map_err(with_line)?,
            land_size: opt_num("land_size", get(2)).map_err(with_line)?,
            bedroom: opt_num("bedroom", get(3)).map_err(with_line)?,
            bathroom: opt_num("bathroom", get(4)).map_err(with_line)?,
        };
        let truth = match get(5).map(str::trim).filter(|s| !s.is_empty()) {
            None => None,
            Some(p) => Some(crate::features::price_class(
                ingest::parse_price(p).map_err(|e| data_err(Stage::Ingest)(format!("line {line}: {e}")))?,
                bins,
            )),
        };
        out.push((features, truth));
    }
    Ok(out)
}

pub fn predict_queries(
    model: &ModelFile,
    queries: &[(FeatureVector, Option<PriceClass>)],
) -> Result<Vec<PredictionRow>, PipelineError> {
    queries
        .iter()
        .enumerate()
        .map(|(i, (features, truth))| {
            let p = model
                .classifier
                .predict(features)
                .map_err(|e| PipelineError::new(Stage::Predict, ErrorKind::Data, format!("row {}: {e}", i + 1)))?;
            Ok(PredictionRow {
                features: features.clone(),
                truth: *truth,
                predicted: p.class(),
                explanation: p.explain(),
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<(), PipelineError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let internal = |e: csv::Error| PipelineError::new(Stage::Write, ErrorKind::Internal, e);
    wtr.write_record(PREDICTION_HEADER).map_err(internal)?;
    for r in rows {
        let f = &r.features;
        wtr.write_record([
            f.location.clone().unwrap_or_default(),
            fmt_opt(f.building_size),
            fmt_opt(f.land_size),
            fmt_opt(f.bedroom),
            fmt_opt(f.bathroom),
            r.truth.map(|t| t.name().to_string()).unwrap_or_default(),
            r.predicted.name().to_string(),
            r.explanation.clone(),
        ])
        .map_err(internal)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| PipelineError::new(Stage::Write, ErrorKind::Internal, e))?;
    write_file(path, &bytes)
}

fn labeled_from_row(features: &FeatureVector, label: PriceClass) -> Result<LabeledInstance, String> {
    let count = |v: Option<f64>, name: &str| -> Result<u32, String> {
        let v = v.ok_or_else(|| format!("missing `{name}`"))?;
        if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
            Ok(v as u32)
        } else {
            Err(format!("`{name}` is not a count: {v}"))
        }
    };
    Ok(LabeledInstance {
        location: features.location.clone().ok_or("missing `location`")?,
        building_size: features.building_size.ok_or("missing `building_size`")?,
        land_size: features.land_size.ok_or("missing `land_size`")?,
        bedroom: count(features.bedroom, "bedroom")?,
        bathroom: count(features.bathroom, "bathroom")?,
        label,
    })
}

/// Builds an evaluation report from a predictions file. Rows without a truth
/// label are skipped.
pub fn evaluate_predictions_file(
    path: &Path,
    model: Option<&ModelFile>,
) -> Result<EvalReport, PipelineError> {
    let fail = data_err(Stage::Evaluate);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| data_err(Stage::Evaluate)(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(Stage::Evaluate)(format!("predictions file lacks column `{name}`")))
    };
    let idx: Vec<usize> = PREDICTION_HEADER[..7]
        .iter()
        .map(|n| col(n))
        .collect::<Result<_, _>>()?;
    let mut instances = Vec::new();
    let mut truths = Vec::new();
    let mut preds = Vec::new();
    for (row_no, row) in rdr.records().enumerate() {
        let line = row_no + 2;
        let err = |m: String| data_err(Stage::Evaluate)(format!("line {line}: {m}"));
        let row = row.map_err(|e| err(e.to_string()))?;
        let get = |i: usize| row.get(idx[i]).map(str::trim).unwrap_or("");
        if get(5).is_empty() {
            continue;
        }
        let truth: PriceClass = get(5).parse().map_err(|e: crate::features::FeatureError| err(e.to_string()))?;
        let predicted: PriceClass = get(6).parse().map_err(|e: crate::features::FeatureError| err(e.to_string()))?;
        let features = FeatureVector {
            location: Some(get(0).to_string()).filter(|s| !s.is_empty()),
            building_size: opt_num("building_size", Some(get(1))).map_err(err)?,
            land_size: opt_num("land_size", Some(get(2))).map_err(err)?,
            bedroom: opt_num("bedroom", Some(get(3))).map_err(err)?,
            bathroom: opt_num("bathroom", Some(get(4))).map_err(err)?,
        };
        instances.push(labeled_from_row(&features, truth).map_err(err)?);
        truths.push(truth);
        preds.push(predicted);
    }
    let cm = eval::accumulate(&truths, &preds).at(Stage::Evaluate, ErrorKind::Data)?;
    let info = match model {
        Some(m) => m.info(),
        None => ModelInfo {
            name: "predictions".into(),
            descriptor: format!("predictions from {}", path.display()),
            data_source: path.display().to_string(),
            measurement_indicator: "price_class".into(),
            analysis: "external predictions".into(),
        },
    };
    let mut provenance = BTreeMap::new();
    provenance.insert("predictions".to_string(), path.display().to_string());
    if let Some(m) = model {
        provenance.insert("data_source".to_string(), m.metadata.data_source.clone());
        if let Some(seed) = m.metadata.split_seed {
            provenance.insert("seed".to_string(), seed.to_string());
        }
        provenance.insert("train_fingerprint".to_string(), m.metadata.train_fingerprint.clone());
    }
    EvalReport::new(info, cm, eval::test_set_fingerprint(&instances), provenance)
        .at(Stage::Evaluate, ErrorKind::Data)
}

pub fn load_model_file(path: &Path) -> Result<ModelFile, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::new(Stage::Predict, ErrorKind::Data, format!("{}: {e}", path.display())))?;
    ModelFile::from_json(&text)
        .map_err(|e| PipelineError::new(Stage::Predict, ErrorKind::Data, format!("{}: {e}", path.display())))
}

pub fn load_report(path: &Path) -> Result<EvalReport, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::new(Stage::Compare, ErrorKind::Data, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        PipelineError::new(
            Stage::Compare,
            ErrorKind::Data,
            format!("{}: not a structured evaluation report: {e}", path.display()),
        )
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    write_file(path, text.as_bytes())
}

/// Splits a labeled dataset and fits one classifier on the training half.
/// Returns the model file and the held-out test records.
pub fn train_on_file(
    input: &Path,
    kind: ModelKind,
    settings: &PipelineSettings,
) -> Result<(ModelFile, Vec<ingest::ListingRecord>), PipelineError> {
    let bins = settings.bins()?;
    let split_params = settings.split_params()?;
    let tree_params = settings.tree_params()?;
    let knn_params = settings.knn_params()?;
    let ingested = load_listings_file(input)?;
    let records = &ingested.dataset.records;
    let labels: Vec<PriceClass> = records
        .iter()
        .map(|r| crate::features::price_class(r.price, &bins))
        .collect();
    let idx = crate::split::stratified_split_indices(&labels, &split_params).at(Stage::Split, ErrorKind::Data)?;
    let train: Vec<LabeledInstance> = idx
        .train
        .iter()
        .map(|&i| LabeledInstance::from_record(&records[i], &bins))
        .collect();
    let test_records = idx.test.iter().map(|&i| records[i].clone()).collect();
    let metadata = ModelMetadata {
        data_source: format!("listings CSV {}", input.display()),
        train_size: train.len(),
        train_fingerprint: eval::test_set_fingerprint(&train),
        split_seed: Some(split_params.seed),
        bins,
    };
    let classifier = train_classifier(kind, &train, &tree_params, &knn_params)?;
    Ok((ModelFile::new(metadata, classifier), test_records))
}
