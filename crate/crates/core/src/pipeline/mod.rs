//! End-to-end pipeline over an artifact directory.
//!
//! Stages run in order: ingest, build-repr, cluster, train, predict,
//! evaluate. Each stage has a key hashed from its upstream key, the config
//! values it reads and the content of any input files. A stage whose key
//! matches `stages.json` and whose outputs still hash to the recorded values
//! is skipped. Artifacts never contain timestamps or the artifact path, so
//! identical configs give byte-identical artifact directories.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display};
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::category::{train_category, CategoryModel};
use crate::clustering::{kmeans_fit, ClusterError, ClusterModel};
use crate::dataset::{load_smart_json_with_stats, split_train_validation, CoarseCategory, DatasetError, LoadStats, QuestionDataset};
use crate::evaluate::{evaluate_run, render_table, EvalError, EvalMode, EvalReport, Metric, TableRow};
use crate::kg_store::{load_kg_tables_with_report, EntityTypeIndex, KgError, LoadReport, TypeSystem, KG_FILES};
use crate::matcher::{gold_clusters, parse_score_file, train_matcher, ExternalScores, MatcherModel};
use crate::ranker::{
    fit_fusion, predict_all, render_predictions, parse_predictions, train_ranker, CategorySource, FusionModel, RankerModel,
    TypeScorer,
};
use crate::text::QuestionFeaturizer;
use crate::type_repr::{
    assemble_type_descriptions, build_jaccard_repr, build_question_tfidf_repr, load_embedding_repr, normalize_repr,
    read_type_matrix, render_description_documents, render_type_matrix, ReprError, ReprKind, TypeMatrix,
};

pub use config::{ConfigOverrides, PipelineConfig};

pub const MODEL_VERSION: &str = "xtypes-model/1";

pub const INGEST_FILE: &str = "ingest.json";
pub const TYPE_MATRIX_FILE: &str = "type_matrix.tsv";
pub const DESCRIPTIONS_FILE: &str = "descriptions.tsv";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const QUESTION_CLUSTERS_FILE: &str = "question_clusters.tsv";
pub const MODEL_FILE: &str = "model.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const PREDICTIONS_TYPE_ONLY_FILE: &str = "predictions_type_only.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const STAGES_FILE: &str = "stages.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const SWEEP_TABLE_FILE: &str = "sweep.txt";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("artifact directory is locked by another run (remove {} if it is stale)", .0.display())]
    Locked(PathBuf),
}

impl PipelineError {
    /// 2 config, 3 data, 4 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Stage { .. } | PipelineError::Locked(_) => 4,
        }
    }
}

impl From<KgError> for PipelineError {
    fn from(e: KgError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<ReprError> for PipelineError {
    fn from(e: ReprError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<ClusterError> for PipelineError {
    fn from(e: ClusterError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

trait StageResult<T> {
    fn in_stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Display> StageResult<T> for Result<T, E> {
    fn in_stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage: stage.name(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    BuildRepr,
    Cluster,
    Train,
    Predict,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::BuildRepr,
        Stage::Cluster,
        Stage::Train,
        Stage::Predict,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::BuildRepr => "build-repr",
            Stage::Cluster => "cluster",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[INGEST_FILE],
            Stage::BuildRepr => &[TYPE_MATRIX_FILE, DESCRIPTIONS_FILE],
            Stage::Cluster => &[CLUSTERS_FILE, QUESTION_CLUSTERS_FILE],
            Stage::Train => &[MODEL_FILE],
            Stage::Predict => &[PREDICTIONS_FILE, PREDICTIONS_TYPE_ONLY_FILE],
            Stage::Evaluate => &[REPORT_FILE, REPORT_TABLE_FILE],
        }
    }
}

impl Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Cached,
}

impl Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageStatus::Ran => "ran",
            StageStatus::Cached => "cached",
        })
    }
}

/// Trained bundle persisted as `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    pub version: String,
    pub representation: ReprKind,
    pub b: usize,
    pub k_out: usize,
    pub featurizer: QuestionFeaturizer,
    pub category: CategoryModel,
    pub clusters: ClusterModel,
    pub matcher: MatcherModel,
    pub ranker: RankerModel,
    pub fusion: FusionModel,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub representation: ReprKind,
    pub k: usize,
    pub metric: Metric,
    pub type_only: EvalReport,
    pub end_to_end: EvalReport,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct StageRecord {
    key: String,
    outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
struct IngestSummary<'a> {
    types: usize,
    max_depth: usize,
    typed_entities: usize,
    kg: &'a LoadReport,
    train: &'a LoadStats,
    test: Option<&'a LoadStats>,
    train_questions: usize,
    validation_questions: usize,
    unknown_train_types: Vec<String>,
    train_ids: Vec<&'a str>,
    validation_ids: Vec<&'a str>,
}

/// Inputs read from the paths in the config.
pub struct Inputs {
    pub ts: TypeSystem,
    pub index: EntityTypeIndex,
    pub kg_report: LoadReport,
    pub train_stats: LoadStats,
    pub test_stats: Option<LoadStats>,
    /// Training part of the train file.
    pub train: QuestionDataset,
    /// Held-out part of the train file, used to fit the fusion.
    pub validation: QuestionDataset,
    pub test: Option<QuestionDataset>,
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs, PipelineError> {
    let (ts, index, kg_report) = load_kg_tables_with_report(&cfg.paths.kg_dir)?;
    let (full_train, train_stats) = load_smart_json_with_stats(&cfg.paths.train)?;
    let (train, validation) = split_train_validation(&full_train, cfg.model.train_ratio, cfg.seed)?;
    let (test, test_stats) = match &cfg.paths.test {
        Some(p) => {
            let (ds, stats) = load_smart_json_with_stats(p)?;
            (Some(ds), Some(stats))
        }
        None => (None, None),
    };
    Ok(Inputs {
        ts,
        index,
        kg_report,
        train_stats,
        test_stats,
        train,
        validation,
        test,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String, std::io::Error> {
    Ok(sha256_hex(&fs::read(path)?))
}

struct KeyBuilder(Sha256);

impl KeyBuilder {
    fn new(stage: Stage) -> Self {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        Self(h)
    }

    fn field(mut self, name: &str, value: impl Display) -> Self {
        self.0.update(format!("\n{name}={value}").as_bytes());
        self
    }

    fn file(self, name: &str, path: &Path) -> Result<Self, PipelineError> {
        let h = hash_file(path).map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", path.display())))?;
        Ok(self.field(name, h))
    }

    fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// Exclusive lock on an artifact directory, released on drop.
pub struct ArtifactLock {
    path: PathBuf,
}

impl ArtifactLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).map_err(|e| PipelineError::Config(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(PipelineError::Config(format!("cannot create {}: {e}", path.display()))),
        }
    }
}

impl Drop for ArtifactLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Largest k that can give non-empty clusters: the number of distinct rows.
pub fn distinct_rows(m: &TypeMatrix) -> usize {
    m.rows()
        .map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<BTreeSet<_>>()
        .len()
}

/// `#k <k>` header, then `<question id>\t<cluster ids, comma separated>`.
pub fn render_question_clusters(k: usize, pool: &[&crate::dataset::Question], cm: &ClusterModel) -> Result<String, crate::linear::ModelError> {
    let mut out = format!("#k {k}\n");
    for q in pool {
        let cs = gold_clusters(q, cm)?;
        let cs: Vec<String> = cs.iter().map(usize::to_string).collect();
        out.push_str(&format!("{}\t{}\n", q.id, cs.join(",")));
    }
    Ok(out)
}

pub fn parse_question_clusters(text: &str) -> Result<(usize, BTreeMap<String, Vec<usize>>), String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let k = lines
        .next()
        .and_then(|h| h.strip_prefix("#k "))
        .and_then(|k| k.trim().parse::<usize>().ok())
        .ok_or("expected header `#k <k>`")?;
    let mut out = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let (id, cs) = line.split_once('\t').ok_or(format!("line {}: missing tab", i + 2))?;
        let cs = cs
            .split(',')
            .map(|c| c.trim().parse::<usize>().ok().filter(|&c| c < k))
            .collect::<Option<Vec<_>>>()
            .ok_or(format!("line {}: bad cluster id", i + 2))?;
        out.insert(id.to_string(), cs);
    }
    Ok((k, out))
}

pub struct Pipeline {
    cfg: PipelineConfig,
    dir: PathBuf,
    inputs: Inputs,
    records: BTreeMap<String, StageRecord>,
    keys: BTreeMap<Stage, String>,
    statuses: Vec<(Stage, StageStatus)>,
    _lock: ArtifactLock,
}

impl Pipeline {
    /// Validates the config, locks the artifact directory and loads inputs.
    pub fn open(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let dir = cfg.paths.artifacts.clone();
        let lock = ArtifactLock::acquire(&dir)?;
        let inputs = load_inputs(&cfg)?;
        let records = match fs::read_to_string(dir.join(STAGES_FILE)) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
                log::warn!("ignoring unreadable {STAGES_FILE}: {e}");
                BTreeMap::new()
            }),
            Err(_) => BTreeMap::new(),
        };
        Ok(Self {
            cfg,
            dir,
            inputs,
            records,
            keys: BTreeMap::new(),
            statuses: Vec::new(),
            _lock: lock,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn statuses(&self) -> &[(Stage, StageStatus)] {
        &self.statuses
    }

    /// Runs every stage up to and including `last`.
    pub fn run_until(&mut self, last: Stage) -> Result<(), PipelineError> {
        if last >= Stage::Predict && self.inputs.test.is_none() {
            return Err(PipelineError::Config(format!("stage {last} needs paths.test")));
        }
        for stage in Stage::ALL.into_iter().filter(|s| *s <= last) {
            let key = self.stage_key(stage)?;
            let status = if self.is_cached(stage, &key) {
                log::info!("{stage}: cached");
                StageStatus::Cached
            } else {
                log::info!("{stage}: running");
                self.execute(stage)?;
                self.record(stage, &key)?;
                StageStatus::Ran
            };
            self.keys.insert(stage, key);
            self.statuses.push((stage, status));
        }
        Ok(())
    }

    fn upstream(&self, stage: Stage) -> &str {
        let prev = Stage::ALL[Stage::ALL.iter().position(|s| *s == stage).expect("known stage") - 1];
        &self.keys[&prev]
    }

    fn stage_key(&self, stage: Stage) -> Result<String, PipelineError> {
        let cfg = &self.cfg;
        let key = KeyBuilder::new(stage);
        let key = match stage {
            Stage::Ingest => {
                let mut key = key
                    .field("seed", cfg.seed)
                    .field("train_ratio", cfg.model.train_ratio)
                    .file("train", &cfg.paths.train)?;
                for name in KG_FILES {
                    let p = cfg.paths.kg_dir.join(name);
                    key = if p.is_file() { key.file(name, &p)? } else { key.field(name, "-") };
                }
                match &cfg.paths.test {
                    Some(p) => key.file("test", p)?,
                    None => key.field("test", "-"),
                }
            }
            Stage::BuildRepr => {
                let key = key
                    .field("up", self.upstream(stage))
                    .field("repr", cfg.model.representation)
                    .field("max_entities", cfg.model.description_max_entities)
                    .field("max_chars", cfg.model.description_max_chars);
                match (&cfg.paths.embeddings, cfg.model.representation) {
                    (Some(p), ReprKind::LoadedEmbedding | ReprKind::DescriptionEmbedding) => key.file("emb", p)?,
                    _ => key,
                }
            }
            Stage::Cluster => key
                .field("up", self.upstream(stage))
                .field("k", cfg.model.k.map_or("auto".to_string(), |k| k.to_string()))
                .field("metric", cfg.eval.metric)
                .field("seed", cfg.seed)
                .field("max_iters", cfg.kmeans.max_iters)
                .field("tol", cfg.kmeans.tol),
            Stage::Train => {
                let t = &cfg.train;
                let key = key
                    .field("up", self.upstream(stage))
                    .field("epochs", t.epochs)
                    .field("lr", t.learning_rate)
                    .field("l2", t.l2)
                    .field("batch", t.batch_size)
                    .field("b", cfg.model.b)
                    .field("k_out", cfg.model.k_out)
                    .field("negatives", cfg.model.fusion_negatives);
                match &cfg.paths.external_scores {
                    Some(p) => key.file("scores", p)?,
                    None => key,
                }
            }
            Stage::Predict => key.field("up", self.upstream(stage)),
            Stage::Evaluate => key.field("up", self.upstream(stage)).field("metric", cfg.eval.metric),
        };
        Ok(key.finish())
    }

    fn is_cached(&self, stage: Stage, key: &str) -> bool {
        let Some(rec) = self.records.get(stage.name()) else { return false };
        rec.key == key
            && stage.outputs().iter().all(|name| {
                rec.outputs.get(*name).is_some_and(|h| hash_file(&self.artifact(name)).ok().as_deref() == Some(h))
            })
    }

    fn record(&mut self, stage: Stage, key: &str) -> Result<(), PipelineError> {
        let mut outputs = BTreeMap::new();
        for name in stage.outputs() {
            outputs.insert(name.to_string(), hash_file(&self.artifact(name)).in_stage(stage)?);
        }
        self.records.insert(
            stage.name().to_string(),
            StageRecord {
                key: key.to_string(),
                outputs,
            },
        );
        let text = serde_json::to_string_pretty(&self.records).expect("records serialize");
        self.write(stage, STAGES_FILE, &text)
    }

    /// Write-then-rename so an interrupted stage never leaves a torn file.
    fn write(&self, stage: Stage, name: &str, text: &str) -> Result<(), PipelineError> {
        let path = self.artifact(name);
        let tmp = self.artifact(&format!("{name}.tmp"));
        fs::write(&tmp, text).in_stage(stage)?;
        fs::rename(&tmp, &path).in_stage(stage)
    }

    fn read(&self, stage: Stage, name: &str) -> Result<String, PipelineError> {
        fs::read_to_string(self.artifact(name)).in_stage(stage)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, stage: Stage, name: &str) -> Result<T, PipelineError> {
        serde_json::from_str(&self.read(stage, name)?).in_stage(stage)
    }

    fn execute(&mut self, stage: Stage) -> Result<(), PipelineError> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::BuildRepr => self.build_repr(),
            Stage::Cluster => self.cluster(),
            Stage::Train => self.train(),
            Stage::Predict => self.predict(),
            Stage::Evaluate => self.evaluate(),
        }
    }

    fn ingest(&self) -> Result<(), PipelineError> {
        let inp = &self.inputs;
        let unknown = inp.train.unknown_types(&inp.ts);
        if !unknown.is_empty() {
            log::warn!("{} training gold types are not in the type hierarchy", unknown.len());
        }
        let summary = IngestSummary {
            types: inp.ts.len(),
            max_depth: inp.ts.max_depth(),
            typed_entities: inp.index.entity_types().len(),
            kg: &inp.kg_report,
            train: &inp.train_stats,
            test: inp.test_stats.as_ref(),
            train_questions: inp.train.len(),
            validation_questions: inp.validation.len(),
            unknown_train_types: unknown,
            train_ids: inp.train.questions().iter().map(|q| q.id.as_str()).collect(),
            validation_ids: inp.validation.questions().iter().map(|q| q.id.as_str()).collect(),
        };
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        self.write(Stage::Ingest, INGEST_FILE, &text)
    }

    fn build_repr(&self) -> Result<(), PipelineError> {
        let stage = Stage::BuildRepr;
        let inp = &self.inputs;
        let vocab: Vec<String> = inp.train.type_vocabulary().iter().cloned().collect();
        if vocab.is_empty() {
            return Err(ReprError::NoResourceQuestions.into());
        }
        let matrix = match self.cfg.model.representation {
            ReprKind::QuestionTfidf => build_question_tfidf_repr(&inp.train)?.0,
            ReprKind::Jaccard => build_jaccard_repr(&vocab, &inp.index),
            kind @ (ReprKind::LoadedEmbedding | ReprKind::DescriptionEmbedding) => {
                let path = self.cfg.paths.embeddings.as_ref().expect("validated");
                let (m, report) = load_embedding_repr(path, &vocab)?;
                if m.kind() != kind {
                    log::warn!("embedding file declares kind {} but {kind} was requested", m.kind());
                }
                if report.ignored > 0 {
                    log::info!("{} embedding rows are outside the type vocabulary", report.ignored);
                }
                TypeMatrix::new(m.type_ids().to_vec(), m.rows().map(<[f64]>::to_vec).collect(), kind)
            }
        };
        let matrix = normalize_repr(&matrix);
        if !matrix.is_finite() {
            return Err(PipelineError::Data("type representation contains non-finite values".into()));
        }
        self.write(stage, TYPE_MATRIX_FILE, &render_type_matrix(&matrix))?;
        let docs = assemble_type_descriptions(
            &inp.ts,
            &inp.index,
            &vocab,
            self.cfg.model.description_max_entities,
            self.cfg.model.description_max_chars,
        );
        self.write(stage, DESCRIPTIONS_FILE, &render_description_documents(&docs))
    }

    fn cluster(&self) -> Result<(), PipelineError> {
        let stage = Stage::Cluster;
        let matrix = read_type_matrix(&self.artifact(TYPE_MATRIX_FILE)).in_stage(stage)?;
        let k = match self.cfg.model.k {
            Some(k) => k,
            None => {
                let cap = distinct_rows(&matrix);
                let k = self.cfg.requested_k().min(cap);
                if k < self.cfg.requested_k() {
                    log::info!("default k lowered to {k}, the number of distinct type vectors");
                }
                k
            }
        };
        let cm = kmeans_fit(&matrix, k, self.cfg.seed, self.cfg.kmeans)?;
        self.write(stage, CLUSTERS_FILE, &serde_json::to_string_pretty(&cm).expect("model serializes"))?;
        let pool = self.inputs.train.ranking_pool(None);
        let labels = render_question_clusters(cm.k, &pool, &cm).in_stage(stage)?;
        self.write(stage, QUESTION_CLUSTERS_FILE, &labels)
    }

    fn external_scores(&self, stage: Stage, k: usize) -> Result<Option<ExternalScores>, PipelineError> {
        let Some(path) = &self.cfg.paths.external_scores else { return Ok(None) };
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        let scores = parse_score_file(&text).map_err(|e| PipelineError::Data(e.to_string()))?;
        if scores.k != k {
            return Err(crate::linear::ModelError::ScoreK {
                expected: k,
                found: scores.k,
            })
            .in_stage(stage);
        }
        Ok(Some(scores))
    }

    fn train(&self) -> Result<(), PipelineError> {
        let stage = Stage::Train;
        let inp = &self.inputs;
        let params = self.cfg.train_params();
        let cm: ClusterModel = self.read_json(stage, CLUSTERS_FILE)?;
        let texts: Vec<&str> = inp.train.questions().iter().map(|q| q.text.as_str()).collect();
        let featurizer = QuestionFeaturizer::fit(&texts);
        let category = train_category(&inp.train, &featurizer, &params).in_stage(stage)?;
        let pool = inp.train.ranking_pool(None);
        let matcher = train_matcher(&pool, &cm, &featurizer, &params).in_stage(stage)?;
        let ranker = train_ranker(&pool, &cm, &featurizer, &params).in_stage(stage)?;
        let external = self.external_scores(stage, cm.k)?;
        let scorer = TypeScorer::new(&featurizer, &cm, Some(&matcher), external.as_ref(), &ranker);
        let val_pool = inp.validation.ranking_pool(None);
        let fusion = fit_fusion(&val_pool, &scorer, self.cfg.model.b, self.cfg.model.fusion_negatives, self.cfg.seed)
            .in_stage(stage)?;
        log::info!(
            "fusion weights w0={:.4} w1={:.4} w2={:.4}",
            fusion.w0,
            fusion.w1,
            fusion.w2
        );
        let model = PipelineModel {
            version: MODEL_VERSION.into(),
            representation: self.cfg.model.representation,
            b: self.cfg.model.b,
            k_out: self.cfg.model.k_out,
            featurizer,
            category,
            clusters: cm,
            matcher,
            ranker,
            fusion,
            config: config_echo(&self.cfg),
        };
        self.write(stage, MODEL_FILE, &serde_json::to_string(&model).expect("model serializes"))
    }

    pub fn load_model(&self) -> Result<PipelineModel, PipelineError> {
        let model: PipelineModel = self.read_json(Stage::Train, MODEL_FILE)?;
        if model.version != MODEL_VERSION {
            return Err(PipelineError::Data(format!(
                "model version {} is not {MODEL_VERSION}",
                model.version
            )));
        }
        Ok(model)
    }

    fn predict(&self) -> Result<(), PipelineError> {
        let stage = Stage::Predict;
        let model = self.load_model()?;
        let test = self.inputs.test.as_ref().expect("checked in run_until");
        let external = self.external_scores(stage, model.clusters.k)?;
        let scorer = TypeScorer::new(
            &model.featurizer,
            &model.clusters,
            Some(&model.matcher),
            external.as_ref(),
            &model.ranker,
        );
        let qs = test.questions();
        let e2e = predict_all(qs, &scorer, &model.fusion, CategorySource::Model(&model.category), model.b, model.k_out)
            .in_stage(stage)?;
        let typed = predict_all(
            qs,
            &scorer,
            &model.fusion,
            CategorySource::Fixed(CoarseCategory::Resource),
            model.b,
            model.k_out,
        )
        .in_stage(stage)?;
        self.write(stage, PREDICTIONS_FILE, &render_predictions(&e2e))?;
        self.write(stage, PREDICTIONS_TYPE_ONLY_FILE, &render_predictions(&typed))
    }

    fn evaluate(&self) -> Result<(), PipelineError> {
        let stage = Stage::Evaluate;
        let test = self.inputs.test.as_ref().expect("checked in run_until");
        let metric = self.cfg.eval.metric;
        let e2e = parse_predictions(&self.read(stage, PREDICTIONS_FILE)?).in_stage(stage)?;
        let typed = parse_predictions(&self.read(stage, PREDICTIONS_TYPE_ONLY_FILE)?).in_stage(stage)?;
        let cm: ClusterModel = self.read_json(stage, CLUSTERS_FILE)?;
        let report = RunReport {
            method: self.cfg.model.representation.to_string(),
            representation: self.cfg.model.representation,
            k: cm.k,
            metric,
            type_only: evaluate_run(&self.inputs.ts, &typed, test, EvalMode::TypeOnly, metric)?,
            end_to_end: evaluate_run(&self.inputs.ts, &e2e, test, EvalMode::EndToEnd, metric)?,
        };
        let table = render_table(
            metric,
            &[TableRow {
                method: report.method.clone(),
                type_only: Some(&report.type_only),
                end_to_end: Some(&report.end_to_end),
            }],
        );
        self.write(stage, REPORT_FILE, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
        self.write(stage, REPORT_TABLE_FILE, &table)
    }

    pub fn load_report(&self) -> Result<RunReport, PipelineError> {
        self.read_json(Stage::Evaluate, REPORT_FILE)
    }

    /// Type-only metric of the trained model on the held-out part of the
    /// train file.
    pub fn validation_score(&self) -> Result<f64, PipelineError> {
        let stage = Stage::Train;
        let model = self.load_model()?;
        let external = self.external_scores(stage, model.clusters.k)?;
        let scorer = TypeScorer::new(
            &model.featurizer,
            &model.clusters,
            Some(&model.matcher),
            external.as_ref(),
            &model.ranker,
        );
        let val = &self.inputs.validation;
        let preds = predict_all(
            val.questions(),
            &scorer,
            &model.fusion,
            CategorySource::Fixed(CoarseCategory::Resource),
            model.b,
            model.k_out,
        )
        .in_stage(stage)?;
        let subs: Vec<_> = preds.iter().map(Into::into).collect();
        let report = evaluate_run(&self.inputs.ts, &subs, val, EvalMode::TypeOnly, self.cfg.eval.metric)?;
        Ok(report.headline())
    }
}

/// Config as recorded in the model, without the artifact location.
fn config_echo(cfg: &PipelineConfig) -> serde_json::Value {
    let mut echo = cfg.clone();
    echo.paths.artifacts = PathBuf::new();
    serde_json::to_value(echo).expect("config serializes")
}

/// Result of [`cmd_run`].
pub struct RunOutcome {
    pub statuses: Vec<(Stage, StageStatus)>,
    pub report: RunReport,
    pub artifacts: PathBuf,
}

pub fn cmd_run(cfg: PipelineConfig) -> Result<RunOutcome, PipelineError> {
    let mut p = Pipeline::open(cfg)?;
    p.run_until(Stage::Evaluate)?;
    Ok(RunOutcome {
        statuses: p.statuses().to_vec(),
        report: p.load_report()?,
        artifacts: p.dir().to_path_buf(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub validation: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metric: Metric,
    pub representation: ReprKind,
    pub rows: Vec<SweepRow>,
    pub best_k: usize,
}

impl SweepReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:>6}  {:>12}  {:>12}\n",
            "k",
            format!("val {}", self.metric.columns()[0].to_uppercase()),
            "inertia"
        );
        for r in &self.rows {
            let mark = if r.k == self.best_k { "  *" } else { "" };
            out.push_str(&format!("{:>6}  {:>12.4}  {:>12.4}{mark}\n", r.k, r.validation, r.inertia));
        }
        out
    }
}

/// Best validation score wins; ties go to the smaller k.
pub fn pick_best_k(rows: &[SweepRow]) -> Option<usize> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.k);
    sorted
        .into_iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.validation >= r.validation => Some(b),
            _ => Some(r),
        })
        .map(|r| r.k)
}

/// Trains one pipeline per k under `<artifacts>/sweep/k<k>` and compares
/// type-only validation scores.
pub fn cmd_sweep(cfg: PipelineConfig, ks: &[usize]) -> Result<SweepReport, PipelineError> {
    if ks.is_empty() {
        return Err(PipelineError::Config("sweep needs at least one k".into()));
    }
    cfg.validate()?;
    let base = cfg.paths.artifacts.clone();
    let lock = ArtifactLock::acquire(&base)?;
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut rows = Vec::new();
    for &k in &ks {
        let mut sub = cfg.clone();
        sub.model.k = Some(k);
        sub.paths.artifacts = base.join("sweep").join(format!("k{k}"));
        sub.paths.test = None;
        let mut p = Pipeline::open(sub)?;
        p.run_until(Stage::Train)?;
        let cm: ClusterModel = p.read_json(Stage::Cluster, CLUSTERS_FILE)?;
        let validation = p.validation_score()?;
        log::info!("k={k}: validation {} = {validation:.4}", cfg.eval.metric);
        rows.push(SweepRow {
            k,
            validation,
            inertia: cm.inertia,
        });
    }
    let report = SweepReport {
        metric: cfg.eval.metric,
        representation: cfg.model.representation,
        best_k: pick_best_k(&rows).expect("non-empty sweep"),
        rows,
    };
    let write = |name: &str, text: &str| {
        fs::write(base.join(name), text).map_err(|e| PipelineError::Stage {
            stage: "sweep",
            message: e.to_string(),
        })
    };
    write(SWEEP_FILE, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    write(SWEEP_TABLE_FILE, &report.render())?;
    drop(lock);
    Ok(report)
}

/// Scores a predictions file against a gold file.
pub fn cmd_evaluate(
    kg_dir: &Path,
    predictions: &Path,
    gold: &Path,
    mode: EvalMode,
    metric: Metric,
) -> Result<EvalReport, PipelineError> {
    let (ts, _, _) = load_kg_tables_with_report(kg_dir)?;
    let text = fs::read_to_string(predictions)
        .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", predictions.display())))?;
    let subs = parse_predictions(&text)?;
    let (gold, _) = load_smart_json_with_stats(gold)?;
    Ok(evaluate_run(&ts, &subs, &gold, mode, metric)?)
}
