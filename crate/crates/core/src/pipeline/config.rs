//! Pipeline configuration: a TOML file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{KMeansParams, DEFAULT_K_DEEP, DEFAULT_K_FLAT};
use crate::evaluate::{EvalMode, Metric};
use crate::linear::TrainParams;
use crate::ranker::{DEFAULT_B, DEFAULT_FUSION_NEGATIVES, DEFAULT_K_OUT};
use crate::type_repr::{ReprKind, DEFAULT_MAX_CHARS, DEFAULT_MAX_ENTITIES};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub kg_dir: PathBuf,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub artifacts: PathBuf,
    /// Required for the loaded_embedding and description_embedding kinds.
    pub embeddings: Option<PathBuf>,
    pub external_scores: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            kg_dir: PathBuf::from("kg"),
            train: PathBuf::from("train.json"),
            test: None,
            artifacts: PathBuf::from("artifacts"),
            embeddings: None,
            external_scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub representation: ReprKind,
    /// Cluster count; derived from the metric when absent.
    pub k: Option<usize>,
    pub b: usize,
    pub k_out: usize,
    /// Share of the training file used to train; the rest fits the fusion.
    pub train_ratio: f64,
    pub fusion_negatives: usize,
    pub description_max_entities: usize,
    pub description_max_chars: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            representation: ReprKind::Jaccard,
            k: None,
            b: DEFAULT_B,
            k_out: DEFAULT_K_OUT,
            train_ratio: 0.8,
            fusion_negatives: DEFAULT_FUSION_NEGATIVES,
            description_max_entities: DEFAULT_MAX_ENTITIES,
            description_max_chars: DEFAULT_MAX_CHARS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        Self {
            epochs: p.epochs,
            learning_rate: p.learning_rate,
            l2: p.l2,
            batch_size: p.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metric: Metric,
    pub mode: EvalMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Ndcg,
            mode: EvalMode::EndToEnd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub kmeans: KMeansParams,
    pub eval: EvalConfig,
}


/// Command-line values that replace config entries when present.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub representation: Option<ReprKind>,
    pub k: Option<usize>,
    pub b: Option<usize>,
    pub seed: Option<u64>,
    pub artifacts: Option<PathBuf>,
    pub external_scores: Option<PathBuf>,
    pub metric: Option<Metric>,
    pub mode: Option<EvalMode>,
}

impl PipelineConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(format!("invalid config: {e}")))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.kg_dir);
        fix(&mut paths.train);
        fix(&mut paths.artifacts);
        for p in [&mut paths.test, &mut paths.embeddings, &mut paths.external_scores]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        if let Some(r) = o.representation {
            self.model.representation = r;
        }
        if let Some(k) = o.k {
            self.model.k = Some(k);
        }
        if let Some(b) = o.b {
            self.model.b = b;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(a) = &o.artifacts {
            self.paths.artifacts = a.clone();
        }
        if let Some(e) = &o.external_scores {
            self.paths.external_scores = Some(e.clone());
        }
        if let Some(m) = o.metric {
            self.eval.metric = m;
        }
        if let Some(m) = o.mode {
            self.eval.mode = m;
        }
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            l2: self.train.l2,
            batch_size: self.train.batch_size,
            seed: self.seed,
        }
    }

    /// Explicit k, or the metric's default (deep hierarchies use NDCG).
    pub fn requested_k(&self) -> usize {
        self.model.k.unwrap_or(match self.eval.metric {
            Metric::Ndcg => DEFAULT_K_DEEP,
            Metric::Mrr => DEFAULT_K_FLAT,
        })
    }

    /// Checks values and that every referenced input exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.model.k == Some(0) {
            return err("k must be at least 1".into());
        }
        if self.model.b == 0 || self.model.k_out == 0 {
            return err("b and k_out must be at least 1".into());
        }
        if !(self.model.train_ratio > 0.0 && self.model.train_ratio < 1.0) {
            return err(format!("train_ratio {} must lie in (0, 1)", self.model.train_ratio));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return err("epochs and batch_size must be at least 1".into());
        }
        if !(self.train.learning_rate > 0.0) || !(self.train.l2 >= 0.0) {
            return err("learning_rate must be positive and l2 non-negative".into());
        }
        if !self.paths.kg_dir.is_dir() {
            return err(format!("kg_dir {} is not a directory", self.paths.kg_dir.display()));
        }
        let mut files = vec![("train", Some(&self.paths.train))];
        files.push(("test", self.paths.test.as_ref()));
        files.push(("embeddings", self.paths.embeddings.as_ref()));
        files.push(("external_scores", self.paths.external_scores.as_ref()));
        for (name, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    return err(format!("{name} file {} does not exist", p.display()));
                }
            }
        }
        if matches!(
            self.model.representation,
            ReprKind::LoadedEmbedding | ReprKind::DescriptionEmbedding
        ) && self.paths.embeddings.is_none()
        {
            return err(format!(
                "representation {} needs paths.embeddings",
                self.model.representation
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_relative_paths() {
        let text = r#"
seed = 3

[paths]
kg_dir = "kg"
train = "data/train.json"

[model]
representation = "question_tfidf"
k = 9
"#;
        let cfg = PipelineConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.paths.train, PathBuf::from("/base/data/train.json"));
        assert_eq!(cfg.model.representation, ReprKind::QuestionTfidf);
        assert_eq!(cfg.model.b, DEFAULT_B);
        let partial = PipelineConfig::from_toml("[kmeans]\nmax_iters = 7\n", Path::new(".")).unwrap();
        assert_eq!(partial.kmeans.max_iters, 7);
        assert_eq!(partial.kmeans.tol, KMeansParams::default().tol);
        let again = PipelineConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(
            PipelineConfig::from_toml("[model]\nkay = 3\n", Path::new(".")),
            Err(PipelineError::Config(_))
        ));
        let mut cfg = PipelineConfig::default();
        cfg.model.train_ratio = 1.0;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn flags_win() {
        let mut cfg = PipelineConfig::default();
        cfg.apply(&ConfigOverrides {
            k: Some(5),
            metric: Some(Metric::Mrr),
            ..Default::default()
        });
        assert_eq!(cfg.requested_k(), 5);
        cfg.model.k = None;
        assert_eq!(cfg.requested_k(), DEFAULT_K_FLAT);
    }
}
