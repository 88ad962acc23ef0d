//! Answer type prediction for questions over a knowledge graph.
//!
//! Types are clustered by a vector representation, questions are matched to
//! clusters, and types inside the best clusters are ranked by a fused score.

pub mod category;
pub mod clustering;
pub mod dataset;
pub mod evaluate;
pub mod fixtures;
pub mod kg_store;
pub mod linear;
pub mod matcher;
pub mod pipeline;
pub mod ranker;
pub mod text;
pub mod type_repr;

pub use dataset::{CoarseCategory, Question, QuestionDataset};
pub use evaluate::{EvalMode, EvalReport, Metric};
pub use kg_store::{EntityTypeIndex, TypeSystem};
pub use pipeline::{cmd_run, cmd_sweep, PipelineConfig, PipelineError};
pub use type_repr::{ReprKind, TypeMatrix};
