//! SMART-format question datasets.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::kg_store::TypeSystem;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset JSON: {0}")]
    Json(String),
    #[error("record {id}: unknown category `{category}`")]
    UnknownCategory { id: String, category: String },
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    BadRatio(f64),
    #[error("dataset has {0} questions; at least 5 are needed to split")]
    TooSmall(usize),
}

/// Coarse answer category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseCategory {
    Boolean,
    Number,
    String,
    Date,
    Resource,
}

impl CoarseCategory {
    pub const ALL: [CoarseCategory; 5] = [
        CoarseCategory::Boolean,
        CoarseCategory::Number,
        CoarseCategory::String,
        CoarseCategory::Date,
        CoarseCategory::Resource,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CoarseCategory::Boolean => "boolean",
            CoarseCategory::Number => "number",
            CoarseCategory::String => "string",
            CoarseCategory::Date => "date",
            CoarseCategory::Resource => "resource",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_literal(self) -> bool {
        matches!(self, CoarseCategory::Number | CoarseCategory::String | CoarseCategory::Date)
    }

    /// `(category, type)` fields as they appear in SMART files.
    pub fn to_smart(self) -> (&'static str, Option<&'static str>) {
        match self {
            CoarseCategory::Boolean => ("boolean", Some("boolean")),
            CoarseCategory::Resource => ("resource", None),
            lit => ("literal", Some(lit.as_str())),
        }
    }
}

impl fmt::Display for CoarseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoarseCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "boolean" => Ok(CoarseCategory::Boolean),
            "number" => Ok(CoarseCategory::Number),
            "string" => Ok(CoarseCategory::String),
            "date" => Ok(CoarseCategory::Date),
            "resource" => Ok(CoarseCategory::Resource),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub category: Option<CoarseCategory>,
    /// Ordered from most specific to most generic.
    pub gold_types: Vec<String>,
}

impl Question {
    pub fn is_resource(&self) -> bool {
        self.category == Some(CoarseCategory::Resource)
    }
}

/// Questions plus the observed type vocabulary T′.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuestionDataset {
    questions: Vec<Question>,
    type_vocabulary: BTreeSet<String>,
}

impl QuestionDataset {
    pub fn new(questions: Vec<Question>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for q in &questions {
            if !seen.insert(q.id.as_str()) {
                return Err(DatasetError::DuplicateId(q.id.clone()));
            }
        }
        let type_vocabulary = questions.iter().flat_map(|q| q.gold_types.iter().cloned()).collect();
        Ok(Self {
            questions,
            type_vocabulary,
        })
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// T′, sorted.
    pub fn type_vocabulary(&self) -> &BTreeSet<String> {
        &self.type_vocabulary
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// Types in T′ that the type system does not know.
    pub fn unknown_types(&self, ts: &TypeSystem) -> Vec<String> {
        self.type_vocabulary.iter().filter(|t| !ts.contains(t)).cloned().collect()
    }

    /// Resource questions usable for cluster matching and label ranking:
    /// non-empty gold types, at least one of them inside the KG when a type
    /// system is given.
    pub fn ranking_pool(&self, ts: Option<&TypeSystem>) -> Vec<&Question> {
        self.questions
            .iter()
            .filter(|q| q.is_resource() && !q.gold_types.is_empty())
            .filter(|q| ts.is_none_or(|ts| q.gold_types.iter().any(|t| ts.contains(t))))
            .collect()
    }

    /// Subset by id, keeping this dataset's order.
    pub fn subset(&self, ids: &BTreeSet<String>) -> Self {
        let questions = self.questions.iter().filter(|q| ids.contains(&q.id)).cloned().collect();
        Self::new(questions).expect("subset of a valid dataset has unique ids")
    }
}

/// Counters from [`load_smart_json`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub records: usize,
    pub dropped_empty_text: usize,
    pub cleared_category_types: usize,
    pub resource_without_types: usize,
}

pub fn load_smart_json(path: &Path) -> Result<QuestionDataset, DatasetError> {
    load_smart_json_with_stats(path).map(|(ds, _)| ds)
}

pub fn load_smart_json_with_stats(path: &Path) -> Result<(QuestionDataset, LoadStats), DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_smart_json(&text)
}

pub fn parse_smart_json(text: &str) -> Result<(QuestionDataset, LoadStats), DatasetError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DatasetError::Json(e.to_string()))?;
    let records = value
        .as_array()
        .ok_or_else(|| DatasetError::Json("top-level value must be an array".into()))?;

    let mut stats = LoadStats {
        records: records.len(),
        ..LoadStats::default()
    };
    let mut questions = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let obj = rec
            .as_object()
            .ok_or_else(|| DatasetError::Json(format!("record {i} is not an object")))?;
        let id = match obj.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(DatasetError::Json(format!("record {i} has no usable `id`"))),
        };
        let text = match obj.get("question") {
            Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
            Some(Value::String(_)) | Some(Value::Null) | None => {
                stats.dropped_empty_text += 1;
                continue;
            }
            Some(_) => return Err(DatasetError::Json(format!("record {id}: `question` must be a string"))),
        };
        let types: Vec<String> = match obj.get("type") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| DatasetError::Json(format!("record {id}: non-string type entry")))
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(DatasetError::Json(format!("record {id}: `type` must be an array"))),
        };
        let category = match obj.get("category") {
            None | Some(Value::Null) => None,
            Some(Value::String(c)) => Some(resolve_category(&id, c, &types)?),
            Some(_) => return Err(DatasetError::Json(format!("record {id}: `category` must be a string"))),
        };
        let gold_types = match category {
            Some(CoarseCategory::Resource) => {
                if types.is_empty() {
                    stats.resource_without_types += 1;
                }
                types
            }
            Some(_) => {
                if !types.is_empty() {
                    stats.cleared_category_types += 1;
                }
                Vec::new()
            }
            None => types,
        };
        questions.push(Question {
            id,
            text,
            category,
            gold_types,
        });
    }
    if stats.dropped_empty_text > 0 {
        log::warn!("dropped {} records with empty question text", stats.dropped_empty_text);
    }
    Ok((QuestionDataset::new(questions)?, stats))
}

/// SMART releases encode literal answers as `category: "literal"` with the
/// subtype in `type`; the five-way names are accepted directly as well.
fn resolve_category(id: &str, category: &str, types: &[String]) -> Result<CoarseCategory, DatasetError> {
    if category.eq_ignore_ascii_case("literal") {
        return types
            .first()
            .and_then(|t| t.parse::<CoarseCategory>().ok())
            .filter(|c| c.is_literal())
            .ok_or_else(|| DatasetError::UnknownCategory {
                id: id.to_string(),
                category: format!("literal {:?}", types.first()),
            });
    }
    category.parse().map_err(|_| DatasetError::UnknownCategory {
        id: id.to_string(),
        category: category.to_string(),
    })
}

/// Serializes questions in the SMART layout.
pub fn to_smart_json(ds: &QuestionDataset) -> String {
    let records: Vec<Value> = ds
        .questions
        .iter()
        .map(|q| match q.category {
            None => json!({ "id": q.id, "question": q.text, "category": null, "type": q.gold_types }),
            Some(c) => {
                let (cat, echo) = c.to_smart();
                let types: Vec<String> = match echo {
                    Some(e) => vec![e.to_string()],
                    None => q.gold_types.clone(),
                };
                json!({ "id": q.id, "question": q.text, "category": cat, "type": types })
            }
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("JSON values always serialize")
}

/// Stratified, seeded train/validation split.
///
/// Every category stratum is shuffled with its own stream of one seeded RNG;
/// train sizes follow largest-remainder allocation of `ratio * n` so the
/// global train size is `round(ratio * N)` and each stratum with at least two
/// questions keeps one on each side.
pub fn split_train_validation(
    ds: &QuestionDataset,
    ratio: f64,
    seed: u64,
) -> Result<(QuestionDataset, QuestionDataset), DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    if ds.len() < 5 {
        return Err(DatasetError::TooSmall(ds.len()));
    }

    let mut strata: BTreeMap<Option<CoarseCategory>, Vec<usize>> = BTreeMap::new();
    for (i, q) in ds.questions.iter().enumerate() {
        strata.entry(q.category).or_default().push(i);
    }

    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let train_sizes = allocate(&sizes, ratio);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (members, &n_train) in strata.values().zip(&train_sizes) {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        train_idx.extend_from_slice(&members[..n_train]);
        val_idx.extend_from_slice(&members[n_train..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let pick = |idx: &[usize]| {
        QuestionDataset::new(idx.iter().map(|&i| ds.questions[i].clone()).collect())
            .expect("split of a valid dataset has unique ids")
    };
    Ok((pick(&train_idx), pick(&val_idx)))
}

fn allocate(sizes: &[usize], ratio: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = (total as f64 * ratio).round() as usize;
    let bounds: Vec<(usize, usize)> = sizes
        .iter()
        .map(|&n| if n >= 2 { (1, n - 1) } else { (0, n) })
        .collect();
    let mut alloc: Vec<usize> = sizes
        .iter()
        .zip(&bounds)
        .map(|(&n, &(lo, hi))| ((n as f64 * ratio).floor() as usize).clamp(lo, hi))
        .collect();
    let frac = |alloc: &[usize], i: usize| sizes[i] as f64 * ratio - alloc[i] as f64;

    let mut assigned: usize = alloc.iter().sum();
    while assigned < target {
        let best = (0..sizes.len())
            .filter(|&i| alloc[i] < bounds[i].1)
            .max_by(|&a, &b| frac(&alloc, a).total_cmp(&frac(&alloc, b)).then(b.cmp(&a)));
        match best {
            Some(i) => {
                alloc[i] += 1;
                assigned += 1;
            }
            None => break,
        }
    }
    while assigned > target {
        let best = (0..sizes.len())
            .filter(|&i| alloc[i] > bounds[i].0)
            .min_by(|&a, &b| frac(&alloc, a).total_cmp(&frac(&alloc, b)).then(a.cmp(&b)));
        match best {
            Some(i) => {
                alloc[i] -= 1;
                assigned -= 1;
            }
            None => break,
        }
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str, cat: CoarseCategory) -> Question {
        Question {
            id: id.into(),
            text: format!("question {id}"),
            category: Some(cat),
            gold_types: if cat == CoarseCategory::Resource {
                vec!["dbo:Thing".into()]
            } else {
                vec![]
            },
        }
    }

    #[test]
    fn resource_record_keeps_types() {
        let (ds, _) = parse_smart_json(
            r#"[{"id":"q1","question":"Who wrote it?","category":"resource","type":["dbo:Person"]}]"#,
        )
        .unwrap();
        assert_eq!(ds.questions()[0].gold_types, vec!["dbo:Person"]);
        assert_eq!(ds.type_vocabulary().len(), 1);
    }

    #[test]
    fn category_echo_types_are_cleared() {
        let (ds, stats) = parse_smart_json(
            r#"[{"id":"q1","question":"Is it?","category":"boolean","type":["boolean"]},
                {"id":"q2","question":"How many?","category":"literal","type":["number"]}]"#,
        )
        .unwrap();
        assert_eq!(ds.questions()[0].category, Some(CoarseCategory::Boolean));
        assert_eq!(ds.questions()[1].category, Some(CoarseCategory::Number));
        assert!(ds.questions().iter().all(|q| q.gold_types.is_empty()));
        assert_eq!(stats.cleared_category_types, 2);
        assert!(ds.type_vocabulary().is_empty());
    }

    #[test]
    fn null_questions_are_dropped_and_counted() {
        let (ds, stats) = parse_smart_json(
            r#"[{"id":"a","question":null,"category":"boolean","type":["boolean"]},
                {"id":"b","question":"  ","category":"boolean","type":["boolean"]},
                {"id":"c","question":"ok?","category":"boolean","type":["boolean"]}]"#,
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(stats.dropped_empty_text, 2);
    }

    #[test]
    fn unknown_category_names_the_record() {
        let err = parse_smart_json(r#"[{"id":"q9","question":"x","category":"thing","type":[]}]"#).unwrap_err();
        match err {
            DatasetError::UnknownCategory { id, .. } => assert_eq!(id, "q9"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_smart_json("{not json").is_err());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(matches!(
            QuestionDataset::new(vec![q("x", CoarseCategory::Boolean), q("x", CoarseCategory::Date)]),
            Err(DatasetError::DuplicateId(_))
        ));
    }

    #[test]
    fn split_preserves_minority_strata() {
        let mut qs: Vec<Question> = (0..8).map(|i| q(&format!("r{i}"), CoarseCategory::Resource)).collect();
        qs.push(q("b0", CoarseCategory::Boolean));
        qs.push(q("b1", CoarseCategory::Boolean));
        let ds = QuestionDataset::new(qs).unwrap();
        let (train, val) = split_train_validation(&ds, 0.8, 7).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        let bools = |d: &QuestionDataset| {
            d.questions()
                .iter()
                .filter(|q| q.category == Some(CoarseCategory::Boolean))
                .count()
        };
        assert_eq!(bools(&train), 1);
        assert_eq!(bools(&val), 1);

        let again = split_train_validation(&ds, 0.8, 7).unwrap();
        assert_eq!(again.0, train);
        assert_eq!(again.1, val);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let ds = QuestionDataset::new((0..4).map(|i| q(&i.to_string(), CoarseCategory::Date)).collect()).unwrap();
        assert!(matches!(split_train_validation(&ds, 0.5, 1), Err(DatasetError::TooSmall(4))));
        let ds = QuestionDataset::new((0..6).map(|i| q(&i.to_string(), CoarseCategory::Date)).collect()).unwrap();
        assert!(matches!(split_train_validation(&ds, 1.0, 1), Err(DatasetError::BadRatio(_))));
        assert!(matches!(split_train_validation(&ds, 0.0, 1), Err(DatasetError::BadRatio(_))));
    }

    #[test]
    fn ranking_pool_requires_known_types() {
        let ts = TypeSystem::new(["dbo:Person"], &[], BTreeMap::new(), BTreeMap::new()).unwrap();
        let mut a = q("a", CoarseCategory::Resource);
        a.gold_types = vec!["dbo:Person".into(), "dbo:Ghost".into()];
        let mut b = q("b", CoarseCategory::Resource);
        b.gold_types = vec!["dbo:Ghost".into()];
        let ds = QuestionDataset::new(vec![a, b, q("c", CoarseCategory::Boolean)]).unwrap();
        let pool: Vec<&str> = ds.ranking_pool(Some(&ts)).iter().map(|q| q.id.as_str()).collect();
        assert_eq!(pool, vec!["a"]);
        assert_eq!(ds.ranking_pool(None).len(), 2);
        assert_eq!(ds.unknown_types(&ts), vec!["dbo:Ghost"]);
    }
}
