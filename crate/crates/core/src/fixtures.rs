//! Synthetic knowledge graphs and question sets with known answers.
//!
//! Types form a tree given by a branching factor per level. Every type has a
//! unique marker keyword that appears in all of its questions, so the gold
//! types of a question are recoverable from its text by a linear model.
//! Entities are typed with their type and all its ancestors; siblings share a
//! configurable fraction of their own entities.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{to_smart_json, CoarseCategory, Question, QuestionDataset};
use crate::kg_store::{write_kg_tables, EntityTypeIndex, KgError, TypeSystem};
use crate::ranker::{render_predictions, RankedPrediction, ScoredType};

pub const TRAIN_FILE: &str = "train.json";
pub const TEST_FILE: &str = "test.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const KG_DIR: &str = "kg";

const FILLERS: [&str; 16] = [
    "famous", "largest", "known", "old", "first", "great", "small", "new", "main", "local", "recent", "early",
    "big", "major", "notable", "single",
];

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture parameter `{0}` must be positive")]
    ZeroCount(&'static str),
    #[error("sibling overlap ratio {0} is outside [0, 1]")]
    BadOverlap(f64),
    #[error("keyword vocabulary has {found} words but the fixture has {needed} types")]
    TooFewKeywords { needed: usize, found: usize },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    /// Children per node at each level; the first entry is the number of roots.
    pub branching: Vec<usize>,
    pub entities_per_type: usize,
    /// Fraction of a type's own entities shared with all of its siblings.
    pub sibling_overlap: f64,
    pub questions_per_type: usize,
    pub test_questions_per_type: usize,
    /// Train questions per literal or boolean category.
    pub literal_questions: usize,
    pub test_literal_questions: usize,
    /// Marker words, one per type in creation order. Generated when empty.
    pub keywords: Vec<String>,
    pub seed: u64,
}

impl Default for FixtureSpec {
    /// 27 types over three levels, 20 training questions per type.
    fn default() -> Self {
        Self {
            branching: vec![3, 2, 3],
            entities_per_type: 20,
            sibling_overlap: 0.5,
            questions_per_type: 20,
            test_questions_per_type: 4,
            literal_questions: 20,
            test_literal_questions: 5,
            keywords: Vec::new(),
            seed: 7,
        }
    }
}

impl FixtureSpec {
    pub fn type_count(&self) -> usize {
        let mut level = 1;
        let mut total = 0;
        for &b in &self.branching {
            level *= b;
            total += level;
        }
        total
    }

    pub fn depth(&self) -> usize {
        self.branching.len()
    }

    fn validate(&self) -> Result<(), FixtureError> {
        if self.branching.is_empty() || self.branching.contains(&0) {
            return Err(FixtureError::ZeroCount("branching"));
        }
        for (name, v) in [
            ("entities_per_type", self.entities_per_type),
            ("questions_per_type", self.questions_per_type),
            ("test_questions_per_type", self.test_questions_per_type),
        ] {
            if v == 0 {
                return Err(FixtureError::ZeroCount(name));
            }
        }
        if !(0.0..=1.0).contains(&self.sibling_overlap) {
            return Err(FixtureError::BadOverlap(self.sibling_overlap));
        }
        if !self.keywords.is_empty() && self.keywords.len() < self.type_count() {
            return Err(FixtureError::TooFewKeywords {
                needed: self.type_count(),
                found: self.keywords.len(),
            });
        }
        Ok(())
    }
}

/// Pronounceable, digit-free marker for type number `i`.
pub fn marker_word(i: usize) -> String {
    const CONS: &[u8] = b"bdfgklmnprstvz";
    const VOW: &[u8] = b"aeiou";
    let mut n = i;
    let mut w = String::from("q");
    loop {
        w.push(CONS[n % CONS.len()] as char);
        n /= CONS.len();
        w.push(VOW[n % VOW.len()] as char);
        n /= VOW.len();
        if n == 0 {
            break;
        }
    }
    w.push('x');
    w
}

#[derive(Debug, Clone)]
pub struct FixtureType {
    pub id: String,
    pub parent: Option<String>,
    pub depth: usize,
    pub marker: String,
    /// Ids of this type and its ancestors, most specific first.
    pub lineage: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub types: Vec<FixtureType>,
    pub type_system: TypeSystem,
    pub index: EntityTypeIndex,
    pub train: QuestionDataset,
    pub test: QuestionDataset,
    /// Optimal prediction for every test question.
    pub manifest: Vec<RankedPrediction>,
}

impl Fixture {
    /// Pairs of distinct types sharing a parent.
    pub fn sibling_pairs(&self) -> Vec<(String, String)> {
        let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for t in &self.types {
            if let Some(p) = &t.parent {
                groups.entry(p).or_default().push(&t.id);
            }
        }
        let mut out = Vec::new();
        for g in groups.values() {
            for (i, a) in g.iter().enumerate() {
                for b in &g[i + 1..] {
                    out.push((a.to_string(), b.to_string()));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixturePaths {
    pub kg_dir: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub manifest: PathBuf,
}

impl FixturePaths {
    pub fn under(dir: &Path) -> Self {
        Self {
            kg_dir: dir.join(KG_DIR),
            train: dir.join(TRAIN_FILE),
            test: dir.join(TEST_FILE),
            manifest: dir.join(MANIFEST_FILE),
        }
    }
}

fn build_types(spec: &FixtureSpec) -> Vec<FixtureType> {
    let mut types: Vec<FixtureType> = Vec::new();
    let mut frontier: Vec<Option<usize>> = vec![None];
    for (depth, &b) in spec.branching.iter().enumerate() {
        let mut next = Vec::new();
        for parent in frontier {
            for c in 0..b {
                let i = types.len();
                let (id, lineage) = match parent {
                    None => (format!("fx:T{c}"), Vec::new()),
                    Some(p) => (format!("{}_{c}", types[p].id), types[p].lineage.clone()),
                };
                let marker = spec.keywords.get(i).cloned().unwrap_or_else(|| marker_word(i));
                types.push(FixtureType {
                    lineage: std::iter::once(id.clone()).chain(lineage).collect(),
                    id,
                    parent: parent.map(|p| types[p].id.clone()),
                    depth,
                    marker,
                });
                next.push(Some(i));
            }
        }
        frontier = next;
    }
    types
}

fn fillers(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| *FILLERS.choose(rng).expect("non-empty filler list"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn resource_text(rng: &mut ChaCha8Rng, marker: &str) -> String {
    let f = fillers(rng, 2);
    match rng.gen_range(0..3) {
        0 => format!("which {marker} is the {f} one"),
        1 => format!("which {f} {marker} was mentioned"),
        _ => format!("name the {f} {marker} which appears"),
    }
}

fn literal_text(rng: &mut ChaCha8Rng, cat: CoarseCategory) -> String {
    let f = fillers(rng, 2);
    match cat {
        CoarseCategory::Boolean => format!("is there a {f} thing"),
        CoarseCategory::Number => format!("how many {f} things exist"),
        CoarseCategory::Date => format!("when did the {f} event happen"),
        CoarseCategory::String => format!("what {f} word is it called"),
        CoarseCategory::Resource => unreachable!("resource questions use markers"),
    }
}

fn generate_questions(
    types: &[FixtureType],
    rng: &mut ChaCha8Rng,
    prefix: &str,
    per_type: usize,
    per_literal: usize,
) -> Vec<Question> {
    let mut out = Vec::new();
    let mut push = |text: String, category: CoarseCategory, gold: Vec<String>| {
        out.push(Question {
            id: format!("{prefix}-{:05}", out.len()),
            text,
            category: Some(category),
            gold_types: gold,
        });
    };
    for t in types {
        for _ in 0..per_type {
            push(resource_text(rng, &t.marker), CoarseCategory::Resource, t.lineage.clone());
        }
    }
    for cat in CoarseCategory::ALL.into_iter().filter(|c| *c != CoarseCategory::Resource) {
        for _ in 0..per_literal {
            push(literal_text(rng, cat), cat, Vec::new());
        }
    }
    out
}

pub fn build_fixture(spec: &FixtureSpec) -> Result<Fixture, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let types = build_types(spec);
    let by_id: BTreeMap<&str, &FixtureType> = types.iter().map(|t| (t.id.as_str(), t)).collect();

    // entities: shared pool per sibling group plus own entities per type
    let shared_n = (spec.sibling_overlap * spec.entities_per_type as f64).round() as usize;
    let own_n = spec.entities_per_type - shared_n;
    let mut assertions: Vec<(String, String)> = Vec::new();
    let mut entity_descriptions = BTreeMap::new();
    let mut add_entity = |entity: String, t: &FixtureType, text: String| {
        for ancestor in &t.lineage {
            assertions.push((entity.clone(), ancestor.clone()));
        }
        entity_descriptions.entry(entity).or_insert(text);
    };
    for t in &types {
        for i in 0..own_n {
            add_entity(format!("fx:e_{}_{i}", t.id.trim_start_matches("fx:")), t, format!("an item of kind {}", t.marker));
        }
        let group = t.parent.as_deref().unwrap_or("root").trim_start_matches("fx:");
        for i in 0..shared_n {
            add_entity(format!("fx:s_{group}_{i}"), t, format!("a shared item near {}", t.marker));
        }
    }

    let edges: Vec<(String, String)> = types
        .iter()
        .filter_map(|t| t.parent.as_ref().map(|p| (t.id.clone(), p.clone())))
        .collect();
    let labels = types.iter().map(|t| (t.id.clone(), format!("{} type", t.marker))).collect();
    let descriptions = types
        .iter()
        .map(|t| {
            let parent = t.parent.as_deref().and_then(|p| by_id.get(p)).map(|p| p.marker.as_str());
            let text = match parent {
                Some(p) => format!("a kind of {p} known as {}", t.marker),
                None => format!("the top level kind {}", t.marker),
            };
            (t.id.clone(), text)
        })
        .collect();
    let type_system = TypeSystem::new(types.iter().map(|t| t.id.clone()), &edges, labels, descriptions)?;
    let index = EntityTypeIndex::new(&assertions, entity_descriptions);

    let mut train_q = generate_questions(&types, &mut rng, "train", spec.questions_per_type, spec.literal_questions);
    let mut test_q = generate_questions(&types, &mut rng, "test", spec.test_questions_per_type, spec.test_literal_questions);
    // interleave categories so file order carries no signal
    train_q.shuffle(&mut rng);
    test_q.shuffle(&mut rng);
    let train = QuestionDataset::new(train_q).expect("generated ids are unique");
    let test = QuestionDataset::new(test_q).expect("generated ids are unique");

    let manifest = test
        .questions()
        .iter()
        .map(|q| RankedPrediction {
            id: q.id.clone(),
            category: q.category.unwrap_or(CoarseCategory::Resource),
            ranked_types: q
                .gold_types
                .iter()
                .map(|t| ScoredType {
                    type_id: t.clone(),
                    score: 1.0,
                })
                .collect(),
        })
        .collect();

    Ok(Fixture {
        types,
        type_system,
        index,
        train,
        test,
        manifest,
    })
}

fn write(path: &Path, text: &str) -> Result<(), FixtureError> {
    fs::write(path, text).map_err(|source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes KG tables, train/test JSON and the manifest under `dir`.
pub fn write_fixture(fixture: &Fixture, dir: &Path) -> Result<FixturePaths, FixtureError> {
    let paths = FixturePaths::under(dir);
    fs::create_dir_all(&paths.kg_dir).map_err(|source| FixtureError::Io {
        path: paths.kg_dir.clone(),
        source,
    })?;
    write_kg_tables(&paths.kg_dir, &fixture.type_system, &fixture.index).map_err(|source| FixtureError::Io {
        path: paths.kg_dir.clone(),
        source,
    })?;
    write(&paths.train, &to_smart_json(&fixture.train))?;
    write(&paths.test, &to_smart_json(&fixture.test))?;
    write(&paths.manifest, &render_predictions(&fixture.manifest))?;
    Ok(paths)
}

pub fn generate_fixture(spec: &FixtureSpec, dir: &Path) -> Result<FixturePaths, FixtureError> {
    write_fixture(&build_fixture(spec)?, dir)
}
