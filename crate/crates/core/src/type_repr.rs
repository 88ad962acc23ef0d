//! Type vectors z_t for the clustering stage.
//!
//! Four builders produce a [`TypeMatrix`] over the ordered training type
//! vocabulary:
//!
//! * question text TF-IDF, one pseudo-document per type;
//! * Jaccard similarity of entity sets against every other type;
//! * externally trained graph embeddings read from an embedding file;
//! * description embeddings, produced outside this crate from the
//!   documents built by [`assemble_type_descriptions`].

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QuestionDataset;
use crate::kg_store::{EntityTypeIndex, TypeSystem};
use crate::text::{tokenize, VocabularyIndex};

pub const SEP: &str = "[SEP]";

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding file is empty")]
    EmptyFile,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("embedding file contains none of the {0} requested types")]
    NoOverlap(usize),
    #[error("training data has no resource questions with gold types")]
    NoResourceQuestions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprKind {
    QuestionTfidf,
    Jaccard,
    LoadedEmbedding,
    DescriptionEmbedding,
}

impl ReprKind {
    pub const ALL: [ReprKind; 4] = [
        ReprKind::QuestionTfidf,
        ReprKind::Jaccard,
        ReprKind::LoadedEmbedding,
        ReprKind::DescriptionEmbedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReprKind::QuestionTfidf => "question_tfidf",
            ReprKind::Jaccard => "jaccard",
            ReprKind::LoadedEmbedding => "loaded_embedding",
            ReprKind::DescriptionEmbedding => "description_embedding",
        }
    }
}

impl fmt::Display for ReprKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReprKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReprKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown representation `{s}`"))
    }
}

/// Row-major |T′|×d matrix of type vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeMatrix {
    type_ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
    kind: ReprKind,
}

impl TypeMatrix {
    pub fn new(type_ids: Vec<String>, rows: Vec<Vec<f64>>, kind: ReprKind) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == dim), "ragged type matrix");
        assert_eq!(type_ids.len(), rows.len(), "one row per type id");
        Self {
            type_ids,
            data: rows.into_iter().flatten().collect(),
            dim,
            kind,
        }
    }

    pub fn type_ids(&self) -> &[String] {
        &self.type_ids
    }

    pub fn kind(&self) -> ReprKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.type_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0, and a 0-dim matrix still has rows
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn row_of(&self, type_id: &str) -> Option<&[f64]> {
        self.type_ids.iter().position(|t| t == type_id).map(|i| self.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One pseudo-document per type: the concatenated text of every training
/// question listing the type among its gold types, weighted by TF-IDF over
/// the |T′| pseudo-documents and L2-normalized.
pub fn build_question_tfidf_repr(train: &QuestionDataset) -> Result<(TypeMatrix, VocabularyIndex), ReprError> {
    let vocab: Vec<String> = train.type_vocabulary().iter().cloned().collect();
    if vocab.is_empty() {
        return Err(ReprError::NoResourceQuestions);
    }
    let position: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut docs: Vec<Vec<String>> = vec![Vec::new(); vocab.len()];
    for q in train.questions() {
        let tokens = tokenize(&q.text);
        let mut targets: Vec<usize> = q.gold_types.iter().map(|t| position[t.as_str()]).collect();
        targets.sort_unstable();
        targets.dedup();
        for t in targets {
            docs[t].extend(tokens.iter().cloned());
        }
    }
    let index = VocabularyIndex::fit(&docs);
    let dim = index.len();
    let rows = docs
        .iter()
        .map(|doc| index.tfidf(doc).normalized().to_dense(dim))
        .collect();
    Ok((TypeMatrix::new(vocab, rows, ReprKind::QuestionTfidf), index))
}

/// Row t is `[J(t, t_1), …, J(t, t_n)]` over `vocab` order, with
/// `J = |E_t ∩ E_t'| / |E_t ∪ E_t'|` and `J(t, t) = 1`.
pub fn build_jaccard_repr(vocab: &[String], index: &EntityTypeIndex) -> TypeMatrix {
    // intern entities in sorted order so per-type id lists stay sorted
    let entity_ids: HashMap<&str, u32> = index
        .entity_types()
        .keys()
        .enumerate()
        .map(|(i, e)| (e.as_str(), i as u32))
        .collect();
    let sets: Vec<Vec<u32>> = vocab
        .iter()
        .map(|t| {
            index
                .entities_of(t)
                .map(|es| es.iter().map(|e| entity_ids[e.as_str()]).collect())
                .unwrap_or_default()
        })
        .collect();

    let rows: Vec<Vec<f64>> = (0..vocab.len())
        .into_par_iter()
        .map(|i| {
            (0..vocab.len())
                .map(|j| {
                    if i == j {
                        return 1.0;
                    }
                    let inter = sorted_intersection(&sets[i], &sets[j]);
                    let union = sets[i].len() + sets[j].len() - inter;
                    if union == 0 {
                        0.0
                    } else {
                        inter as f64 / union as f64
                    }
                })
                .collect()
        })
        .collect();
    TypeMatrix::new(vocab.to_vec(), rows, ReprKind::Jaccard)
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Scales every nonzero row to unit L2 norm.
pub fn normalize_repr(m: &TypeMatrix) -> TypeMatrix {
    let mut out = m.clone();
    if out.dim == 0 {
        return out;
    }
    for row in out.data.chunks_exact_mut(m.dim) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Parsed embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub kind: ReprKind,
    pub rows: Vec<(String, Vec<f64>)>,
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingFile, ReprError> {
    let text = fs::read_to_string(path).map_err(|source| ReprError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embedding_file(&text)
}

pub fn parse_embedding_file(text: &str) -> Result<EmbeddingFile, ReprError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(ReprError::EmptyFile)?;
    let bad_header = || ReprError::Malformed {
        line: 1,
        reason: "expected header `#dims <d> kind <kind>`".into(),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (dim, kind) = match fields.as_slice() {
        ["#dims", d, "kind", k] => (
            d.parse::<usize>().map_err(|_| bad_header())?,
            k.parse::<ReprKind>().map_err(|_| bad_header())?,
        ),
        _ => return Err(bad_header()),
    };

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.starts_with('#') {
            continue;
        }
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut parts = line.split('\t');
        let id = parts.next().unwrap_or_default().trim();
        if id.is_empty() {
            return Err(ReprError::Malformed {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        let values = parts
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ReprError::Malformed {
                        line: line_no,
                        reason: format!("bad value `{v}`"),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dim {
            return Err(ReprError::DimensionMismatch {
                line: line_no,
                expected: dim,
                found: values.len(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(ReprError::Malformed {
                line: line_no,
                reason: format!("duplicate id `{id}`"),
            });
        }
        rows.push((id.to_string(), values));
    }
    if rows.is_empty() {
        return Err(ReprError::EmptyFile);
    }
    Ok(EmbeddingFile { dim, kind, rows })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EmbeddingLoadReport {
    /// Vocabulary types absent from the file, filled with the mean vector.
    pub imputed: Vec<String>,
    /// Rows in the file for types outside the vocabulary.
    pub ignored: usize,
}

/// Aligns an embedding file to `vocab`, imputing the mean vector for types
/// the file does not cover.
pub fn load_embedding_repr(path: &Path, vocab: &[String]) -> Result<(TypeMatrix, EmbeddingLoadReport), ReprError> {
    align_embeddings(read_embedding_file(path)?, vocab)
}

pub fn align_embeddings(file: EmbeddingFile, vocab: &[String]) -> Result<(TypeMatrix, EmbeddingLoadReport), ReprError> {
    let by_id: HashMap<&str, &[f64]> = file.rows.iter().map(|(id, v)| (id.as_str(), v.as_slice())).collect();
    let wanted: HashSet<&str> = vocab.iter().map(String::as_str).collect();
    let present: Vec<&[f64]> = vocab.iter().filter_map(|t| by_id.get(t.as_str()).copied()).collect();
    if present.is_empty() {
        return Err(ReprError::NoOverlap(vocab.len()));
    }
    let mut mean = vec![0.0; file.dim];
    for row in &present {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= present.len() as f64);

    let mut report = EmbeddingLoadReport {
        ignored: file.rows.iter().filter(|(id, _)| !wanted.contains(id.as_str())).count(),
        ..Default::default()
    };
    let rows = vocab
        .iter()
        .map(|t| match by_id.get(t.as_str()) {
            Some(v) => v.to_vec(),
            None => {
                report.imputed.push(t.clone());
                mean.clone()
            }
        })
        .collect();
    if !report.imputed.is_empty() {
        log::warn!("{} types missing from the embedding file; imputed the mean vector", report.imputed.len());
    }
    Ok((TypeMatrix::new(vocab.to_vec(), rows, file.kind), report))
}

/// Writes `m` in the embedding file format with a `#vocab-order` block.
pub fn render_type_matrix(m: &TypeMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#dims {} kind {}", m.dim, m.kind);
    out.push_str("#vocab-order\n");
    for t in &m.type_ids {
        let _ = writeln!(out, "#\t{t}");
    }
    for (t, row) in m.type_ids.iter().zip(m.rows()) {
        out.push_str(t);
        for v in row {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_type_matrix(path: &Path, m: &TypeMatrix) -> Result<(), ReprError> {
    fs::write(path, render_type_matrix(m)).map_err(|source| ReprError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a persisted matrix back, in file row order.
pub fn read_type_matrix(path: &Path) -> Result<TypeMatrix, ReprError> {
    let file = read_embedding_file(path)?;
    let (ids, rows): (Vec<String>, Vec<Vec<f64>>) = file.rows.into_iter().unzip();
    Ok(TypeMatrix::new(ids, rows, file.kind))
}

/// `t_w [SEP] e¹_w [SEP] … [SEP] eˡ_w` for one type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionDocument {
    pub type_id: String,
    pub text: String,
    pub entity_count: usize,
}

pub const DEFAULT_MAX_ENTITIES: usize = 10;
pub const DEFAULT_MAX_CHARS: usize = 4000;

/// Builds one description document per vocabulary type.
///
/// The type part is the type description, else its label, else the split
/// local name of the id. Up to `max_entities` entity descriptions follow,
/// longest first (ties by entity id). The result is cut at a token boundary
/// to at most `max_chars` characters.
pub fn assemble_type_descriptions(
    ts: &TypeSystem,
    index: &EntityTypeIndex,
    vocab: &[String],
    max_entities: usize,
    max_chars: usize,
) -> Vec<DescriptionDocument> {
    assert!(max_chars > 0, "max_chars must be positive");
    vocab
        .iter()
        .map(|t| {
            let own = [ts.description(t), ts.label(t)]
                .into_iter()
                .flatten()
                .map(clean_description)
                .find(|s| !s.is_empty())
                .unwrap_or_else(|| local_name_words(t));

            let mut entities: Vec<(&str, String)> = index
                .entities_of(t)
                .into_iter()
                .flatten()
                .filter_map(|e| {
                    let d = clean_description(index.entity_description(e)?);
                    (!d.is_empty()).then_some((e.as_str(), d))
                })
                .collect();
            entities.sort_by(|a, b| {
                b.1.chars()
                    .count()
                    .cmp(&a.1.chars().count())
                    .then_with(|| a.0.cmp(b.0))
            });
            entities.truncate(max_entities);

            let mut tokens: Vec<&str> = own.split(' ').collect();
            for (_, d) in &entities {
                tokens.push(SEP);
                tokens.extend(d.split(' '));
            }
            let text = truncate_tokens(&tokens, max_chars);
            let entity_count = text.split(' ').filter(|w| *w == SEP).count();
            DescriptionDocument {
                type_id: t.clone(),
                text,
                entity_count,
            }
        })
        .collect()
}

fn clean_description(s: &str) -> String {
    s.split_whitespace().filter(|w| *w != SEP).collect::<Vec<_>>().join(" ")
}

/// Greedy token packing; a dangling trailing separator is dropped.
fn truncate_tokens(tokens: &[&str], max_chars: usize) -> String {
    let mut out = String::new();
    let mut len = 0;
    for tok in tokens {
        let add = tok.chars().count() + usize::from(len > 0);
        if len + add > max_chars {
            break;
        }
        if len > 0 {
            out.push(' ');
        }
        out.push_str(tok);
        len += add;
    }
    if out.is_empty() {
        // the first token alone is longer than the budget
        return tokens.first().map(|t| t.chars().take(max_chars).collect()).unwrap_or_default();
    }
    while out == SEP || out.ends_with(&format!(" {SEP}")) {
        let cut = out.len() - SEP.len();
        out.truncate(cut.saturating_sub(1));
    }
    out
}

/// "dbo:SoccerPlayer" → "soccer player".
pub fn local_name_words(type_id: &str) -> String {
    let local = type_id.rsplit(['/', '#', ':']).next().unwrap_or(type_id);
    let mut words: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for c in local.chars() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        cur.extend(c.to_lowercase());
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    if words.is_empty() {
        type_id.to_string()
    } else {
        words.join(" ")
    }
}

/// Sidecar input: `<type_id>\t<text>` per line.
pub fn render_description_documents(docs: &[DescriptionDocument]) -> String {
    docs.iter().map(|d| format!("{}\t{}\n", d.type_id, d.text)).collect()
}
