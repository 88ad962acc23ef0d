//! Tokenization, vocabularies and TF-IDF weighting.
//!
//! Tokens are lowercased maximal alphanumeric runs; tokens shorter than two
//! characters and pure digit strings are dropped. TF is the raw count and
//! `idf = ln((N + 1) / (df + 1)) + 1`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2 && !t.chars().all(|c| c.is_ascii_digit()))
        .map(str::to_lowercase)
        .collect()
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    /// Builds from unsorted `(index, value)` pairs, summing duplicates.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut map: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, v) in pairs {
            *map.entry(i).or_insert(0.0) += v;
        }
        let (indices, values) = map.into_iter().filter(|&(_, v)| v != 0.0).unzip();
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| dense[i as usize] * v).sum()
    }

    /// Merge-join dot product with another sorted sparse vector.
    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, v) in self.iter() {
            out[i as usize] = v;
        }
        out
    }
}

/// Ordered token vocabulary with document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct VocabularyIndex {
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    document_frequency: Vec<usize>,
    n_docs: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    n_docs: usize,
    tokens: Vec<String>,
    document_frequency: Vec<usize>,
}

impl From<VocabularyRepr> for VocabularyIndex {
    fn from(r: VocabularyRepr) -> Self {
        let token_to_id = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self {
            tokens: r.tokens,
            token_to_id,
            document_frequency: r.document_frequency,
            n_docs: r.n_docs,
        }
    }
}

impl From<VocabularyIndex> for VocabularyRepr {
    fn from(v: VocabularyIndex) -> Self {
        Self {
            n_docs: v.n_docs,
            tokens: v.tokens,
            document_frequency: v.document_frequency,
        }
    }
}

impl VocabularyIndex {
    /// Fits over tokenized documents. Tokens are sorted lexicographically.
    pub fn fit<D: AsRef<[String]>>(docs: &[D]) -> Self {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.as_ref().iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let tokens: Vec<String> = df.keys().map(|t| t.to_string()).collect();
        let document_frequency = df.values().copied().collect();
        VocabularyRepr {
            n_docs: docs.len(),
            tokens,
            document_frequency,
        }
        .into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn document_frequency(&self, id: u32) -> usize {
        self.document_frequency[id as usize]
    }

    pub fn idf(&self, id: u32) -> f64 {
        let n = self.n_docs as f64;
        let df = self.document_frequency[id as usize] as f64;
        ((n + 1.0) / (df + 1.0)).ln() + 1.0
    }

    /// Raw term counts over known tokens; unknown tokens are ignored.
    pub fn term_counts(&self, tokens: &[String]) -> SparseVec {
        SparseVec::from_pairs(tokens.iter().filter_map(|t| self.id(t)).map(|i| (i, 1.0)))
    }

    /// Unnormalized TF-IDF weights.
    pub fn tfidf(&self, tokens: &[String]) -> SparseVec {
        let mut v = self.term_counts(tokens);
        for (i, w) in v.indices.iter().zip(v.values.iter_mut()) {
            *w *= self.idf(*i);
        }
        v
    }
}

/// TF-IDF question encoder shared by the category, matcher and ranker models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionFeaturizer {
    vocabulary: VocabularyIndex,
}

impl QuestionFeaturizer {
    /// One document per question text.
    pub fn fit<S: AsRef<str>>(texts: &[S]) -> Self {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
        Self {
            vocabulary: VocabularyIndex::fit(&docs),
        }
    }

    pub fn vocabulary(&self) -> &VocabularyIndex {
        &self.vocabulary
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    /// L2-normalized TF-IDF vector of `text`.
    pub fn featurize(&self, text: &str) -> SparseVec {
        self.vocabulary.tfidf(&tokenize(text)).normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("Who is the C.E.O. of X-Men (2000)? It's 42nd"),
            vec!["who", "is", "the", "of", "men", "it", "42nd"]
        );
        assert_eq!(tokenize("Zürich ÉCOLE"), vec!["zürich", "école"]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn raw_counts_before_weighting() {
        let docs = vec![tokenize("who who is")];
        let vocab = VocabularyIndex::fit(&docs);
        let counts = vocab.term_counts(&docs[0]);
        assert_eq!(counts.iter().collect::<Vec<_>>(), vec![(0, 1.0), (1, 2.0)]);
        assert_eq!(vocab.tokens(), ["is", "who"]);
    }

    #[test]
    fn idf_is_smoothed() {
        let docs = vec![tokenize("alpha beta"), tokenize("alpha gamma"), tokenize("alpha")];
        let vocab = VocabularyIndex::fit(&docs);
        let alpha = vocab.id("alpha").unwrap();
        let beta = vocab.id("beta").unwrap();
        assert_eq!(vocab.document_frequency(alpha), 3);
        assert!((vocab.idf(alpha) - 1.0).abs() < 1e-12);
        assert!((vocab.idf(beta) - ((4.0f64 / 2.0).ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn featurizer_ignores_unseen_tokens() {
        let f = QuestionFeaturizer::fit(&["which river flows", "who wrote hamlet"]);
        assert_eq!(f.featurize("which river"), f.featurize("which river zebra quux"));
        assert!(f.featurize("zebra").is_empty());
        assert!((f.featurize("who wrote").norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vocabulary_serde_rebuilds_lookup() {
        let f = QuestionFeaturizer::fit(&["alpha beta", "beta gamma"]);
        let json = serde_json::to_string(&f).unwrap();
        let back: QuestionFeaturizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.vocabulary().id("gamma"), Some(2));
    }

    #[test]
    fn sparse_dot_matches_dense() {
        let a = SparseVec::from_pairs([(3, 1.0), (1, 2.0), (3, 1.0)]);
        let b = SparseVec::from_pairs([(1, 0.5), (2, 4.0), (3, -1.0)]);
        assert_eq!(a.indices, vec![1, 3]);
        assert_eq!(a.dot(&b), a.dot_dense(&b.to_dense(4)));
        assert_eq!(a.dot(&b), -1.0);
    }
}
