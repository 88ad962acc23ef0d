//! Label ranking within clusters, score fusion and top-k prediction.
//!
//! Each type gets a one-vs-all logistic ranker h(q, t) trained on the
//! questions that have a gold type in the type's cluster. The final score is
//! `f(q, t) = sigmoid(w0 + w1 * m(q, c) + w2 * h(q, t))` with the weights fit
//! on held-out questions.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::category::CategoryModel;
use crate::clustering::ClusterModel;
use crate::dataset::{CoarseCategory, Question};
use crate::linear::{sigmoid, train_binary, BinaryLogistic, ModelError, TrainParams};
use crate::matcher::{gold_clusters, ExternalScores, MatcherModel};
use crate::text::{QuestionFeaturizer, SparseVec};

pub const DEFAULT_B: usize = 3;
pub const DEFAULT_K_OUT: usize = 10;
/// Negative pairs kept per validation question when fitting the fusion.
pub const DEFAULT_FUSION_NEGATIVES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRanker {
    pub cluster: usize,
    pub classifier: BinaryLogistic,
    /// Set when the training pool had a single label and no model was fit.
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub rankers: BTreeMap<String, TypeRanker>,
    pub params: TrainParams,
}

impl RankerModel {
    pub fn score(&self, type_id: &str, x: &SparseVec) -> Option<f64> {
        self.rankers.get(type_id).map(|r| r.classifier.score(x))
    }
}

pub fn train_ranker(
    pool: &[&Question],
    cm: &ClusterModel,
    featurizer: &QuestionFeaturizer,
    params: &TrainParams,
) -> Result<RankerModel, ModelError> {
    let features: Vec<SparseVec> = pool.iter().map(|q| featurizer.featurize(&q.text)).collect();
    let gold: Vec<Vec<&str>> = pool
        .iter()
        .map(|q| q.gold_types.iter().map(String::as_str).collect())
        .collect();
    for q in pool {
        gold_clusters(q, cm)?;
    }
    Ok(train_ranker_on(&features, &gold, cm, featurizer.dim(), params))
}

/// Training on precomputed features; `gold[i]` lists the gold types of
/// example i, all of which must be assigned in `cm`.
pub fn train_ranker_on(
    features: &[SparseVec],
    gold: &[Vec<&str>],
    cm: &ClusterModel,
    dim: usize,
    params: &TrainParams,
) -> RankerModel {
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); cm.k];
    for (i, types) in gold.iter().enumerate() {
        let mut cs: Vec<usize> = types.iter().filter_map(|t| cm.cluster_of(t)).collect();
        cs.sort_unstable();
        cs.dedup();
        for c in cs {
            pools[c].push(i);
        }
    }
    let tasks: Vec<(usize, String)> = cm
        .members()
        .into_iter()
        .enumerate()
        .flat_map(|(c, ts)| ts.into_iter().map(move |t| (c, t)))
        .collect();

    let rankers = tasks
        .into_par_iter()
        .map(|(c, t)| {
            let pool = &pools[c];
            let xs: Vec<&SparseVec> = pool.iter().map(|&i| &features[i]).collect();
            let ys: Vec<bool> = pool.iter().map(|&i| gold[i].contains(&t.as_str())).collect();
            let pos = ys.iter().filter(|&&y| y).count();
            let neg = ys.len() - pos;
            let ranker = if pos == 0 || neg == 0 {
                if neg == 0 && pos > 0 {
                    log::info!("type {t}: every question in its cluster pool is a positive; using a constant ranker");
                }
                TypeRanker {
                    cluster: c,
                    classifier: BinaryLogistic::constant(((pos as f64 + 1.0) / (neg as f64 + 1.0)).ln()),
                    constant: true,
                }
            } else {
                TypeRanker {
                    cluster: c,
                    classifier: train_binary(&xs, &ys, dim, params).0,
                    constant: false,
                }
            };
            (t, ranker)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    RankerModel {
        rankers,
        params: *params,
    }
}

/// Logistic combiner over (1, m, h).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub fitted: bool,
    /// Both slopes are zero, so f is constant.
    pub degenerate: bool,
}

impl FusionModel {
    pub fn score(&self, m: f64, h: f64) -> f64 {
        sigmoid(self.w0 + self.w1 * m + self.w2 * h)
    }

    pub fn is_monotone(&self) -> bool {
        self.w1 >= 0.0 && self.w2 >= 0.0
    }
}

impl Default for FusionModel {
    /// Unfitted equal-weight combiner.
    fn default() -> Self {
        Self {
            w0: 0.0,
            w1: 1.0,
            w2: 1.0,
            fitted: false,
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub type_id: String,
    pub cluster: usize,
    pub m: f64,
    pub h: f64,
}

/// Everything needed to produce m and h for a question.
pub struct TypeScorer<'a> {
    pub featurizer: &'a QuestionFeaturizer,
    pub clusters: &'a ClusterModel,
    pub matcher: Option<&'a MatcherModel>,
    pub external: Option<&'a ExternalScores>,
    pub ranker: &'a RankerModel,
    members: Vec<Vec<String>>,
}

impl<'a> TypeScorer<'a> {
    pub fn new(
        featurizer: &'a QuestionFeaturizer,
        clusters: &'a ClusterModel,
        matcher: Option<&'a MatcherModel>,
        external: Option<&'a ExternalScores>,
        ranker: &'a RankerModel,
    ) -> Self {
        Self {
            featurizer,
            clusters,
            matcher,
            external,
            ranker,
            members: clusters.members(),
        }
    }

    /// External scores win; the built-in matcher covers missing questions.
    pub fn cluster_scores(&self, q: &Question, x: &SparseVec) -> Result<Vec<f64>, ModelError> {
        if let Some(s) = self.external.and_then(|e| e.get(&q.id)) {
            return Ok(s.to_vec());
        }
        self.matcher
            .map(|mm| mm.score_features(x))
            .ok_or_else(|| ModelError::MissingScores(q.id.clone()))
    }

    /// Top-b clusters by m, ties to the lower cluster id.
    pub fn open_clusters(scores: &[f64], b: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &c| scores[c].total_cmp(&scores[a]).then(a.cmp(&c)));
        order.truncate(b.min(scores.len()));
        order
    }

    /// All types in the `b` highest-scoring clusters with their m and h.
    pub fn candidates(&self, q: &Question, b: usize) -> Result<Vec<Candidate>, ModelError> {
        let x = self.featurizer.featurize(&q.text);
        let m = self.cluster_scores(q, &x)?;
        let mut out = Vec::new();
        for c in Self::open_clusters(&m, b) {
            for t in &self.members[c] {
                if let Some(h) = self.ranker.score(t, &x) {
                    out.push(Candidate {
                        type_id: t.clone(),
                        cluster: c,
                        m: m[c],
                        h,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Regularization on the fusion slopes; the intercept gets a tiny ridge for
/// numerical stability only.
const FUSION_L2: f64 = 1e-3;
const FUSION_L2_INTERCEPT: f64 = 1e-8;

/// Fits the fusion weights on validation questions.
///
/// Pairs come from the top-`b` clusters of each question; all positives are
/// kept and at most `max_negatives` negatives per question are sampled with a
/// seeded RNG. Slopes are constrained to be non-negative.
pub fn fit_fusion(
    val_pool: &[&Question],
    scorer: &TypeScorer<'_>,
    b: usize,
    max_negatives: usize,
    seed: u64,
) -> Result<FusionModel, ModelError> {
    if val_pool.is_empty() {
        return Err(ModelError::NoValidationQuestions);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<([f64; 3], bool)> = Vec::new();
    for q in val_pool {
        let cands = scorer.candidates(q, b)?;
        let (pos, mut neg): (Vec<&Candidate>, Vec<&Candidate>) =
            cands.iter().partition(|c| q.gold_types.contains(&c.type_id));
        if neg.len() > max_negatives {
            neg.shuffle(&mut rng);
            neg.truncate(max_negatives);
        }
        pairs.extend(pos.iter().map(|c| ([1.0, c.m, c.h], true)));
        pairs.extend(neg.iter().map(|c| ([1.0, c.m, c.h], false)));
    }
    Ok(fit_fusion_pairs(&pairs))
}

/// Non-negative-slope logistic fit over `([1, m, h], label)` pairs.
pub fn fit_fusion_pairs(pairs: &[([f64; 3], bool)]) -> FusionModel {
    let n_pos = pairs.iter().filter(|p| p.1).count();
    if n_pos == 0 || n_pos == pairs.len() {
        log::warn!("fusion fit failed: validation pairs contain a single label");
        return FusionModel {
            w0: 0.0,
            w1: 0.0,
            w2: 0.0,
            fitted: true,
            degenerate: true,
        };
    }
    // active-set search: the convex optimum under w1, w2 >= 0 is the best
    // feasible unconstrained optimum over the four free sets
    let free_sets: [&[usize]; 4] = [&[0, 1, 2], &[0, 1], &[0, 2], &[0]];
    let mut best: Option<([f64; 3], f64)> = None;
    for free in free_sets {
        let w = newton_logistic(pairs, free);
        if w[1] < 0.0 || w[2] < 0.0 {
            continue;
        }
        let loss = fusion_objective(pairs, &w);
        if best.is_none_or(|(_, l)| loss < l) {
            best = Some((w, loss));
        }
        if free.len() == 3 {
            break;
        }
    }
    let (w, _) = best.expect("the intercept-only fit is always feasible");
    let degenerate = w[1].abs() < 1e-12 && w[2].abs() < 1e-12;
    if degenerate {
        log::warn!("fusion fit failed: both slopes are zero, fused scores are constant");
    }
    FusionModel {
        w0: w[0],
        w1: w[1],
        w2: w[2],
        fitted: true,
        degenerate,
    }
}

fn penalty(j: usize) -> f64 {
    if j == 0 {
        FUSION_L2_INTERCEPT
    } else {
        FUSION_L2
    }
}

fn fusion_objective(pairs: &[([f64; 3], bool)], w: &[f64; 3]) -> f64 {
    let n = pairs.len() as f64;
    let data: f64 = pairs
        .iter()
        .map(|(x, y)| {
            let z = w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
            let sp = z.max(0.0) + (-z.abs()).exp().ln_1p();
            sp - if *y { z } else { 0.0 }
        })
        .sum::<f64>()
        / n;
    data + 0.5 * (0..3).map(|j| penalty(j) * w[j] * w[j]).sum::<f64>()
}

/// Damped Newton on the coordinates in `free`; the others stay at zero.
fn newton_logistic(pairs: &[([f64; 3], bool)], free: &[usize]) -> [f64; 3] {
    let n = pairs.len() as f64;
    let mut w = [0.0; 3];
    let mut obj = fusion_objective(pairs, &w);
    for _ in 0..100 {
        let d = free.len();
        let mut g = vec![0.0; d];
        let mut h = vec![vec![0.0; d]; d];
        for (x, y) in pairs {
            let z = w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
            let p = sigmoid(z);
            let r = p - f64::from(u8::from(*y));
            let s = p * (1.0 - p);
            for (a, &ja) in free.iter().enumerate() {
                g[a] += r * x[ja] / n;
                for (c, &jc) in free.iter().enumerate() {
                    h[a][c] += s * x[ja] * x[jc] / n;
                }
            }
        }
        for (a, &ja) in free.iter().enumerate() {
            g[a] += penalty(ja) * w[ja];
            h[a][a] += penalty(ja);
        }
        let Some(step) = solve(h, g.clone()) else { break };
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-10 {
            let mut cand = w;
            for (a, &ja) in free.iter().enumerate() {
                cand[ja] -= t * step[a];
            }
            let c_obj = fusion_objective(pairs, &cand);
            if c_obj <= obj {
                let gain = obj - c_obj;
                w = cand;
                obj = c_obj;
                improved = gain > 1e-15;
                break;
            }
            t *= 0.5;
        }
        if !improved || g.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-10 {
            break;
        }
    }
    w
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredType {
    pub type_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub id: String,
    pub category: CoarseCategory,
    pub ranked_types: Vec<ScoredType>,
}

/// Where the coarse category of a prediction comes from.
#[derive(Clone, Copy)]
pub enum CategorySource<'a> {
    Model(&'a CategoryModel),
    /// Every question is treated as this category (type-only evaluation
    /// forces `resource`).
    Fixed(CoarseCategory),
}

pub fn predict_topk(
    q: &Question,
    scorer: &TypeScorer<'_>,
    fusion: &FusionModel,
    category: CategorySource<'_>,
    b: usize,
    k_out: usize,
) -> Result<RankedPrediction, ModelError> {
    let predicted = match category {
        CategorySource::Model(m) => m.predict_features(&scorer.featurizer.featurize(&q.text)),
        CategorySource::Fixed(c) => c,
    };
    if predicted != CoarseCategory::Resource {
        return Ok(RankedPrediction {
            id: q.id.clone(),
            category: predicted,
            ranked_types: Vec::new(),
        });
    }
    let mut scored: Vec<(Candidate, f64)> = scorer
        .candidates(q, b)?
        .into_iter()
        .map(|c| {
            let f = fusion.score(c.m, c.h);
            (c, f)
        })
        .collect();
    sort_by_fused(&mut scored);
    scored.truncate(k_out);
    Ok(RankedPrediction {
        id: q.id.clone(),
        category: predicted,
        ranked_types: scored
            .into_iter()
            .map(|(c, f)| ScoredType {
                type_id: c.type_id,
                score: f,
            })
            .collect(),
    })
}

/// Descending f, then higher m, then lexicographic type id.
pub fn sort_by_fused(scored: &mut [(Candidate, f64)]) {
    scored.sort_by(|(a, fa), (b, fb)| {
        fb.total_cmp(fa)
            .then(b.m.total_cmp(&a.m))
            .then_with(|| a.type_id.cmp(&b.type_id))
    });
}

pub fn predict_all(
    questions: &[Question],
    scorer: &TypeScorer<'_>,
    fusion: &FusionModel,
    category: CategorySource<'_>,
    b: usize,
    k_out: usize,
) -> Result<Vec<RankedPrediction>, ModelError> {
    questions
        .par_iter()
        .map(|q| predict_topk(q, scorer, fusion, category, b, k_out))
        .collect()
}

/// A prediction as read from a SMART submission file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub id: String,
    pub category: Option<CoarseCategory>,
    pub types: Vec<String>,
}

impl From<&RankedPrediction> for Submission {
    fn from(p: &RankedPrediction) -> Self {
        Self {
            id: p.id.clone(),
            category: Some(p.category),
            types: p.ranked_types.iter().map(|s| s.type_id.clone()).collect(),
        }
    }
}

/// SMART submission JSON.
pub fn render_predictions(preds: &[RankedPrediction]) -> String {
    let records: Vec<Value> = preds
        .iter()
        .map(|p| {
            let (cat, echo) = p.category.to_smart();
            let types: Vec<&str> = match echo {
                Some(e) => vec![e],
                None => p.ranked_types.iter().map(|s| s.type_id.as_str()).collect(),
            };
            json!({ "id": p.id, "category": cat, "type": types })
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("JSON values always serialize")
}

/// Parses a SMART submission; literal and boolean type echoes are dropped.
pub fn parse_predictions(text: &str) -> Result<Vec<Submission>, crate::dataset::DatasetError> {
    // predictions share the dataset layout minus the question text
    let value: Value = serde_json::from_str(text).map_err(|e| crate::dataset::DatasetError::Json(e.to_string()))?;
    let mut records = value
        .as_array()
        .ok_or_else(|| crate::dataset::DatasetError::Json("top-level value must be an array".into()))?
        .clone();
    for r in &mut records {
        if let Some(obj) = r.as_object_mut() {
            obj.insert("question".into(), Value::String("-".into()));
        }
    }
    let (ds, _) = crate::dataset::parse_smart_json(&Value::Array(records).to_string())?;
    Ok(ds
        .questions()
        .iter()
        .map(|q| Submission {
            id: q.id.clone(),
            category: q.category,
            types: q.gold_types.clone(),
        })
        .collect())
}

/// Index submissions by id.
pub fn by_id(subs: &[Submission]) -> HashMap<&str, &Submission> {
    subs.iter().map(|s| (s.id.as_str(), s)).collect()
}
