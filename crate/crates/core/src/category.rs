//! Coarse answer category classifier: five one-vs-rest logistic models over
//! TF-IDF question features, argmax decision with ties going to `resource`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CoarseCategory, Question, QuestionDataset};
use crate::linear::{train_binary, BinaryLogistic, ModelError, TrainParams};
use crate::text::{QuestionFeaturizer, SparseVec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryModel {
    /// Indexed by [`CoarseCategory::index`].
    pub classifiers: Vec<BinaryLogistic>,
    pub params: TrainParams,
}

pub fn train_category(
    train: &QuestionDataset,
    featurizer: &QuestionFeaturizer,
    params: &TrainParams,
) -> Result<CategoryModel, ModelError> {
    let labelled: Vec<&Question> = train.questions().iter().filter(|q| q.category.is_some()).collect();
    let distinct: BTreeSet<CoarseCategory> = labelled.iter().filter_map(|q| q.category).collect();
    if distinct.len() < 2 {
        return Err(ModelError::SingleCategory(distinct.len()));
    }
    let features: Vec<SparseVec> = labelled.iter().map(|q| featurizer.featurize(&q.text)).collect();
    let refs: Vec<&SparseVec> = features.iter().collect();
    let classifiers = CoarseCategory::ALL
        .par_iter()
        .map(|&cat| {
            let ys: Vec<bool> = labelled.iter().map(|q| q.category == Some(cat)).collect();
            train_binary(&refs, &ys, featurizer.dim(), params).0
        })
        .collect();
    Ok(CategoryModel {
        classifiers,
        params: *params,
    })
}

impl CategoryModel {
    pub fn scores(&self, x: &SparseVec) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (o, c) in out.iter_mut().zip(&self.classifiers) {
            *o = c.score(x);
        }
        out
    }

    pub fn predict_features(&self, x: &SparseVec) -> CoarseCategory {
        let scores = self.scores(x);
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if scores[CoarseCategory::Resource.index()] == best {
            return CoarseCategory::Resource;
        }
        CoarseCategory::ALL
            .into_iter()
            .find(|c| scores[c.index()] == best)
            .unwrap_or(CoarseCategory::Resource)
    }
}

pub fn predict_category(model: &CategoryModel, featurizer: &QuestionFeaturizer, q: &Question) -> CoarseCategory {
    model.predict_features(&featurizer.featurize(&q.text))
}
