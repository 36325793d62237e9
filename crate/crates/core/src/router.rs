//! Binary query classifier routing each query to the sparse (BM25) or dense
//! retriever, using explicit lexical features: the failure classes it must
//! recognize (rare characters, out-of-vocabulary tokens, short rare tokens)
//! are all visible at the surface.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QASample;
use crate::lexical::{tokenize, SparseIndex};
use crate::persist::{self, ArtifactKind, PersistError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("router training needs both labels present")]
    SingleClass,
    #[error("no labeled examples")]
    EmptyTrainingSet,
}

pub const FEATURE_DIM: usize = 8;

/// Names of the feature dimensions, for audit output.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "char_len",
    "token_count",
    "mean_token_len",
    "non_ascii_ratio",
    "max_log_df",
    "min_log_df",
    "oov_fraction",
    "digit_ratio",
];

/// The two retrieval strategies a query can be routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Sparse,
    Dense,
}

/// Per-query lexical feature vector; all entries finite, ratios in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RouterFeatures<S: Scalar> {
    pub values: [S; FEATURE_DIM],
}

/// Deterministic features of a query against the sparse index's term
/// statistics. Document frequencies enter as ln(1 + df), so an unseen token
/// contributes 0.
pub fn extract_features<S: Scalar>(query: &str, sparse: &SparseIndex<S>) -> RouterFeatures<S> {
    let chars: Vec<char> = query.chars().collect();
    let tokens = tokenize(query).tokens;
    let char_len = chars.len();
    let non_ascii = chars.iter().filter(|c| !c.is_ascii()).count();
    let digits = chars.iter().filter(|c| c.is_numeric()).count();
    let mean_token_len = if tokens.is_empty() {
        0.0
    } else {
        tokens.iter().map(|t| t.chars().count()).sum::<usize>() as f64 / tokens.len() as f64
    };
    let dfs: Vec<u32> = tokens
        .iter()
        .map(|t| sparse.document_frequency(t))
        .collect();
    let max_log_df = dfs
        .iter()
        .map(|&df| (1.0 + df as f64).ln())
        .fold(0.0f64, f64::max);
    let min_log_df = dfs
        .iter()
        .map(|&df| (1.0 + df as f64).ln())
        .fold(f64::INFINITY, f64::min);
    let min_log_df = if dfs.is_empty() { 0.0 } else { min_log_df };
    let oov_fraction = if tokens.is_empty() {
        0.0
    } else {
        dfs.iter().filter(|&&df| df == 0).count() as f64 / tokens.len() as f64
    };
    let ratio = |n: usize| {
        if char_len == 0 {
            0.0
        } else {
            n as f64 / char_len as f64
        }
    };
    RouterFeatures {
        values: [
            S::from_f64_lossy(char_len as f64),
            S::from_f64_lossy(tokens.len() as f64),
            S::from_f64_lossy(mean_token_len),
            S::from_f64_lossy(ratio(non_ascii)),
            S::from_f64_lossy(max_log_df),
            S::from_f64_lossy(min_log_df),
            S::from_f64_lossy(oov_fraction),
            S::from_f64_lossy(ratio(digits)),
        ],
    }
}

/// Logistic regression over standardized features. Sigmoid >= 0.5 routes
/// dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RouterModel<S: Scalar> {
    weights: [S; FEATURE_DIM],
    bias: S,
    feature_mean: [S; FEATURE_DIM],
    feature_std: [S; FEATURE_DIM],
}

const ROUTER_VERSION: u16 = 1;

impl<S: Scalar> RouterModel<S> {
    pub fn weights(&self) -> &[S; FEATURE_DIM] {
        &self.weights
    }

    pub fn bias(&self) -> S {
        self.bias
    }

    /// Routing probability of the dense side for a raw feature vector.
    pub fn dense_probability(&self, features: &RouterFeatures<S>) -> S {
        let mut z = self.bias;
        for i in 0..FEATURE_DIM {
            let standardized = (features.values[i] - self.feature_mean[i]) / self.feature_std[i];
            z += self.weights[i] * standardized;
        }
        S::one() / (S::one() + (-z).exp())
    }

    pub fn decide(&self, features: &RouterFeatures<S>) -> Route {
        if self.dense_probability(features) >= S::from_f64_lossy(0.5) {
            Route::Dense
        } else {
            Route::Sparse
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, ArtifactKind::RouterModel, ROUTER_VERSION, S::WIDTH, self)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        persist::load(path, ArtifactKind::RouterModel, ROUTER_VERSION, S::WIDTH)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RouterConfig<S: Scalar> {
    pub epochs: usize,
    pub learning_rate: S,
    pub seed: u64,
}

impl<S: Scalar> Default for RouterConfig<S> {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: S::from_f64_lossy(0.5),
            seed: 0,
        }
    }
}

/// Full-batch gradient descent on the logistic loss over standardized
/// features. Deterministic: weights start at zero, so the run does not
/// depend on the seed (kept in the config for interface stability).
pub fn train_router<S: Scalar>(
    labeled: &[(RouterFeatures<S>, Route)],
    cfg: &RouterConfig<S>,
) -> Result<RouterModel<S>, RouterError> {
    if labeled.is_empty() {
        return Err(RouterError::EmptyTrainingSet);
    }
    let has_dense = labeled.iter().any(|(_, r)| *r == Route::Dense);
    let has_sparse = labeled.iter().any(|(_, r)| *r == Route::Sparse);
    if !has_dense || !has_sparse {
        return Err(RouterError::SingleClass);
    }

    let n = S::from_f64_lossy(labeled.len() as f64);
    let mut mean = [S::zero(); FEATURE_DIM];
    for (f, _) in labeled {
        for i in 0..FEATURE_DIM {
            mean[i] += f.values[i];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = [S::zero(); FEATURE_DIM];
    for (f, _) in labeled {
        for i in 0..FEATURE_DIM {
            let d = f.values[i] - mean[i];
            std[i] += d * d;
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
        if *s == S::zero() {
            *s = S::one();
        }
    }

    let standardized: Vec<([S; FEATURE_DIM], S)> = labeled
        .iter()
        .map(|(f, r)| {
            let mut z = [S::zero(); FEATURE_DIM];
            for i in 0..FEATURE_DIM {
                z[i] = (f.values[i] - mean[i]) / std[i];
            }
            let y = if *r == Route::Dense { S::one() } else { S::zero() };
            (z, y)
        })
        .collect();

    let mut weights = [S::zero(); FEATURE_DIM];
    let mut bias = S::zero();
    for _ in 0..cfg.epochs {
        let mut grad_w = [S::zero(); FEATURE_DIM];
        let mut grad_b = S::zero();
        for (z, y) in &standardized {
            let mut logit = bias;
            for i in 0..FEATURE_DIM {
                logit += weights[i] * z[i];
            }
            let p = S::one() / (S::one() + (-logit).exp());
            let err = p - *y;
            for i in 0..FEATURE_DIM {
                grad_w[i] += err * z[i];
            }
            grad_b += err;
        }
        for i in 0..FEATURE_DIM {
            weights[i] -= cfg.learning_rate * grad_w[i] / n;
        }
        bias -= cfg.learning_rate * grad_b / n;
    }

    Ok(RouterModel {
        weights,
        bias,
        feature_mean: mean,
        feature_std: std,
    })
}

/// Routes one query.
pub fn route<S: Scalar>(
    model: &RouterModel<S>,
    query: &str,
    sparse: &SparseIndex<S>,
) -> Route {
    model.decide(&extract_features(query, sparse))
}

/// Builds the router's training labels from per-sample hit flags of the two
/// systems: a query is labeled sparse when BM25 hits and dense misses, dense
/// for the converse; queries where both hit or both miss are excluded, then
/// the classes are balanced by seeded downsampling of the larger one.
pub fn build_labels<S: Scalar>(
    samples: &[QASample],
    sparse_hits: &[bool],
    dense_hits: &[bool],
    sparse: &SparseIndex<S>,
    seed: u64,
) -> Vec<(RouterFeatures<S>, Route)> {
    assert_eq!(samples.len(), sparse_hits.len());
    assert_eq!(samples.len(), dense_hits.len());
    let mut sparse_side = Vec::new();
    let mut dense_side = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        match (sparse_hits[i], dense_hits[i]) {
            (true, false) => sparse_side.push(extract_features(&sample.question, sparse)),
            (false, true) => dense_side.push(extract_features(&sample.question, sparse)),
            _ => {}
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let target = sparse_side.len().min(dense_side.len());
    let mut downsample = |side: &mut Vec<RouterFeatures<S>>| {
        if side.len() > target {
            side.shuffle(&mut rng);
            side.truncate(target);
        }
    };
    downsample(&mut sparse_side);
    downsample(&mut dense_side);
    let mut labeled: Vec<(RouterFeatures<S>, Route)> = Vec::with_capacity(2 * target);
    labeled.extend(sparse_side.into_iter().map(|f| (f, Route::Sparse)));
    labeled.extend(dense_side.into_iter().map(|f| (f, Route::Dense)));
    labeled
}
