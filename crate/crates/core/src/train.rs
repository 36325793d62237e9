//! Contrastive fine-tuning of the dense encoder on selected data.
//!
//! The loss is the negative log of the softmax probability of the positive
//! passage against a set of negatives, with scores given by the dot product
//! of unit-normalized encodings. Gradients are exact and analytic, including
//! the normalization Jacobian, so they can be checked against central finite
//! differences. Everything runs in the scalar type of the params; the
//! shipped pipeline uses f64.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PassageId, PassageStore, QASample};
use crate::embed::{encode_raw, ColMatrix, Embedding, EncoderParams, FeatureVector};
use crate::lexical::{contains_case_folded, sparse_top_k, tokenize, SparseIndex};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training examples")]
    EmptyExamples,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("an example needs at least one negative")]
    NoNegatives,
    #[error("non-finite loss at epoch {epoch}: divergent learning rate")]
    NonFiniteLoss { epoch: usize },
}

/// One contrastive example: a query, its positive passage, and mined
/// negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: String,
    pub positive: PassageId,
    pub negatives: Vec<PassageId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound = "")]
pub enum OptimizerKind<S: Scalar> {
    Sgd,
    Adam {
        beta1: S,
        beta2: S,
        epsilon: S,
        /// Decoupled weight decay. Non-zero decay shrinks the columns of
        /// features absent from the training data, which carry the
        /// generalization to unseen entities; default 0.
        weight_decay: S,
    },
}

impl<S: Scalar> OptimizerKind<S> {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: S::from_f64_lossy(0.9),
            beta2: S::from_f64_lossy(0.999),
            epsilon: S::from_f64_lossy(1e-8),
            weight_decay: S::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrainConfig<S: Scalar> {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: S,
    /// Negatives mined per example.
    pub negatives_per_example: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind<S>,
    /// Score each query against the batch's positives instead of its own
    /// mined negatives (the in-batch ablation).
    pub in_batch_negatives: bool,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 15,
            // A linear encoder needs far larger steps than a pretrained
            // transformer would.
            learning_rate: S::from_f64_lossy(1e-2),
            negatives_per_example: 4,
            seed: 0,
            optimizer: OptimizerKind::adam_default(),
            in_batch_negatives: false,
        }
    }
}

impl<S: Scalar> TrainConfig<S> {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.negatives_per_example < 1 {
            return Err(TrainError::InvalidConfig(
                "negatives_per_example must be >= 1".into(),
            ));
        }
        if !(self.learning_rate >= S::zero()) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Builds training examples by ranking the corpus with BM25: the positive is
/// the highest-ranked passage containing an answer string, the negatives the
/// highest-ranked passages containing none. Samples with no answer-bearing
/// passage are dropped; the count of drops is returned.
pub fn mine_examples<S: Scalar>(
    selected: &[QASample],
    sparse: &SparseIndex<S>,
    store: &PassageStore,
    m: usize,
) -> (Vec<TrainingExample>, usize) {
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for sample in selected {
        let ranked = sparse_top_k(sparse, &tokenize(&sample.question), store.len());
        let has_answer = |id: PassageId| {
            let text = store.get(id).expect("ranked ids in range").full_text();
            sample.answers.iter().any(|a| contains_case_folded(&text, a))
        };
        let Some(&(positive, _)) = ranked.iter().find(|&&(id, _)| has_answer(id)) else {
            dropped += 1;
            continue;
        };
        let negatives: Vec<PassageId> = ranked
            .iter()
            .filter(|&&(id, _)| !has_answer(id))
            .take(m)
            .map(|&(id, _)| id)
            .collect();
        if negatives.is_empty() {
            dropped += 1;
            continue;
        }
        out.push(TrainingExample {
            query: sample.question.clone(),
            positive,
            negatives,
        });
    }
    (out, dropped)
}

/// Numerically stable `-log softmax[0]` over `[f_pos, f_negs...]`.
fn nll_from_scores<S: Scalar>(scores: &[S]) -> S {
    let max = scores
        .iter()
        .fold(S::neg_infinity(), |a, &b| if b > a { b } else { a });
    let sum: S = scores.iter().map(|&f| (f - max).exp()).sum();
    -(scores[0] - max) + sum.ln()
}

/// Contrastive NLL of the positive against the negatives; always positive.
pub fn nll_loss<S: Scalar>(
    q: &Embedding<S>,
    pos: &Embedding<S>,
    negs: &[Embedding<S>],
) -> Result<S, TrainError> {
    if negs.is_empty() {
        return Err(TrainError::NoNegatives);
    }
    for e in std::iter::once(pos).chain(negs) {
        if e.dim() != q.dim() {
            return Err(TrainError::DimMismatch {
                left: q.dim(),
                right: e.dim(),
            });
        }
    }
    let mut scores = Vec::with_capacity(negs.len() + 1);
    scores.push(dot(q.as_slice(), pos.as_slice()));
    for n in negs {
        scores.push(dot(q.as_slice(), n.as_slice()));
    }
    Ok(nll_from_scores(&scores))
}

/// Gradient of the mean batch loss with respect to the encoder matrices.
/// `passage` is `None` when the encoder is shared (both sides accumulate
/// into `query`).
#[derive(Debug, Clone)]
pub struct BatchGradient<S: Scalar> {
    pub query: ColMatrix<S>,
    pub passage: Option<ColMatrix<S>>,
    pub mean_loss: S,
    /// Examples skipped for zero-feature query or passages.
    pub skipped: usize,
}

struct PreparedExample<S: Scalar> {
    query: FeatureVector<S>,
    positive: FeatureVector<S>,
    negatives: Vec<FeatureVector<S>>,
}

fn prepare<S: Scalar>(
    params: &EncoderParams<S>,
    batch: &[TrainingExample],
    store: &PassageStore,
) -> Vec<PreparedExample<S>> {
    let mut passage_feats: HashMap<PassageId, FeatureVector<S>> = HashMap::new();
    let feat = |id: PassageId, cache: &mut HashMap<PassageId, FeatureVector<S>>| {
        cache
            .entry(id)
            .or_insert_with(|| {
                params.features(&store.get(id).expect("passage id in range").full_text())
            })
            .clone()
    };
    batch
        .iter()
        .map(|ex| PreparedExample {
            query: params.features(&ex.query),
            positive: feat(ex.positive, &mut passage_feats),
            negatives: ex
                .negatives
                .iter()
                .map(|&id| feat(id, &mut passage_feats))
                .collect(),
        })
        .collect()
}

/// Backpropagates through the unit normalization: given dL/de where
/// e = z / ||z||, accumulates dL/dW columns for the features of z.
fn accumulate_through_norm<S: Scalar>(
    grad: &mut ColMatrix<S>,
    d_loss_d_e: &[S],
    e: &Embedding<S>,
    z_norm: S,
    feats: &FeatureVector<S>,
) {
    let proj = dot(d_loss_d_e, e.as_slice());
    let d = e.dim();
    let mut d_loss_d_z = vec![S::zero(); d];
    for i in 0..d {
        d_loss_d_z[i] = (d_loss_d_e[i] - proj * e.as_slice()[i]) / z_norm;
    }
    for &(j, c) in feats.entries() {
        let col = grad.col_mut(j);
        for (g, &dz) in col.iter_mut().zip(&d_loss_d_z) {
            *g += dz * c;
        }
    }
}

fn grad_prepared<S: Scalar>(
    params: &EncoderParams<S>,
    prepared: &[PreparedExample<S>],
    subset: &[usize],
    in_batch: bool,
    grad_query: &mut ColMatrix<S>,
    grad_passage: Option<&mut ColMatrix<S>>,
) -> (S, usize) {
    let shared = params.shared();
    let mut grad_passage = grad_passage;
    let mut loss_sum = S::zero();
    let mut used = 0usize;
    let mut skipped = 0usize;

    if in_batch {
        // Every query scores against every example's positive; the diagonal
        // entry is its own.
        let encoded: Vec<Option<_>> = subset
            .iter()
            .map(|&i| {
                let ex = &prepared[i];
                let (qe, _, qn) = encode_raw(params.w_query(), &ex.query);
                let (pe, _, pn) = encode_raw(params.w_passage(), &ex.positive);
                if qe.is_zero() || pe.is_zero() {
                    None
                } else {
                    Some((qe, qn, pe, pn))
                }
            })
            .collect();
        let live: Vec<usize> = (0..subset.len()).filter(|&i| encoded[i].is_some()).collect();
        skipped = subset.len() - live.len();
        if live.len() < 2 {
            // One live example has no in-batch negatives to contrast with.
            return (S::zero(), skipped + live.len());
        }
        let mut d_pos: Vec<Vec<S>> = live
            .iter()
            .map(|&i| vec![S::zero(); encoded[i].as_ref().unwrap().0.dim()])
            .collect();
        for (row, &i) in live.iter().enumerate() {
            let (qe, qn, _, _) = encoded[i].as_ref().unwrap();
            let mut scores: Vec<S> = Vec::with_capacity(live.len());
            scores.push(dot(
                qe.as_slice(),
                encoded[i].as_ref().unwrap().2.as_slice(),
            ));
            for &j in &live {
                if j != i {
                    scores.push(dot(qe.as_slice(), encoded[j].as_ref().unwrap().2.as_slice()));
                }
            }
            loss_sum += nll_from_scores(&scores);
            used += 1;
            let max = scores
                .iter()
                .fold(S::neg_infinity(), |a, &b| if b > a { b } else { a });
            let denom: S = scores.iter().map(|&f| (f - max).exp()).sum();
            let mut d_q = vec![S::zero(); qe.dim()];
            // index 0 is the diagonal, then the other live positives in order
            let mut col_iter = std::iter::once(row).chain(
                (0..live.len()).filter(move |&r| r != row),
            );
            for (&s, col) in scores.iter().zip(&mut col_iter) {
                let mut g = (s - max).exp() / denom;
                if col == row {
                    g -= S::one();
                }
                let pe = &encoded[live[col]].as_ref().unwrap().2;
                for k in 0..d_q.len() {
                    d_q[k] += g * pe.as_slice()[k];
                    d_pos[col][k] += g * qe.as_slice()[k];
                }
            }
            accumulate_through_norm(grad_query, &d_q, qe, *qn, &prepared[subset[i]].query);
        }
        for (row, &i) in live.iter().enumerate() {
            let (_, _, pe, pn) = encoded[i].as_ref().unwrap();
            let target = if shared {
                &mut *grad_query
            } else {
                grad_passage.as_deref_mut().expect("two-encoder gradient")
            };
            accumulate_through_norm(target, &d_pos[row], pe, *pn, &prepared[subset[i]].positive);
        }
    } else {
        for &idx in subset {
            let ex = &prepared[idx];
            let (qe, _, qn) = encode_raw(params.w_query(), &ex.query);
            if qe.is_zero() {
                skipped += 1;
                continue;
            }
            let pos = encode_raw(params.w_passage(), &ex.positive);
            let negs: Vec<_> = ex
                .negatives
                .iter()
                .map(|f| encode_raw(params.w_passage(), f))
                .collect();
            if pos.0.is_zero() || negs.iter().any(|(e, _, _)| e.is_zero()) {
                skipped += 1;
                continue;
            }
            let mut scores = Vec::with_capacity(negs.len() + 1);
            scores.push(dot(qe.as_slice(), pos.0.as_slice()));
            for (ne, _, _) in &negs {
                scores.push(dot(qe.as_slice(), ne.as_slice()));
            }
            loss_sum += nll_from_scores(&scores);
            used += 1;

            let max = scores
                .iter()
                .fold(S::neg_infinity(), |a, &b| if b > a { b } else { a });
            let denom: S = scores.iter().map(|&f| (f - max).exp()).sum();
            let g: Vec<S> = scores
                .iter()
                .enumerate()
                .map(|(i, &f)| {
                    let p = (f - max).exp() / denom;
                    if i == 0 {
                        p - S::one()
                    } else {
                        p
                    }
                })
                .collect();

            let d = qe.dim();
            let mut d_q = vec![S::zero(); d];
            for (i, (pe, _, _)) in std::iter::once(&pos).chain(negs.iter()).enumerate() {
                for k in 0..d {
                    d_q[k] += g[i] * pe.as_slice()[k];
                }
            }
            accumulate_through_norm(grad_query, &d_q, &qe, qn, &ex.query);

            for (i, ((pe, _, pn), feats)) in std::iter::once(&pos)
                .chain(negs.iter())
                .zip(std::iter::once(&ex.positive).chain(ex.negatives.iter()))
                .enumerate()
            {
                let d_p: Vec<S> = qe.as_slice().iter().map(|&x| g[i] * x).collect();
                let target = if shared {
                    &mut *grad_query
                } else {
                    grad_passage.as_deref_mut().expect("two-encoder gradient")
                };
                accumulate_through_norm(target, &d_p, pe, *pn, feats);
            }
        }
    }

    if used > 0 {
        let inv = S::one() / S::from_f64_lossy(used as f64);
        for g in grad_query.data_mut() {
            *g *= inv;
        }
        if let Some(gp) = grad_passage {
            for g in gp.data_mut() {
                *g *= inv;
            }
        }
        (loss_sum * inv, skipped)
    } else {
        (S::zero(), skipped)
    }
}

/// Exact analytic gradient of the mean batch loss with respect to the
/// encoder matrices, hard-negative form. Degenerate (zero-feature) examples
/// are skipped and counted.
pub fn loss_gradient<S: Scalar>(
    params: &EncoderParams<S>,
    batch: &[TrainingExample],
    store: &PassageStore,
) -> Result<BatchGradient<S>, TrainError> {
    loss_gradient_impl(params, batch, store, false)
}

/// [`loss_gradient`] with in-batch negatives: each query is contrasted
/// against the other examples' positives instead of its own mined negatives.
pub fn loss_gradient_in_batch<S: Scalar>(
    params: &EncoderParams<S>,
    batch: &[TrainingExample],
    store: &PassageStore,
) -> Result<BatchGradient<S>, TrainError> {
    loss_gradient_impl(params, batch, store, true)
}

fn loss_gradient_impl<S: Scalar>(
    params: &EncoderParams<S>,
    batch: &[TrainingExample],
    store: &PassageStore,
    in_batch: bool,
) -> Result<BatchGradient<S>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyExamples);
    }
    if !in_batch && batch.iter().any(|ex| ex.negatives.is_empty()) {
        return Err(TrainError::NoNegatives);
    }
    let prepared = prepare(params, batch, store);
    let subset: Vec<usize> = (0..prepared.len()).collect();
    let mut grad_query = ColMatrix::zeros(params.d(), params.feature_dim());
    let mut grad_passage = if params.shared() {
        None
    } else {
        Some(ColMatrix::zeros(params.d(), params.feature_dim()))
    };
    let (mean_loss, skipped) = grad_prepared(
        params,
        &prepared,
        &subset,
        in_batch,
        &mut grad_query,
        grad_passage.as_mut(),
    );
    Ok(BatchGradient {
        query: grad_query,
        passage: grad_passage,
        mean_loss,
        skipped,
    })
}

struct AdamState<S: Scalar> {
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> AdamState<S> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn optimizer_step<S: Scalar>(
    w: &mut ColMatrix<S>,
    grad: &ColMatrix<S>,
    kind: &OptimizerKind<S>,
    state: &mut AdamState<S>,
    t: u64,
    lr: S,
) {
    match *kind {
        OptimizerKind::Sgd => {
            for (wi, &gi) in w.data_mut().iter_mut().zip(grad.data()) {
                *wi -= lr * gi;
            }
        }
        OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } => {
            let bc1 = S::one() - beta1.powi(t as i32);
            let bc2 = S::one() - beta2.powi(t as i32);
            for (((wi, &gi), mi), vi) in w
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(state.m.iter_mut())
                .zip(state.v.iter_mut())
            {
                *mi = beta1 * *mi + (S::one() - beta1) * gi;
                *vi = beta2 * *vi + (S::one() - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *wi -= lr * (m_hat / (v_hat.sqrt() + epsilon) + weight_decay * *wi);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EpochLog<S: Scalar> {
    pub epoch: usize,
    pub mean_loss: S,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub params: EncoderParams<S>,
    pub epochs: Vec<EpochLog<S>>,
}

/// Mini-batch gradient descent with the configured optimizer. A fixed seed
/// gives a bit-reproducible parameter trajectory; gradients are accumulated
/// in fixed index order before each step.
pub fn train_retriever<S: Scalar>(
    init: &EncoderParams<S>,
    examples: &[TrainingExample],
    store: &PassageStore,
    cfg: &TrainConfig<S>,
) -> Result<TrainOutcome<S>, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyExamples);
    }
    cfg.validate()?;
    if !cfg.in_batch_negatives {
        if let Some(bad) = examples.iter().find(|ex| ex.negatives.is_empty()) {
            let _ = bad;
            return Err(TrainError::NoNegatives);
        }
    }

    let mut params = init.clone();
    let prepared = prepare(&params, examples, store);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grad_query = ColMatrix::zeros(params.d(), params.feature_dim());
    let mut grad_passage = if params.shared() {
        None
    } else {
        Some(ColMatrix::zeros(params.d(), params.feature_dim()))
    };
    let n_weights = params.w_query().data().len();
    let mut state_query = AdamState::new(n_weights);
    let mut state_passage = AdamState::new(if params.shared() { 0 } else { n_weights });
    let mut t = 0u64;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = S::zero();
        let mut used_total = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            grad_query.fill_zero();
            if let Some(gp) = grad_passage.as_mut() {
                gp.fill_zero();
            }
            let (mean_loss, skipped) = grad_prepared(
                &params,
                &prepared,
                chunk,
                cfg.in_batch_negatives,
                &mut grad_query,
                grad_passage.as_mut(),
            );
            if !mean_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            let used = chunk.len() - skipped;
            loss_sum += mean_loss * S::from_f64_lossy(used as f64);
            used_total += used;
            t += 1;
            optimizer_step(
                params.w_query_mut(),
                &grad_query,
                &cfg.optimizer,
                &mut state_query,
                t,
                cfg.learning_rate,
            );
            if let Some(gp) = grad_passage.as_ref() {
                if let Some(wp) = params.w_passage_mut() {
                    optimizer_step(wp, gp, &cfg.optimizer, &mut state_passage, t, cfg.learning_rate);
                }
            }
        }
        let mean = if used_total > 0 {
            loss_sum / S::from_f64_lossy(used_total as f64)
        } else {
            S::zero()
        };
        epochs.push(EpochLog {
            epoch,
            mean_loss: mean,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    Ok(TrainOutcome { params, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_passages, Normalization};
    use crate::embed::encode_text;
    use std::io::Write as _;

    fn store_from(entries: &[(&str, &str)]) -> PassageStore {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for (t, b) in entries {
            writeln!(f, "{}", serde_json::json!({"title": t, "body": b})).unwrap();
        }
        ingest_passages(f.path(), Normalization::default()).unwrap()
    }

    fn unit(v: Vec<f64>) -> Embedding<f64> {
        Embedding::from_raw_normalized(v)
    }

    #[test]
    fn equal_scores_with_one_negative_give_ln2() {
        let q = unit(vec![1.0, 0.0]);
        let p = unit(vec![0.0, 1.0]);
        let n = unit(vec![0.0, 1.0]);
        let loss = nll_loss(&q, &p, &[n]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn separated_scores_match_analytic_value() {
        // f+ = 1, f- = 0 -> ln(1 + e^-1)
        let q = unit(vec![1.0, 0.0]);
        let p = unit(vec![1.0, 0.0]);
        let n = unit(vec![0.0, 1.0]);
        let loss = nll_loss(&q, &p, &[n]).unwrap();
        assert!((loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn m_equal_negatives_give_ln_m_plus_one() {
        let q = unit(vec![1.0, 0.0]);
        let p = unit(vec![0.0, 1.0]);
        let negs: Vec<_> = (0..5).map(|_| unit(vec![0.0, 1.0])).collect();
        let loss = nll_loss(&q, &p, &negs).unwrap();
        assert!((loss - 6.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_requires_a_negative() {
        let q = unit(vec![1.0, 0.0]);
        let p = unit(vec![0.0, 1.0]);
        assert!(matches!(nll_loss(&q, &p, &[]), Err(TrainError::NoNegatives)));
    }

    #[test]
    fn shuffling_negatives_leaves_loss_and_gradient_unchanged() {
        let store = store_from(&[
            ("alpha", "alpha beta gamma"),
            ("delta", "delta epsilon"),
            ("zeta", "zeta eta theta"),
            ("iota", "iota kappa"),
        ]);
        let params = EncoderParams::<f64>::init(8, 1 << 10, 7, true, 3);
        let a = TrainingExample {
            query: "alpha beta".into(),
            positive: 0,
            negatives: vec![1, 2, 3],
        };
        let b = TrainingExample {
            negatives: vec![3, 1, 2],
            ..a.clone()
        };
        let ga = loss_gradient(&params, &[a], &store).unwrap();
        let gb = loss_gradient(&params, &[b], &store).unwrap();
        assert!((ga.mean_loss - gb.mean_loss).abs() < 1e-13);
        for (x, y) in ga.query.data().iter().zip(gb.query.data()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn duplicated_batch_gradient_equals_single() {
        let store = store_from(&[("a", "alpha beta"), ("b", "gamma delta"), ("c", "zeta eta")]);
        let params = EncoderParams::<f64>::init(6, 512, 7, true, 5);
        let ex = TrainingExample {
            query: "alpha".into(),
            positive: 0,
            negatives: vec![1, 2],
        };
        let single = loss_gradient(&params, &[ex.clone()], &store).unwrap();
        let double = loss_gradient(&params, &[ex.clone(), ex], &store).unwrap();
        for (a, b) in single.query.data().iter().zip(double.query.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((single.mean_loss - double.mean_loss).abs() < 1e-14);
    }

    #[test]
    fn degenerate_query_is_skipped_and_flagged() {
        let store = store_from(&[("a", "alpha"), ("b", "beta"), ("c", "gamma")]);
        let params = EncoderParams::<f64>::init(4, 256, 7, true, 5);
        let ex = TrainingExample {
            query: "!!!".into(), // tokenizes to nothing
            positive: 0,
            negatives: vec![1],
        };
        let g = loss_gradient(&params, &[ex], &store).unwrap();
        assert_eq!(g.skipped, 1);
        assert!(g.query.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let store = store_from(&[("a", "alpha beta"), ("b", "gamma delta")]);
        let params = EncoderParams::<f64>::init(4, 256, 7, true, 5);
        let ex = TrainingExample {
            query: "alpha".into(),
            positive: 0,
            negatives: vec![1],
        };
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train_retriever(&params, &[ex], &store, &cfg).unwrap();
        assert_eq!(out.params, params);
    }

    #[test]
    fn single_example_training_descends() {
        let store = store_from(&[("a", "alphaq beta"), ("b", "gammaq delta"), ("c", "epsil zeta")]);
        let params = EncoderParams::<f64>::init(8, 1 << 10, 7, true, 5);
        let ex = TrainingExample {
            query: "alphaq".into(),
            positive: 0,
            negatives: vec![1, 2],
        };
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 200,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let out = train_retriever(&params, &[ex], &store, &cfg).unwrap();
        let first = out.epochs.first().unwrap().mean_loss;
        let last = out.epochs.last().unwrap().mean_loss;
        assert!(last < first, "loss did not descend: {first} -> {last}");
    }

    #[test]
    fn converged_single_example_has_vanishing_gradient() {
        let store = store_from(&[("a", "alphaq beta"), ("b", "gammaq delta"), ("c", "epsil zeta")]);
        let params = EncoderParams::<f64>::init(8, 1 << 10, 7, true, 5);
        let ex = TrainingExample {
            query: "alphaq".into(),
            positive: 0,
            negatives: vec![1, 2],
        };
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 3000,
            learning_rate: 0.5,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let out = train_retriever(&params, &[ex.clone()], &store, &cfg).unwrap();
        let g = loss_gradient(&out.params, &[ex], &store).unwrap();
        let gnorm: f64 = g.query.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let init_g = loss_gradient(&params, &[TrainingExample {
            query: "alphaq".into(),
            positive: 0,
            negatives: vec![1, 2],
        }], &store)
        .unwrap();
        let init_norm: f64 = init_g.query.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(
            gnorm < init_norm * 0.02,
            "gradient norm {gnorm} vs initial {init_norm}"
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let store = store_from(&[("a", "alpha beta"), ("b", "gamma delta"), ("c", "eps zeta")]);
        let params = EncoderParams::<f64>::init(4, 256, 7, true, 5);
        let exs = vec![
            TrainingExample {
                query: "alpha".into(),
                positive: 0,
                negatives: vec![1, 2],
            },
            TrainingExample {
                query: "gamma".into(),
                positive: 1,
                negatives: vec![0, 2],
            },
        ];
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train_retriever(&params, &exs, &store, &cfg).unwrap();
        let b = train_retriever(&params, &exs, &store, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn non_finite_loss_aborts_with_the_offending_epoch() {
        // Unit normalization bounds the scores, so a large learning rate
        // alone cannot blow up the loss; poison a weight instead.
        let store = store_from(&[("a", "alpha beta"), ("b", "gamma delta"), ("c", "eps zeta")]);
        let mut params = EncoderParams::<f64>::init(4, 256, 7, true, 5);
        for j in 0..params.feature_dim() {
            params.w_query_mut().set(0, j, f64::NAN);
        }
        let exs = vec![TrainingExample {
            query: "alpha".into(),
            positive: 0,
            negatives: vec![1],
        }];
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        match train_retriever(&params, &exs, &store, &cfg) {
            Err(TrainError::NonFiniteLoss { epoch: 0 }) => {}
            other => panic!("expected divergence at epoch 0, got {other:?}"),
        }
    }

    #[test]
    fn training_works_at_f32_too() {
        let store = store_from(&[("a", "alphaq beta"), ("b", "gammaq delta"), ("c", "ep zeta")]);
        let params = EncoderParams::<f32>::init(8, 512, 7, true, 5);
        let ex = TrainingExample {
            query: "alphaq".into(),
            positive: 0,
            negatives: vec![1, 2],
        };
        let cfg = TrainConfig::<f32> {
            batch_size: 1,
            epochs: 50,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let out = train_retriever(&params, &[ex], &store, &cfg).unwrap();
        assert!(out.epochs.last().unwrap().mean_loss < out.epochs[0].mean_loss);
    }

    #[test]
    fn mining_picks_answer_bearing_positive_and_clean_negatives() {
        let store = store_from(&[
            ("Velka", "Velka is a glazier from the north"),
            ("Trades", "the glazier trade guild and occupation rolls"),
            ("Other", "nothing of note here at all"),
        ]);
        let sparse = crate::lexical::build_sparse_index::<f64>(&store, 1.2, 0.75).unwrap();
        let sample = QASample {
            id: 0,
            question: "What is Velka's occupation?".into(),
            answers: vec!["glazier".into()],
            subject_entity: "Velka".into(),
            answer_entity: None,
            relation: "occupation".into(),
            frequency: 10,
        };
        let (examples, dropped) = mine_examples(&[sample], &sparse, &store, 2);
        assert_eq!(dropped, 0);
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].positive, 0);
        assert!(!examples[0].negatives.contains(&0));
        assert!(!examples[0].negatives.contains(&1)); // also contains "glazier"
        assert_eq!(examples[0].negatives, vec![2]);
    }

    #[test]
    fn sample_without_answer_anywhere_is_dropped_and_counted() {
        let store = store_from(&[("a", "alpha beta"), ("b", "gamma delta")]);
        let sparse = crate::lexical::build_sparse_index::<f64>(&store, 1.2, 0.75).unwrap();
        let sample = QASample {
            id: 0,
            question: "alpha?".into(),
            answers: vec!["nowhere-string".into()],
            subject_entity: "alpha".into(),
            answer_entity: None,
            relation: "r".into(),
            frequency: 1,
        };
        let (examples, dropped) = mine_examples(&[sample], &sparse, &store, 2);
        assert!(examples.is_empty());
        assert_eq!(dropped, 1);
    }

    #[test]
    fn in_batch_gradient_runs_and_descends() {
        let store = store_from(&[
            ("a", "alphaq beta"),
            ("b", "gammaq delta"),
            ("c", "epsil zeta"),
        ]);
        let params = EncoderParams::<f64>::init(8, 1 << 10, 7, true, 5);
        let exs = vec![
            TrainingExample {
                query: "alphaq".into(),
                positive: 0,
                negatives: vec![1],
            },
            TrainingExample {
                query: "gammaq".into(),
                positive: 1,
                negatives: vec![0],
            },
            TrainingExample {
                query: "epsil".into(),
                positive: 2,
                negatives: vec![0],
            },
        ];
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 3,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Sgd,
            in_batch_negatives: true,
            ..TrainConfig::default()
        };
        let out = train_retriever(&params, &exs, &store, &cfg).unwrap();
        assert!(out.epochs.last().unwrap().mean_loss < out.epochs[0].mean_loss);
        // the trained encoder should rank each query's own positive first
        let idx = crate::embed::build_dense_index(&out.params, &store);
        let q = encode_text(&out.params, "alphaq");
        let top = crate::embed::dense_top_k(&idx, &q, 1).unwrap();
        assert_eq!(top[0].0, 0);
    }
}
