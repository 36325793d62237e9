//! The inverse embedding model: a linear bag-of-tokens decoder trained by
//! maximum likelihood, used to reconstruct text from an embedding via a
//! round-trip greedy search that directly maximizes cos(encode(candidate),
//! target).

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{encode, Embedding, EncoderParams};
use crate::lexical::tokenize;
use crate::persist::{self, ArtifactKind, PersistError};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Error)]
pub enum InvertError {
    #[error("no training texts")]
    EmptyTexts,
    #[error("training texts produced an empty vocabulary")]
    EmptyVocab,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("non-finite training loss at epoch {epoch}: divergent learning rate")]
    NonFiniteLoss { epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct InverseConfig<S: Scalar> {
    pub epochs: usize,
    pub learning_rate: S,
    pub seed: u64,
    /// Greedy search length and width.
    pub max_len: usize,
    pub beam: usize,
    /// Vocabulary size cap, most frequent tokens first.
    pub vocab_cap: usize,
}

impl<S: Scalar> Default for InverseConfig<S> {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: S::from_f64_lossy(0.1),
            seed: 0,
            max_len: 16,
            beam: 8,
            vocab_cap: 50_000,
        }
    }
}

/// Linear decoder mapping an embedding to per-token logits, plus the search
/// hyperparameters it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct InverseModel<S: Scalar> {
    /// Column t holds the d-dimensional logit vector of vocab token t.
    v: crate::embed::ColMatrix<S>,
    vocab: Vec<String>,
    max_len: usize,
    beam: usize,
}

const INVERSE_VERSION: u16 = 1;

impl<S: Scalar> InverseModel<S> {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn beam(&self) -> usize {
        self.beam
    }

    pub fn d(&self) -> u32 {
        self.v.rows()
    }

    /// Logit of token `t` at embedding `e`.
    pub fn logit(&self, t: u32, e: &Embedding<S>) -> S {
        dot(self.v.col(t), e.as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, ArtifactKind::InverseModel, INVERSE_VERSION, S::WIDTH, self)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        persist::load(path, ArtifactKind::InverseModel, INVERSE_VERSION, S::WIDTH)
    }
}

pub struct InverseTraining<S: Scalar> {
    pub model: InverseModel<S>,
    /// Mean per-text log-likelihood of each epoch's forward passes.
    pub epoch_log_likelihood: Vec<S>,
}

/// Trains the decoder to maximize the bag-of-tokens log-likelihood
/// sum over texts of sum over tokens of log softmax(V^T phi(x))[token],
/// by per-text stochastic gradient ascent with a seeded shuffle.
pub fn train_inverse<S: Scalar>(
    encoder: &EncoderParams<S>,
    texts: &[String],
    cfg: &InverseConfig<S>,
) -> Result<InverseTraining<S>, InvertError> {
    if texts.is_empty() {
        return Err(InvertError::EmptyTexts);
    }

    // Vocabulary: tokens ranked by (count desc, token asc), capped.
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in texts {
        for tok in tokenize(text).tokens {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(InvertError::EmptyVocab);
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(cfg.vocab_cap);
    let vocab: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
    let token_ids: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();

    // Embeddings and in-vocab token counts are fixed for the whole run.
    let mut examples: Vec<(Embedding<S>, Vec<(u32, S)>, S)> = Vec::new();
    for text in texts {
        let emb = encode(encoder, &encoder.features(text)).expect("matching feature dim");
        if emb.is_zero() {
            continue;
        }
        let mut tok_counts: HashMap<u32, S> = HashMap::new();
        for tok in tokenize(text).tokens {
            if let Some(&id) = token_ids.get(tok.as_str()) {
                *tok_counts.entry(id).or_insert_with(S::zero) += S::one();
            }
        }
        if tok_counts.is_empty() {
            continue;
        }
        let total: S = tok_counts.values().copied().sum();
        let mut sparse: Vec<(u32, S)> = tok_counts.into_iter().collect();
        sparse.sort_by_key(|&(i, _)| i);
        examples.push((emb, sparse, total));
    }
    if examples.is_empty() {
        return Err(InvertError::EmptyVocab);
    }

    let d = encoder.d();
    let mut v = crate::embed::ColMatrix::zeros(d, vocab.len() as u32);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_ll = Vec::with_capacity(cfg.epochs);
    let mut logits = vec![S::zero(); vocab.len()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut ll_sum = S::zero();
        for &i in &order {
            let (emb, tok_counts, total) = &examples[i];
            for (t, logit) in logits.iter_mut().enumerate() {
                *logit = dot(v.col(t as u32), emb.as_slice());
            }
            let max = logits
                .iter()
                .fold(S::neg_infinity(), |a, &b| if b > a { b } else { a });
            let denom: S = logits.iter().map(|&l| (l - max).exp()).sum();
            let log_denom = denom.ln() + max;
            for &(t, c) in tok_counts {
                ll_sum += c * (logits[t as usize] - log_denom);
            }
            // ascent: dLL/dv_t = (count_t - total * p_t) * e
            let mut count_iter = tok_counts.iter().peekable();
            for t in 0..vocab.len() {
                let p = (logits[t] - max).exp() / denom;
                let mut coeff = -*total * p;
                if let Some(&&(ct, c)) = count_iter.peek() {
                    if ct as usize == t {
                        coeff += c;
                        count_iter.next();
                    }
                }
                let step = cfg.learning_rate * coeff;
                let col = v.col_mut(t as u32);
                for (vi, &ei) in col.iter_mut().zip(emb.as_slice()) {
                    *vi += step * ei;
                }
            }
        }
        let mean_ll = ll_sum / S::from_f64_lossy(examples.len() as f64);
        if !mean_ll.is_finite() {
            return Err(InvertError::NonFiniteLoss { epoch });
        }
        epoch_ll.push(mean_ll);
    }

    Ok(InverseTraining {
        model: InverseModel {
            v,
            vocab,
            max_len: cfg.max_len,
            beam: cfg.beam,
        },
        epoch_log_likelihood: epoch_ll,
    })
}

/// Text rebuilt from an embedding, with the cosine trace of the greedy
/// search. `score_trace[0]` is the empty-string baseline (0); the final
/// entry always equals cos(encode(x_hat), e).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ReconstructionResult<S: Scalar> {
    pub x_hat: String,
    pub score_trace: Vec<S>,
}

/// Greedy round-trip reconstruction: candidate tokens are the top `beam` by
/// decoder logit at `e`; at each step the append that most improves
/// cos(encode(candidate), e) is kept, stopping when no strict improvement
/// (> 1e-9) remains or `max_len` is reached. Performs at most
/// `max_len * beam` re-encodings.
pub fn invert_embedding<S: Scalar>(
    model: &InverseModel<S>,
    encoder: &EncoderParams<S>,
    e: &Embedding<S>,
) -> Result<ReconstructionResult<S>, InvertError> {
    if e.dim() != encoder.d() as usize {
        return Err(InvertError::DimMismatch {
            left: e.dim(),
            right: encoder.d() as usize,
        });
    }
    if model.d() != encoder.d() {
        return Err(InvertError::DimMismatch {
            left: model.d() as usize,
            right: encoder.d() as usize,
        });
    }
    let improvement_tolerance = S::from_f64_lossy(1e-9);
    let mut trace = vec![S::zero()];
    if e.is_zero() {
        return Ok(ReconstructionResult {
            x_hat: String::new(),
            score_trace: trace,
        });
    }

    // Candidate set is fixed: top-beam logits at the target embedding,
    // ties toward the lower vocab index.
    let mut by_logit: Vec<u32> = (0..model.vocab.len() as u32).collect();
    by_logit.sort_by(|&a, &b| {
        model
            .logit(b, e)
            .partial_cmp(&model.logit(a, e))
            .expect("finite logits")
            .then(a.cmp(&b))
    });
    let candidates: Vec<u32> = by_logit.into_iter().take(model.beam).collect();

    let mut tokens: Vec<u32> = Vec::new();
    let mut best_cos = S::zero();
    while tokens.len() < model.max_len {
        let mut best: Option<(u32, S)> = None;
        for &cand in &candidates {
            tokens.push(cand);
            let text = render(&model.vocab, &tokens);
            tokens.pop();
            let emb = encode(encoder, &encoder.features(&text)).expect("matching feature dim");
            let cos = dot(emb.as_slice(), e.as_slice());
            if best.map_or(true, |(_, c)| cos > c) {
                best = Some((cand, cos));
            }
        }
        match best {
            Some((tok, cos)) if cos > best_cos + improvement_tolerance => {
                tokens.push(tok);
                best_cos = cos;
                trace.push(cos);
            }
            _ => break,
        }
    }

    Ok(ReconstructionResult {
        x_hat: render(&model.vocab, &tokens),
        score_trace: trace,
    })
}

fn render(vocab: &[String], tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(|&t| vocab[t as usize].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}
