//! Reconstruction-quality scoring, threshold selection of easy-to-learn
//! samples, and the question/answer correctness categorization used in the
//! ablation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QASample;
use crate::embed::{encode, similarity, Embedding, EncoderParams};
use crate::invert::{invert_embedding, InverseModel};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum RoundtripError {
    #[error("original text featurizes to nothing; the score denominator is undefined")]
    DegenerateInput,
    #[error("selection pool is empty")]
    EmptyPool,
}

/// Reconstruction correctness of question and answer entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    /// Question and answer entities both recovered.
    QcAc,
    /// Question recovered, answer not.
    QcAw,
    /// Answer recovered, question not.
    QwAc,
    /// Neither recovered.
    QwAw,
}

impl Category {
    pub fn from_flags(q_correct: bool, a_correct: bool) -> Self {
        match (q_correct, a_correct) {
            (true, true) => Category::QcAc,
            (true, false) => Category::QcAw,
            (false, true) => Category::QwAc,
            (false, false) => Category::QwAw,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Category::QcAc => "QcAc",
            Category::QcAw => "QcAw",
            Category::QwAc => "QwAc",
            Category::QwAw => "QwAw",
        }
    }
}

/// Per-sample audit record emitted by [`select`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ReconstructionReport<S: Scalar> {
    pub sample_id: u32,
    pub x_hat_q: String,
    pub x_hat_a: String,
    /// Reconstruction quality score of the question; at most 1.
    pub s: S,
    pub q_correct: bool,
    pub a_correct: bool,
    pub category: Category,
    /// Question featurized to nothing; never selected.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SelectionConfig<S: Scalar> {
    /// Minimum reconstruction score.
    pub threshold: S,
    /// Optional top-k cap applied after thresholding (highest scores kept).
    pub cap: Option<usize>,
}

impl<S: Scalar> Default for SelectionConfig<S> {
    fn default() -> Self {
        Self {
            threshold: S::from_f64_lossy(0.6),
            cap: None,
        }
    }
}

/// Reconstruction quality `S(x) = 1 - ||phi(x_hat) - phi(x)||^2 / ||phi(x)||^2`.
/// With unit-norm embeddings this equals `2*cos - 1`; it is 1 only for a
/// perfect reconstruction and is not bounded below by 0.
pub fn reconstruction_score<S: Scalar>(
    encoder: &EncoderParams<S>,
    x: &str,
    x_hat: &str,
) -> Result<S, RoundtripError> {
    let phi_x = encode(encoder, &encoder.features(x)).expect("matching feature dim");
    if phi_x.is_zero() {
        return Err(RoundtripError::DegenerateInput);
    }
    let phi_hat = encode(encoder, &encoder.features(x_hat)).expect("matching feature dim");
    Ok(score_from_embeddings(&phi_hat, &phi_x))
}

fn score_from_embeddings<S: Scalar>(phi_hat: &Embedding<S>, phi_x: &Embedding<S>) -> S {
    let mut diff_sq = S::zero();
    let mut denom = S::zero();
    for (&h, &x) in phi_hat.as_slice().iter().zip(phi_x.as_slice()) {
        diff_sq += (h - x) * (h - x);
        denom += x * x;
    }
    S::one() - diff_sq / denom
}

fn fold(s: &str) -> String {
    s.to_lowercase()
}

/// Entity recovery check: the case-folded subject entity must appear as a
/// substring of the case-folded question reconstruction, and analogously for
/// the answer entity (falling back to the first answer string).
pub fn categorize(sample: &QASample, x_hat_q: &str, x_hat_a: &str) -> (bool, bool, Category) {
    let q_correct = fold(x_hat_q).contains(&fold(&sample.subject_entity));
    let answer_target = sample
        .answer_entity
        .as_deref()
        .unwrap_or_else(|| sample.answers[0].as_str());
    let a_correct = fold(x_hat_a).contains(&fold(answer_target));
    (q_correct, a_correct, Category::from_flags(q_correct, a_correct))
}

/// Round-trips every sample in the pool: embeds the question, inverts it,
/// scores the reconstruction, and does the same for the answer text. A
/// sample is selected when its score clears the threshold AND both entities
/// were recovered (category QcAc); an optional cap then keeps the highest
/// scores. Reports cover the entire pool in pool order.
pub fn select<S: Scalar>(
    pool: &[QASample],
    encoder: &EncoderParams<S>,
    inverse: &InverseModel<S>,
    cfg: &SelectionConfig<S>,
) -> Result<(Vec<QASample>, Vec<ReconstructionReport<S>>), RoundtripError> {
    if pool.is_empty() {
        return Err(RoundtripError::EmptyPool);
    }
    let mut reports = Vec::with_capacity(pool.len());
    for sample in pool {
        let e_q = encode(encoder, &encoder.features(&sample.question)).expect("matching dim");
        if e_q.is_zero() {
            reports.push(ReconstructionReport {
                sample_id: sample.id,
                x_hat_q: String::new(),
                x_hat_a: String::new(),
                s: S::zero(),
                q_correct: false,
                a_correct: false,
                category: Category::QwAw,
                degenerate: true,
            });
            continue;
        }
        let x_hat_q = invert_embedding(inverse, encoder, &e_q)
            .expect("dims checked")
            .x_hat;
        let answer_text = sample
            .answer_entity
            .as_deref()
            .unwrap_or_else(|| sample.answers[0].as_str());
        let e_a = encode(encoder, &encoder.features(answer_text)).expect("matching dim");
        let x_hat_a = invert_embedding(inverse, encoder, &e_a)
            .expect("dims checked")
            .x_hat;
        let phi_q_hat = encode(encoder, &encoder.features(&x_hat_q)).expect("matching dim");
        let s = score_from_embeddings(&phi_q_hat, &e_q);
        let (q_correct, a_correct, category) = categorize(sample, &x_hat_q, &x_hat_a);
        reports.push(ReconstructionReport {
            sample_id: sample.id,
            x_hat_q,
            x_hat_a,
            s,
            q_correct,
            a_correct,
            category,
            degenerate: false,
        });
    }

    let mut chosen: Vec<usize> = (0..pool.len())
        .filter(|&i| {
            let r = &reports[i];
            !r.degenerate && r.s >= cfg.threshold && r.category == Category::QcAc
        })
        .collect();
    if let Some(cap) = cfg.cap {
        chosen.sort_by(|&a, &b| {
            reports[b]
                .s
                .partial_cmp(&reports[a].s)
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        chosen.truncate(cap);
        chosen.sort_unstable();
    }
    let selected = chosen.into_iter().map(|i| pool[i].clone()).collect();
    Ok((selected, reports))
}

/// Cosine between the encodings of two texts; used by test oracles for the
/// unit-norm identity `S = 2*cos - 1`.
pub fn encoded_cosine<S: Scalar>(encoder: &EncoderParams<S>, a: &str, b: &str) -> S {
    let ea = encode(encoder, &encoder.features(a)).expect("matching dim");
    let eb = encode(encoder, &encoder.features(b)).expect("matching dim");
    similarity(&ea, &eb).expect("same dim")
}
