//! Tokenization and the sparse (BM25) retrieval engine.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PassageId, PassageStore};
use crate::persist::{self, ArtifactKind, PersistError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("cannot index an empty store")]
    EmptyStore,
    #[error("k1 must be > 0, got {0}")]
    InvalidK1(f64),
    #[error("b must be in [0, 1], got {0}")]
    InvalidB(f64),
    #[error("passage id {id} out of range (corpus has {len} passages)")]
    DocOutOfRange { id: PassageId, len: usize },
}

/// Ordered lowercase word tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<String>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Case-folded substring containment: the one answer-matching rule used by
/// the synthetic-data filter, negative mining, and the R@k metric alike.
pub fn contains_case_folded(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Splits on non-alphanumeric boundaries (Unicode-aware), lowercases, keeps
/// digits. Deterministic for fixed input.
pub fn tokenize(text: &str) -> TokenStream {
    let tokens = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect();
    TokenStream { tokens }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: PassageId,
    pub tf: u32,
}

/// Okapi BM25 inverted index over title + body.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SparseIndex<S: Scalar> {
    /// term -> postings sorted by passage id ascending.
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: S,
    doc_count: u32,
    k1: S,
    b: S,
}

const SPARSE_INDEX_VERSION: u16 = 1;

impl<S: Scalar> SparseIndex<S> {
    pub fn doc_count(&self) -> u32 {
        self.doc_count
    }

    pub fn avg_doc_length(&self) -> S {
        self.avg_doc_length
    }

    pub fn k1(&self) -> S {
        self.k1
    }

    pub fn b(&self) -> S {
        self.b
    }

    pub fn doc_length(&self, doc: PassageId) -> Option<u32> {
        self.doc_lengths.get(doc as usize).copied()
    }

    /// Number of documents containing `term`.
    pub fn document_frequency(&self, term: &str) -> u32 {
        self.postings.get(term).map_or(0, |p| p.len() as u32)
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, ArtifactKind::SparseIndex, SPARSE_INDEX_VERSION, S::WIDTH, self)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        persist::load(path, ArtifactKind::SparseIndex, SPARSE_INDEX_VERSION, S::WIDTH)
    }
}

/// Indexes every passage (title concatenated with body).
pub fn build_sparse_index<S: Scalar>(
    store: &PassageStore,
    k1: S,
    b: S,
) -> Result<SparseIndex<S>, LexicalError> {
    if store.is_empty() {
        return Err(LexicalError::EmptyStore);
    }
    if k1 <= S::zero() {
        return Err(LexicalError::InvalidK1(k1.as_f64()));
    }
    if b < S::zero() || b > S::one() {
        return Err(LexicalError::InvalidB(b.as_f64()));
    }

    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(store.len());
    let mut total_len = 0u64;
    for p in store.passages() {
        let tokens = tokenize(&p.full_text());
        doc_lengths.push(tokens.len() as u32);
        total_len += tokens.len() as u64;
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in &tokens.tokens {
            *tf.entry(t.as_str()).or_insert(0) += 1;
        }
        // BTreeMap keeps term order canonical; postings stay id-sorted
        // because passages are visited in id order.
        for (term, count) in tf {
            postings
                .entry(term.to_string())
                .or_default()
                .push(Posting { doc: p.id, tf: count });
        }
    }
    let doc_count = store.len() as u32;
    let avg = S::from_f64_lossy(total_len as f64 / doc_count as f64);
    Ok(SparseIndex {
        postings,
        doc_lengths,
        avg_doc_length: avg,
        doc_count,
        k1,
        b,
    })
}

fn idf<S: Scalar>(doc_count: u32, df: u32) -> S {
    // +1 inside the log keeps IDF non-negative for terms in over half the
    // corpus.
    let n = doc_count as f64;
    let df = df as f64;
    S::from_f64_lossy((1.0 + (n - df + 0.5) / (df + 0.5)).ln())
}

fn term_contribution<S: Scalar>(index: &SparseIndex<S>, term: &str, doc: PassageId) -> S {
    let Some(postings) = index.postings.get(term) else {
        return S::zero();
    };
    let Ok(pos) = postings.binary_search_by_key(&doc, |p| p.doc) else {
        return S::zero();
    };
    let tf = S::from_f64_lossy(postings[pos].tf as f64);
    let df = postings.len() as u32;
    let len = S::from_f64_lossy(index.doc_lengths[doc as usize] as f64);
    let norm = index.k1 * (S::one() - index.b + index.b * len / index.avg_doc_length);
    idf::<S>(index.doc_count, df) * tf * (index.k1 + S::one()) / (tf + norm)
}

/// Okapi BM25 score of one document for a query. Query tokens contribute
/// per occurrence; terms absent from the document contribute 0.
pub fn bm25_score<S: Scalar>(
    index: &SparseIndex<S>,
    query: &TokenStream,
    doc: PassageId,
) -> Result<S, LexicalError> {
    if doc as usize >= index.doc_lengths.len() {
        return Err(LexicalError::DocOutOfRange {
            id: doc,
            len: index.doc_lengths.len(),
        });
    }
    let mut score = S::zero();
    for term in &query.tokens {
        score += term_contribution(index, term, doc);
    }
    Ok(score)
}

/// Ranks the whole corpus and returns the top `k` (fewer if the corpus is
/// smaller), descending score, ties broken by ascending passage id.
pub fn sparse_top_k<S: Scalar>(
    index: &SparseIndex<S>,
    query: &TokenStream,
    k: usize,
) -> Vec<(PassageId, S)> {
    let mut scores = vec![S::zero(); index.doc_count as usize];
    for term in &query.tokens {
        let Some(postings) = index.postings.get(term) else {
            continue;
        };
        let df = postings.len() as u32;
        let idf = idf::<S>(index.doc_count, df);
        for p in postings {
            let tf = S::from_f64_lossy(p.tf as f64);
            let len = S::from_f64_lossy(index.doc_lengths[p.doc as usize] as f64);
            let norm = index.k1 * (S::one() - index.b + index.b * len / index.avg_doc_length);
            scores[p.doc as usize] += idf * tf * (index.k1 + S::one()) / (tf + norm);
        }
    }
    rank_descending(&scores, k)
}

/// Shared ranking rule: descending score, ascending id on ties.
pub(crate) fn rank_descending<S: Scalar>(scores: &[S], k: usize) -> Vec<(PassageId, S)> {
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .take(k)
        .map(|id| (id, scores[id as usize]))
        .collect()
}
