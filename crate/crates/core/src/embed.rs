//! The trainable dense bi-encoder and the exact dense retrieval index.
//!
//! Texts are featurized as hashed subword counts (word unigrams plus
//! boundary-marked character 3/4/5-grams), projected through a linear map,
//! and normalized to unit length. Retrieval is exact maximum inner product
//! search; at desk scale nothing approximate is needed.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PassageId, PassageStore};
use crate::lexical::{rank_descending, tokenize};
use crate::persist::{self, ArtifactKind, PersistError};
use crate::scalar::{dot, norm2, Scalar};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
}

/// Sparse hashed feature counts for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FeatureVector<S: Scalar> {
    /// (feature index, count) pairs sorted by index; counts are positive.
    entries: Vec<(u32, S)>,
    dim: u32,
}

impl<S: Scalar> FeatureVector<S> {
    /// Builds a vector from raw (index, count) pairs; entries are sorted and
    /// merged, non-positive counts and out-of-range indices dropped.
    pub fn from_entries(entries: Vec<(u32, S)>, dim: u32) -> Self {
        let mut counts: HashMap<u32, S> = HashMap::new();
        for (i, c) in entries {
            if i < dim && c > S::zero() {
                *counts.entry(i).or_insert_with(S::zero) += c;
            }
        }
        let mut entries: Vec<(u32, S)> = counts.into_iter().collect();
        entries.sort_by_key(|&(i, _)| i);
        Self { entries, dim }
    }

    pub fn entries(&self) -> &[(u32, S)] {
        &self.entries
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of all counts.
    pub fn mass(&self) -> S {
        self.entries.iter().map(|&(_, c)| c).sum()
    }
}

/// FNV-1a over (kind tag, gram bytes), mixed with the stored seed. Stable
/// across platforms and releases, unlike the std hasher.
fn hash_feature(kind: u8, gram: &str, seed: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET ^ seed.wrapping_mul(PRIME);
    h ^= u64::from(kind);
    h = h.wrapping_mul(PRIME);
    for &b in gram.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Hashed counts of word unigrams and boundary-marked character n-grams
/// (n = 3, 4, 5) of each token. Deterministic for a fixed seed.
pub fn featurize<S: Scalar>(text: &str, dim: u32, seed: u64) -> FeatureVector<S> {
    let mut counts: HashMap<u32, S> = HashMap::new();
    let mut bump = |kind: u8, gram: &str| {
        let idx = (hash_feature(kind, gram, seed) % u64::from(dim)) as u32;
        *counts.entry(idx).or_insert_with(S::zero) += S::one();
    };
    for token in &tokenize(text).tokens {
        bump(0, token);
        // Tokens are alphanumeric, so the markers cannot collide with
        // token content.
        let padded: Vec<char> = std::iter::once('^')
            .chain(token.chars())
            .chain(std::iter::once('$'))
            .collect();
        for n in 3..=5usize {
            if padded.len() < n {
                continue;
            }
            for window in padded.windows(n) {
                let gram: String = window.iter().collect();
                bump(n as u8, &gram);
            }
        }
    }
    let mut entries: Vec<(u32, S)> = counts.into_iter().collect();
    entries.sort_by_key(|&(i, _)| i);
    FeatureVector { entries, dim }
}

/// Dense column-major matrix: `cols` columns of length `rows`, so a sparse
/// matrix-vector product walks contiguous memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ColMatrix<S: Scalar> {
    rows: u32,
    cols: u32,
    data: Vec<S>,
}

impl<S: Scalar> ColMatrix<S> {
    pub fn zeros(rows: u32, cols: u32) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows as usize * cols as usize],
        }
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn col(&self, j: u32) -> &[S] {
        let r = self.rows as usize;
        &self.data[j as usize * r..(j as usize + 1) * r]
    }

    pub fn col_mut(&mut self, j: u32) -> &mut [S] {
        let r = self.rows as usize;
        &mut self.data[j as usize * r..(j as usize + 1) * r]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn get(&self, i: u32, j: u32) -> S {
        self.data[j as usize * self.rows as usize + i as usize]
    }

    pub fn set(&mut self, i: u32, j: u32, v: S) {
        self.data[j as usize * self.rows as usize + i as usize] = v;
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(S::zero());
    }
}

/// The linear bi-encoder: a `d x F` projection over hashed features, with an
/// optional separate passage-side matrix for the two-encoder ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EncoderParams<S: Scalar> {
    w_query: ColMatrix<S>,
    /// Present only when `shared` is false.
    w_passage: Option<ColMatrix<S>>,
    d: u32,
    feature_dim: u32,
    hash_seed: u64,
    shared: bool,
}

const ENCODER_VERSION: u16 = 1;

impl<S: Scalar> EncoderParams<S> {
    /// Random unit-variance Gaussian init, deterministic per `init_seed`.
    /// The hash seed is stored with the params so embeddings stay
    /// reproducible after persistence.
    pub fn init(d: u32, feature_dim: u32, hash_seed: u64, shared: bool, init_seed: u64) -> Self {
        assert!(d >= 2, "embedding dimension must be at least 2");
        let mut rng = ChaCha12Rng::seed_from_u64(init_seed);
        let mut sample = |n: usize| -> Vec<S> {
            (0..n)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    S::from_f64_lossy(x)
                })
                .collect()
        };
        let w_query = ColMatrix {
            rows: d,
            cols: feature_dim,
            data: sample(d as usize * feature_dim as usize),
        };
        let w_passage = if shared {
            None
        } else {
            Some(ColMatrix {
                rows: d,
                cols: feature_dim,
                data: sample(d as usize * feature_dim as usize),
            })
        };
        Self {
            w_query,
            w_passage,
            d,
            feature_dim,
            hash_seed,
            shared,
        }
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn feature_dim(&self) -> u32 {
        self.feature_dim
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    pub fn w_query(&self) -> &ColMatrix<S> {
        &self.w_query
    }

    pub fn w_query_mut(&mut self) -> &mut ColMatrix<S> {
        &mut self.w_query
    }

    /// Passage-side matrix: the shared one unless a separate matrix exists.
    pub fn w_passage(&self) -> &ColMatrix<S> {
        self.w_passage.as_ref().unwrap_or(&self.w_query)
    }

    pub fn w_passage_mut(&mut self) -> Option<&mut ColMatrix<S>> {
        self.w_passage.as_mut()
    }

    /// Featurize with this encoder's hashing configuration.
    pub fn features(&self, text: &str) -> FeatureVector<S> {
        featurize(text, self.feature_dim, self.hash_seed)
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, ArtifactKind::EncoderParams, ENCODER_VERSION, S::WIDTH, self)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        persist::load(path, ArtifactKind::EncoderParams, ENCODER_VERSION, S::WIDTH)
    }
}

/// Unit-norm embedding, or the zero vector for empty inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Embedding<S: Scalar> {
    v: Vec<S>,
}

impl<S: Scalar> Embedding<S> {
    pub fn zero(d: u32) -> Self {
        Self {
            v: vec![S::zero(); d as usize],
        }
    }

    pub fn from_raw_normalized(raw: Vec<S>) -> Self {
        let n = norm2(&raw);
        if n == S::zero() {
            return Self {
                v: vec![S::zero(); raw.len()],
            };
        }
        Self {
            v: raw.into_iter().map(|x| x / n).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.v
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|&x| x == S::zero())
    }
}

fn project<S: Scalar>(w: &ColMatrix<S>, f: &FeatureVector<S>) -> Vec<S> {
    let mut z = vec![S::zero(); w.rows() as usize];
    for &(j, count) in f.entries() {
        for (zi, &wij) in z.iter_mut().zip(w.col(j)) {
            *zi += wij * count;
        }
    }
    z
}

/// Raw projection and its norm, for gradient code that needs the
/// normalization Jacobian.
pub(crate) fn encode_raw<S: Scalar>(
    w: &ColMatrix<S>,
    f: &FeatureVector<S>,
) -> (Embedding<S>, Vec<S>, S) {
    let z = project(w, f);
    let n = norm2(&z);
    let e = if f.is_empty() || n == S::zero() {
        Embedding::zero(w.rows())
    } else {
        Embedding {
            v: z.iter().map(|&x| x / n).collect(),
        }
    };
    (e, z, n)
}

/// Unit-normalized projection of the features through the query-side
/// encoder; the zero vector when the features are empty.
pub fn encode<S: Scalar>(
    params: &EncoderParams<S>,
    f: &FeatureVector<S>,
) -> Result<Embedding<S>, EmbedError> {
    if f.dim() != params.feature_dim {
        return Err(EmbedError::DimMismatch {
            left: f.dim() as usize,
            right: params.feature_dim as usize,
        });
    }
    Ok(encode_raw(&params.w_query, f).0)
}

/// Same as [`encode`] through the passage-side encoder (identical when the
/// encoder is shared).
pub fn encode_passage<S: Scalar>(
    params: &EncoderParams<S>,
    f: &FeatureVector<S>,
) -> Result<Embedding<S>, EmbedError> {
    if f.dim() != params.feature_dim {
        return Err(EmbedError::DimMismatch {
            left: f.dim() as usize,
            right: params.feature_dim as usize,
        });
    }
    Ok(encode_raw(params.w_passage(), f).0)
}

/// Convenience: featurize then encode on the query side.
pub fn encode_text<S: Scalar>(params: &EncoderParams<S>, text: &str) -> Embedding<S> {
    encode(params, &params.features(text)).expect("features built with matching dim")
}

/// Dot product; equals cosine similarity because embeddings are unit-norm.
pub fn similarity<S: Scalar>(a: &Embedding<S>, b: &Embedding<S>) -> Result<S, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(dot(a.as_slice(), b.as_slice()))
}

/// Passage embeddings in store order, row i = encode(passage i).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DenseIndex<S: Scalar> {
    d: u32,
    /// Row-major n x d matrix.
    data: Vec<S>,
}

const DENSE_INDEX_VERSION: u16 = 1;

impl<S: Scalar> DenseIndex<S> {
    pub fn len(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.data.len() / self.d as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn row(&self, i: PassageId) -> &[S] {
        let d = self.d as usize;
        &self.data[i as usize * d..(i as usize + 1) * d]
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, ArtifactKind::DenseIndex, DENSE_INDEX_VERSION, S::WIDTH, self)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        persist::load(path, ArtifactKind::DenseIndex, DENSE_INDEX_VERSION, S::WIDTH)
    }
}

/// Encodes every passage (title + body) offline.
pub fn build_dense_index<S: Scalar>(
    params: &EncoderParams<S>,
    store: &PassageStore,
) -> DenseIndex<S> {
    let d = params.d() as usize;
    let mut data = Vec::with_capacity(store.len() * d);
    for p in store.passages() {
        let emb = encode_passage(params, &params.features(&p.full_text()))
            .expect("features built with matching dim");
        data.extend_from_slice(emb.as_slice());
    }
    DenseIndex {
        d: params.d(),
        data,
    }
}

/// Exact top-k by dot product, descending, ties broken by ascending id.
pub fn dense_top_k<S: Scalar>(
    index: &DenseIndex<S>,
    query: &Embedding<S>,
    k: usize,
) -> Result<Vec<(PassageId, S)>, EmbedError> {
    if query.dim() != index.d as usize {
        return Err(EmbedError::DimMismatch {
            left: query.dim(),
            right: index.d as usize,
        });
    }
    let scores: Vec<S> = (0..index.len())
        .map(|i| dot(index.row(i as PassageId), query.as_slice()))
        .collect();
    Ok(rank_descending(&scores, k))
}
