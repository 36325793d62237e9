//! Retrieval accuracy metrics, frequency bucketing, and report shaping.

use serde::{Deserialize, Serialize};

use crate::corpus::{PassageId, PassageStore, QASample};
use crate::embed::{dense_top_k, encode, DenseIndex, EncoderParams};
use crate::lexical::{contains_case_folded, sparse_top_k, tokenize, SparseIndex};
use crate::router::{route, Route, RouterModel};
use crate::scalar::Scalar;

/// Entity-frequency partition of a test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bucket {
    LongTail,
    Infrequent,
    Frequent,
}

impl Bucket {
    pub fn label(&self) -> &'static str {
        match self {
            Bucket::LongTail => "long-tail",
            Bucket::Infrequent => "infrequent",
            Bucket::Frequent => "frequent",
        }
    }

    pub const ALL: [Bucket; 3] = [Bucket::LongTail, Bucket::Infrequent, Bucket::Frequent];
}

/// Half-open, lower-inclusive bucket boundaries covering all of [0, inf).
/// Frequencies below the long-tail upper bound are long-tail, including
/// anything under 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub long_tail_upper: u64,
    pub infrequent_upper: u64,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self {
            long_tail_upper: 100,
            infrequent_upper: 10_000,
        }
    }
}

/// Half-open interval membership.
pub fn bucket_of(frequency: u64, spec: &BucketSpec) -> Bucket {
    if frequency < spec.long_tail_upper {
        Bucket::LongTail
    } else if frequency < spec.infrequent_upper {
        Bucket::Infrequent
    } else {
        Bucket::Frequent
    }
}

/// True iff any answer string appears, case-folded, in any of the first k
/// retrieved passages (title + body).
pub fn hit_at_k(
    retrieved: &[PassageId],
    store: &PassageStore,
    answers: &[String],
    k: usize,
) -> bool {
    retrieved.iter().take(k).any(|&id| {
        let text = store.get(id).expect("retrieved id in range").full_text();
        answers.iter().any(|a| contains_case_folded(&text, a))
    })
}

/// A retrieval system under evaluation: returns ranked passage ids.
pub trait Retriever {
    fn retrieve(&self, query: &str, k: usize) -> Vec<PassageId>;
}

/// BM25 over the sparse index.
pub struct SparseRetriever<'a, S: Scalar> {
    pub index: &'a SparseIndex<S>,
}

impl<S: Scalar> Retriever for SparseRetriever<'_, S> {
    fn retrieve(&self, query: &str, k: usize) -> Vec<PassageId> {
        sparse_top_k(self.index, &tokenize(query), k)
            .into_iter()
            .map(|(id, _)| id)
            .collect()
    }
}

/// Exact MIPS over the dense index with the given encoder.
pub struct DenseRetriever<'a, S: Scalar> {
    pub params: &'a EncoderParams<S>,
    pub index: &'a DenseIndex<S>,
}

impl<S: Scalar> Retriever for DenseRetriever<'_, S> {
    fn retrieve(&self, query: &str, k: usize) -> Vec<PassageId> {
        let emb = encode(self.params, &self.params.features(query)).expect("matching dim");
        dense_top_k(self.index, &emb, k)
            .expect("matching dim")
            .into_iter()
            .map(|(id, _)| id)
            .collect()
    }
}

/// Routes each query to the sparse or dense retriever.
pub struct RoutedRetriever<'a, S: Scalar> {
    pub router: &'a RouterModel<S>,
    pub sparse: SparseRetriever<'a, S>,
    pub dense: DenseRetriever<'a, S>,
}

impl<S: Scalar> Retriever for RoutedRetriever<'_, S> {
    fn retrieve(&self, query: &str, k: usize) -> Vec<PassageId> {
        match route(self.router, query, self.sparse.index) {
            Route::Sparse => self.sparse.retrieve(query, k),
            Route::Dense => self.dense.retrieve(query, k),
        }
    }
}

/// R@k figures for one bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: Bucket,
    /// Number of evaluated samples in the bucket.
    pub n: usize,
    /// (k, R@k) in ascending k; R@k is non-decreasing in k.
    pub recall: Vec<(usize, f64)>,
}

/// Per-bucket retrieval accuracy of one system. Empty buckets are absent,
/// not zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub spec: BucketSpec,
    pub buckets: Vec<BucketReport>,
}

impl EvalReport {
    pub fn recall(&self, bucket: Bucket, k: usize) -> Option<f64> {
        self.buckets
            .iter()
            .find(|b| b.bucket == bucket)
            .and_then(|b| b.recall.iter().find(|&&(kk, _)| kk == k).map(|&(_, r)| r))
    }
}

/// Evaluates a system over the samples: each query is retrieved once at the
/// largest k, and per-bucket means of the hit indicator are reported for
/// every requested k. `ks` must be sorted ascending.
pub fn evaluate<R: Retriever + ?Sized>(
    system: &R,
    system_name: &str,
    samples: &[QASample],
    store: &PassageStore,
    ks: &[usize],
    spec: &BucketSpec,
) -> EvalReport {
    assert!(!ks.is_empty(), "at least one k required");
    assert!(ks.windows(2).all(|w| w[0] < w[1]), "ks must be ascending");
    let max_k = *ks.last().expect("non-empty ks");

    let mut hits: Vec<(Bucket, Vec<bool>)> = Vec::with_capacity(samples.len());
    for sample in samples {
        let retrieved = system.retrieve(&sample.question, max_k);
        let per_k: Vec<bool> = ks
            .iter()
            .map(|&k| hit_at_k(&retrieved, store, &sample.answers, k))
            .collect();
        hits.push((bucket_of(sample.frequency, spec), per_k));
    }

    let mut buckets = Vec::new();
    for bucket in Bucket::ALL {
        let members: Vec<&Vec<bool>> = hits
            .iter()
            .filter(|(b, _)| *b == bucket)
            .map(|(_, h)| h)
            .collect();
        if members.is_empty() {
            continue;
        }
        let recall = ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let hits_at_k = members.iter().filter(|h| h[i]).count();
                (k, hits_at_k as f64 / members.len() as f64)
            })
            .collect();
        buckets.push(BucketReport {
            bucket,
            n: members.len(),
            recall,
        });
    }
    EvalReport {
        system: system_name.to_string(),
        spec: *spec,
        buckets,
    }
}

/// Renders reports as an aligned table: one row per system, one column per
/// bucket and k.
pub fn render_table(reports: &[EvalReport], ks: &[usize]) -> String {
    let mut out = String::new();
    let mut header = format!("{:<18}", "system");
    for bucket in Bucket::ALL {
        for &k in ks {
            header.push_str(&format!("{:>16}", format!("{} R@{}", bucket.label(), k)));
        }
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for report in reports {
        out.push_str(&format!("{:<18}", report.system));
        for bucket in Bucket::ALL {
            for &k in ks {
                match report.recall(bucket, k) {
                    Some(r) => out.push_str(&format!("{:>16.3}", r)),
                    None => out.push_str(&format!("{:>16}", "-")),
                }
            }
        }
        out.push('\n');
    }
    out
}

/// One machine-readable record per (system, bucket, k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub system: String,
    pub bucket: Bucket,
    pub k: usize,
    pub value: f64,
    pub n: usize,
}

pub fn to_records(reports: &[EvalReport]) -> Vec<EvalRecord> {
    let mut records = Vec::new();
    for report in reports {
        for bucket in &report.buckets {
            for &(k, value) in &bucket.recall {
                records.push(EvalRecord {
                    system: report.system.clone(),
                    bucket: bucket.bucket,
                    k,
                    value,
                    n: bucket.n,
                });
            }
        }
    }
    records
}
