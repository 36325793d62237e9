//! Synthetic long-tail QA generation from knowledge triples: template
//! instantiation, popularity filtering, answer-presence filtering against
//! the sparse index, and deduplication against a reserved set.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PassageStore, QASample};
use crate::lexical::{contains_case_folded, sparse_top_k, tokenize, SparseIndex};
use crate::scalar::Scalar;

pub const SUBJECT_PLACEHOLDER: &str = "{subject}";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("no template for relation {relation:?}")]
    MissingTemplate { relation: String },
    #[error("template for relation {relation:?} must contain {SUBJECT_PLACEHOLDER} exactly once")]
    BadTemplate { relation: String },
}

/// One knowledge triple with a popularity proxy for its subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub popularity: u64,
}

/// Relation label to question template; each template holds the subject
/// placeholder exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TemplateRecord {
    relation: String,
    template: String,
}

impl TemplateSet {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self, SynthError> {
        let mut templates = BTreeMap::new();
        for (relation, template) in pairs {
            if template.matches(SUBJECT_PLACEHOLDER).count() != 1 {
                return Err(SynthError::BadTemplate { relation });
            }
            templates.insert(relation, template);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, relation: &str) -> Option<&str> {
        self.templates.get(relation).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.templates.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let file = File::open(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| SynthError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let rec: TemplateRecord =
                serde_json::from_str(&line).map_err(|e| SynthError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            pairs.push((rec.relation, rec.template));
        }
        Self::new(pairs)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let file = File::create(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        for (relation, template) in &self.templates {
            let rec = TemplateRecord {
                relation: relation.clone(),
                template: template.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("serializable")).map_err(
                |source| SynthError::Io {
                    path: path.display().to_string(),
                    source,
                },
            )?;
        }
        Ok(())
    }
}

/// Loads triples from a line-delimited record file.
pub fn load_triples(path: &Path) -> Result<Vec<Triple>, SynthError> {
    let file = File::open(path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut triples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let t: Triple = serde_json::from_str(&line).map_err(|e| SynthError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        triples.push(t);
    }
    Ok(triples)
}

pub fn save_triples(path: &Path, triples: &[Triple]) -> Result<(), SynthError> {
    let file = File::create(path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for t in triples {
        writeln!(w, "{}", serde_json::to_string(t).expect("serializable")).map_err(|source| {
            SynthError::Io {
                path: path.display().to_string(),
                source,
            }
        })?;
    }
    Ok(())
}

/// One candidate QA sample per triple, in triple order: the question is the
/// relation's template with the subject substituted, the answer the object.
pub fn generate_candidates(
    triples: &[Triple],
    templates: &TemplateSet,
) -> Result<Vec<QASample>, SynthError> {
    let mut pool = Vec::with_capacity(triples.len());
    for t in triples {
        let template = templates
            .get(&t.relation)
            .ok_or_else(|| SynthError::MissingTemplate {
                relation: t.relation.clone(),
            })?;
        let question = template.replace(SUBJECT_PLACEHOLDER, &t.subject);
        pool.push(QASample {
            id: pool.len() as u32,
            question,
            answers: vec![t.object.clone()],
            subject_entity: t.subject.clone(),
            answer_entity: Some(t.object.clone()),
            relation: t.relation.clone(),
            frequency: t.popularity,
        });
    }
    Ok(pool)
}

/// Keeps samples whose frequency is strictly below the threshold; order
/// preserved.
pub fn filter_popularity(pool: Vec<QASample>, max_popularity: u64) -> Vec<QASample> {
    pool.into_iter()
        .filter(|s| s.frequency < max_popularity)
        .collect()
}

/// Keeps a sample iff any of its answer strings appears (case-folded) in any
/// of the top `depth` passages retrieved for its question.
pub fn filter_answer_presence<S: Scalar>(
    pool: Vec<QASample>,
    index: &SparseIndex<S>,
    store: &PassageStore,
    depth: usize,
) -> Vec<QASample> {
    pool.into_iter()
        .filter(|sample| {
            let ranked = sparse_top_k(index, &tokenize(&sample.question), depth);
            ranked.iter().any(|&(id, _)| {
                let text = store.get(id).expect("ranked id in range").full_text();
                sample.answers.iter().any(|a| contains_case_folded(&text, a))
            })
        })
        .collect()
}

/// Drops samples whose (subject_entity, relation) pair appears in the
/// reserved set.
pub fn dedupe_against(pool: Vec<QASample>, reserved: &[QASample]) -> Vec<QASample> {
    let reserved_pairs: HashSet<(&str, &str)> = reserved
        .iter()
        .map(|s| (s.subject_entity.as_str(), s.relation.as_str()))
        .collect();
    pool.into_iter()
        .filter(|s| !reserved_pairs.contains(&(s.subject_entity.as_str(), s.relation.as_str())))
        .collect()
}
