//! Passage and QA-sample ingestion, normalization, and persistence.
//!
//! Corpora and sample sets live in UTF-8 line-delimited JSON files. Ids are
//! assigned by file order and never stored in the file, so corpora stay
//! trivially editable and diffs stay stable.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Stable, dense passage identifier (assigned 0.. in file order).
pub type PassageId = u32;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: frequency must be non-negative, got {value}")]
    NegativeFrequency { line: usize, value: i64 },
}

/// One retrievable unit of the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: PassageId,
    pub title: String,
    pub body: String,
}

impl Passage {
    /// Title and body joined with a single space; the text every retriever
    /// and the answer-match rule operate on.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.title, self.body)
    }
}

/// Everything up to and including the first period, or the whole text if
/// there is none. The inverse model trains on these.
pub fn first_sentence(text: &str) -> &str {
    match text.find('.') {
        Some(i) => &text[..=i],
        None => text,
    }
}

/// One question-answer sample, synthetic or hand-written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASample {
    pub id: u32,
    pub question: String,
    pub answers: Vec<String>,
    pub subject_entity: String,
    pub answer_entity: Option<String>,
    pub relation: String,
    /// Entity popularity count; drives the frequency buckets.
    pub frequency: u64,
}

/// Record of the text normalization applied at ingestion. Unicode NFC is
/// always applied; the flags cover the configurable parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    /// Lowercase the text at ingestion. Off by default: surface forms stay
    /// available for the entity-match checks downstream, and the tokenizer
    /// case-folds on its own.
    pub case_fold: bool,
    /// Collapse runs of whitespace to a single space and trim the ends.
    pub collapse_whitespace: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            case_fold: false,
            collapse_whitespace: true,
        }
    }
}

impl Normalization {
    pub fn apply(&self, text: &str) -> String {
        let mut out: String = text.nfc().collect();
        if self.collapse_whitespace {
            out = out.split_whitespace().collect::<Vec<_>>().join(" ");
        }
        if self.case_fold {
            out = out.to_lowercase();
        }
        out
    }
}

/// The retrieval corpus: immutable after construction, safe to share across
/// threads for concurrent reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageStore {
    passages: Vec<Passage>,
    normalization: Normalization,
}

#[derive(Debug, Serialize, Deserialize)]
struct PassageRecord {
    title: String,
    body: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    question: String,
    answers: Vec<String>,
    subject_entity: String,
    #[serde(default)]
    answer_entity: Option<String>,
    relation: String,
    frequency: i64,
}

impl PassageStore {
    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Total lookup for ids in `0..len`.
    pub fn get(&self, id: PassageId) -> Option<&Passage> {
        self.passages.get(id as usize)
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Writes the corpus back out in the ingestion format (ids implied by
    /// line order). Re-ingesting with the same options reproduces the store
    /// field-by-field: the normalization is idempotent.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let file = File::create(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        for p in &self.passages {
            let rec = PassageRecord {
                title: p.title.clone(),
                body: p.body.clone(),
            };
            let line = serde_json::to_string(&rec).expect("serializable record");
            writeln!(w, "{line}").map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

/// Reads a line-delimited passage file into a store with contiguous ids in
/// file order. Malformed lines are rejected with their 1-based line number.
pub fn ingest_passages(path: &Path, normalize: Normalization) -> Result<PassageStore, CorpusError> {
    let mut passages = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let rec: PassageRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let title = normalize.apply(&rec.title);
        let body = normalize.apply(&rec.body);
        if body.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "body is empty after normalization".to_string(),
            });
        }
        passages.push(Passage {
            id: passages.len() as PassageId,
            title,
            body,
        });
    }
    if passages.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(PassageStore {
        passages,
        normalization: normalize,
    })
}

/// Reads a line-delimited QA sample file. Ids are assigned by file order;
/// duplicate answers are dropped keeping the first occurrence.
pub fn load_samples(path: &Path) -> Result<Vec<QASample>, CorpusError> {
    let mut samples = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.frequency < 0 {
            return Err(CorpusError::NegativeFrequency {
                line: line_no,
                value: rec.frequency,
            });
        }
        if rec.question.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "question is empty".to_string(),
            });
        }
        let mut answers = Vec::new();
        for a in rec.answers {
            if !answers.contains(&a) {
                answers.push(a);
            }
        }
        if answers.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "answers is empty".to_string(),
            });
        }
        samples.push(QASample {
            id: samples.len() as u32,
            question: rec.question,
            answers,
            subject_entity: rec.subject_entity,
            answer_entity: rec.answer_entity,
            relation: rec.relation,
            frequency: rec.frequency as u64,
        });
    }
    Ok(samples)
}

/// Writes samples in the ingestion format (ids implied by line order).
pub fn save_samples(path: &Path, samples: &[QASample]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let rec = SampleRecord {
            question: s.question.clone(),
            answers: s.answers.clone(),
            subject_entity: s.subject_entity.clone(),
            answer_entity: s.answer_entity.clone(),
            relation: s.relation.clone(),
            frequency: s.frequency as i64,
        };
        let line = serde_json::to_string(&rec).expect("serializable record");
        writeln!(w, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}
