//! Pipeline configuration: a TOML file with every key overridable by a
//! command-line flag of the same dotted name, plus a global `--seed` that
//! re-derives every stage seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub triples: PathBuf,
    pub templates: PathBuf,
    pub qa_eval: PathBuf,
    pub routing: PathBuf,
    /// Optional reserved list for the deduplication filter.
    pub reserved: Option<PathBuf>,
    pub workdir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: "testbed/corpus.jsonl".into(),
            triples: "testbed/triples.jsonl".into(),
            templates: "testbed/templates.jsonl".into(),
            qa_eval: "testbed/qa_eval.jsonl".into(),
            routing: "testbed/routing.jsonl".into(),
            reserved: Some("testbed/reserved.jsonl".into()),
            workdir: "work".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d: u32,
    pub feature_dim: u32,
    pub hash_seed: u64,
    pub init_seed: u64,
    pub shared: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            feature_dim: 1 << 15,
            hash_seed: 7,
            init_seed: 42,
            shared: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseConfig {
    pub k1: f64,
    pub b: f64,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub max_popularity: u64,
    pub depth: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            max_popularity: 1_000_000,
            depth: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_len: usize,
    pub beam: usize,
    pub vocab_cap: usize,
}

impl Default for InverseSection {
    fn default() -> Self {
        // Calibrated for the bundled testbed; the library defaults
        // (30 epochs, lr 0.1, beam 8) work but recover fewer entities.
        Self {
            epochs: 40,
            learning_rate: 0.15,
            seed: 1,
            max_len: 16,
            beam: 12,
            vocab_cap: 50_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub threshold: f64,
    pub cap: Option<usize>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            cap: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    pub seed: u64,
    /// "adam" or "sgd".
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub in_batch_negatives: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 15,
            learning_rate: 1e-2,
            negatives: 4,
            seed: 3,
            optimizer: "adam".into(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            in_batch_negatives: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Rank cutoff for hit/miss labels.
    pub label_k: usize,
}

impl Default for RouterSection {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: 0.5,
            seed: 5,
            label_k: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub long_tail_upper: u64,
    pub infrequent_upper: u64,
    /// Report rows, in order.
    pub systems: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![10, 20],
            long_tail_upper: 100,
            infrequent_upper: 10_000,
            systems: vec![
                "bm25".into(),
                "dense-untrained".into(),
                "dense-selected".into(),
                "dense-random".into(),
                "dense-full".into(),
                "dense-qwaw".into(),
                "routed".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub encoder: EncoderConfig,
    pub sparse: SparseConfig,
    pub synth: SynthConfig,
    pub inverse: InverseSection,
    pub selection: SelectionSection,
    pub train: TrainSection,
    pub router: RouterSection,
    pub eval: EvalSection,
}

impl PipelineConfig {
    /// Loads the TOML config, then applies `--key.path value` overrides and
    /// the global seed.
    pub fn load(
        path: Option<&Path>,
        overrides: &[(String, String)],
        global_seed: Option<u64>,
    ) -> Result<Self, CliError> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Value::Table(toml::map::Map::new()),
        };
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let mut cfg: PipelineConfig = value
            .try_into()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(seed) = global_seed {
            cfg.apply_global_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Derives every stage seed from one global seed with fixed offsets.
    pub fn apply_global_seed(&mut self, seed: u64) {
        self.encoder.init_seed = seed.wrapping_add(1);
        self.inverse.seed = seed.wrapping_add(2);
        self.train.seed = seed.wrapping_add(3);
        self.router.seed = seed.wrapping_add(4);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(format!("invalid config field: {name}")))
            }
        };
        field("encoder.d", self.encoder.d >= 2)?;
        field("encoder.feature_dim", self.encoder.feature_dim >= 16)?;
        field("sparse.k1", self.sparse.k1 > 0.0)?;
        field("sparse.b", (0.0..=1.0).contains(&self.sparse.b))?;
        field("synth.depth", self.synth.depth >= 1)?;
        field("inverse.beam", self.inverse.beam >= 1)?;
        field("inverse.max_len", self.inverse.max_len >= 1)?;
        field("selection.threshold", self.selection.threshold.is_finite())?;
        field(
            "selection.cap",
            self.selection.cap.map_or(true, |c| c >= 1),
        )?;
        field("train.batch_size", self.train.batch_size >= 1)?;
        field("train.negatives", self.train.negatives >= 1)?;
        field(
            "train.learning_rate",
            self.train.learning_rate.is_finite() && self.train.learning_rate >= 0.0,
        )?;
        field(
            "train.optimizer",
            self.train.optimizer == "adam" || self.train.optimizer == "sgd",
        )?;
        field("router.label_k", self.router.label_k >= 1)?;
        field("eval.ks", !self.eval.ks.is_empty())?;
        field(
            "eval.ks",
            self.eval.ks.windows(2).all(|w| w[0] < w[1]),
        )?;
        field(
            "eval.buckets",
            self.eval.long_tail_upper < self.eval.infrequent_upper,
        )?;
        field("eval.systems", !self.eval.systems.is_empty())?;
        Ok(())
    }

    pub fn train_config(&self) -> Result<retlab::TrainConfig, CliError> {
        let optimizer = match self.train.optimizer.as_str() {
            "sgd" => retlab::train::OptimizerKind::Sgd,
            "adam" => retlab::train::OptimizerKind::Adam {
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                epsilon: self.train.epsilon,
                weight_decay: self.train.weight_decay,
            },
            other => {
                return Err(CliError::Config(format!(
                    "invalid config field: train.optimizer ({other})"
                )))
            }
        };
        Ok(retlab::TrainConfig {
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            negatives_per_example: self.train.negatives,
            seed: self.train.seed,
            optimizer,
            in_batch_negatives: self.train.in_batch_negatives,
        })
    }

    pub fn inverse_config(&self) -> retlab::InverseConfig {
        retlab::InverseConfig {
            epochs: self.inverse.epochs,
            learning_rate: self.inverse.learning_rate,
            seed: self.inverse.seed,
            max_len: self.inverse.max_len,
            beam: self.inverse.beam,
            vocab_cap: self.inverse.vocab_cap,
        }
    }

    pub fn selection_config(&self) -> retlab::SelectionConfig {
        retlab::SelectionConfig {
            threshold: self.selection.threshold,
            cap: self.selection.cap,
        }
    }

    pub fn router_config(&self) -> retlab::RouterConfig {
        retlab::RouterConfig {
            epochs: self.router.epochs,
            learning_rate: self.router.learning_rate,
            seed: self.router.seed,
        }
    }

    pub fn bucket_spec(&self) -> retlab::BucketSpec {
        retlab::BucketSpec {
            long_tail_upper: self.eval.long_tail_upper,
            infrequent_upper: self.eval.infrequent_upper,
        }
    }

    pub fn init_encoder(&self) -> retlab::EncoderParams {
        retlab::EncoderParams::init(
            self.encoder.d,
            self.encoder.feature_dim,
            self.encoder.hash_seed,
            self.encoder.shared,
            self.encoder.init_seed,
        )
    }

    /// The bundled config written next to a generated testbed.
    pub fn for_testbed_dir(dir: &Path) -> Self {
        let mut cfg = Self::default();
        cfg.paths = PathsConfig {
            corpus: dir.join("corpus.jsonl"),
            triples: dir.join("triples.jsonl"),
            templates: dir.join("templates.jsonl"),
            qa_eval: dir.join("qa_eval.jsonl"),
            routing: dir.join("routing.jsonl"),
            reserved: Some(dir.join("reserved.jsonl")),
            workdir: dir.join("work"),
        };
        cfg
    }
}

/// Applies one `--a.b.c value` override onto the parsed TOML tree. The value
/// is parsed as a TOML literal where possible, falling back to a string.
fn apply_override(root: &mut toml::Value, dotted: &str, raw: &str) -> Result<(), CliError> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid override key {dotted:?}")));
    }
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").expect("parsed literal"),
        _ => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {dotted:?}: not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("override {dotted:?}: not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
