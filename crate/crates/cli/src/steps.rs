//! The pipeline stages behind the subcommands. Each step reads artifacts
//! from the workdir, writes its own, and records hashes in the manifest so
//! reruns with unchanged inputs are no-ops.

use std::path::Path;

use serde::Serialize;

use retlab::corpus::{first_sentence, ingest_passages, load_samples, save_samples, Normalization, PassageStore, QASample};
use retlab::embed::build_dense_index;
use retlab::evalkit::{
    evaluate, hit_at_k, render_table, to_records, DenseRetriever, Retriever, RoutedRetriever,
    SparseRetriever,
};
use retlab::lexical::{build_sparse_index, sparse_top_k, tokenize};
use retlab::roundtrip::{select, Category};
use retlab::router::{build_labels, route, train_router};
use retlab::synthgen::{
    dedupe_against, filter_answer_presence, filter_popularity, generate_candidates, load_triples,
    TemplateSet,
};
use retlab::train::{mine_examples, train_retriever};
use retlab::{DenseIndex, EncoderParams, InverseModel, Route, RouterModel, SparseIndex};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::{sha256_str, StepRunner};

/// Training-set variants of the retriever; `untrained` is the raw
/// initialization and needs no training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Untrained,
    Selected,
    Random,
    Full,
    Qwaw,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "untrained" => Ok(Self::Untrained),
            "selected" => Ok(Self::Selected),
            "random" => Ok(Self::Random),
            "full" => Ok(Self::Full),
            "qwaw" => Ok(Self::Qwaw),
            other => Err(CliError::Config(format!(
                "unknown variant {other:?} (expected untrained|selected|random|full|qwaw)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Untrained => "untrained",
            Self::Selected => "selected",
            Self::Random => "random",
            Self::Full => "full",
            Self::Qwaw => "qwaw",
        }
    }

    pub const TRAINED: [Variant; 4] = [Self::Selected, Self::Random, Self::Full, Self::Qwaw];
}

fn hash_cfg<T: Serialize>(value: &T) -> String {
    sha256_str(&serde_json::to_string(value).expect("serializable config"))
}

fn external_input(label: &str, path: &Path) -> (String, std::path::PathBuf) {
    (label.to_string(), path.to_path_buf())
}

pub fn ingest(cfg: &PipelineConfig, runner: &mut StepRunner) -> Result<(), CliError> {
    let corpus = cfg.paths.corpus.clone();
    if !corpus.exists() {
        return Err(CliError::Config(format!(
            "paths.corpus does not exist: {}",
            corpus.display()
        )));
    }
    runner.ensure(
        "store",
        &hash_cfg(&"normalization-v1"),
        &[external_input("corpus", &corpus)],
        &["store.jsonl"],
        |wd| {
            let store = ingest_passages(&corpus, Normalization::default())?;
            store
                .save(&wd.join("store.jsonl"))
                .map_err(|e| CliError::Other(e.to_string()))?;
            println!("ingested {} passages", store.len());
            Ok(())
        },
    )?;
    Ok(())
}

pub fn load_store(runner: &StepRunner) -> Result<PassageStore, CliError> {
    let path = runner.require("store.jsonl")?;
    Ok(ingest_passages(&path, Normalization::default())?)
}

pub fn index_sparse(cfg: &PipelineConfig, runner: &mut StepRunner) -> Result<(), CliError> {
    let store_path = runner.require("store.jsonl")?;
    let (k1, b) = (cfg.sparse.k1, cfg.sparse.b);
    runner.ensure(
        "sparse_index",
        &hash_cfg(&cfg.sparse),
        &[external_input("store.jsonl", &store_path)],
        &["sparse_index.bin"],
        |wd| {
            let store = ingest_passages(&store_path, Normalization::default())?;
            let index = build_sparse_index::<f64>(&store, k1, b)?;
            index.save(&wd.join("sparse_index.bin"))?;
            println!("indexed {} passages ({} terms implied)", store.len(), index.doc_count());
            Ok(())
        },
    )?;
    Ok(())
}

pub fn synth(cfg: &PipelineConfig, runner: &mut StepRunner) -> Result<(), CliError> {
    let store_path = runner.require("store.jsonl")?;
    let sparse_path = runner.require("sparse_index.bin")?;
    let mut inputs = vec![
        external_input("triples", &cfg.paths.triples),
        external_input("templates", &cfg.paths.templates),
        external_input("store.jsonl", &store_path),
        external_input("sparse_index.bin", &sparse_path),
    ];
    if let Some(reserved) = &cfg.paths.reserved {
        inputs.push(external_input("reserved", reserved));
    }
    for (label, path) in &inputs[..2] {
        if !path.exists() {
            return Err(CliError::Config(format!(
                "paths.{label} does not exist: {}",
                path.display()
            )));
        }
    }
    let cfg_clone = cfg.clone();
    runner.ensure(
        "pool",
        &hash_cfg(&cfg.synth),
        &inputs,
        &["pool.jsonl"],
        |wd| {
            let store = ingest_passages(&store_path, Normalization::default())?;
            let sparse = SparseIndex::load(&sparse_path)?;
            let triples = load_triples(&cfg_clone.paths.triples)?;
            let templates = TemplateSet::load(&cfg_clone.paths.templates)?;
            let candidates = generate_candidates(&triples, &templates)?;
            let total = candidates.len();
            let pool = filter_popularity(candidates, cfg_clone.synth.max_popularity);
            let after_pop = pool.len();
            let pool = filter_answer_presence(pool, &sparse, &store, cfg_clone.synth.depth);
            let after_presence = pool.len();
            let pool = match &cfg_clone.paths.reserved {
                Some(path) => {
                    let reserved = load_samples(path)?;
                    dedupe_against(pool, &reserved)
                }
                None => pool,
            };
            println!(
                "synthetic pool: {total} candidates -> {after_pop} after popularity -> \
                 {after_presence} after answer presence -> {} after dedupe",
                pool.len()
            );
            save_samples(&wd.join("pool.jsonl"), &pool)?;
            Ok(())
        },
    )?;
    Ok(())
}

pub fn train_inverse(cfg: &PipelineConfig, runner: &mut StepRunner) -> Result<(), CliError> {
    let pool_path = runner.require("pool.jsonl")?;
    let store_path = runner.require("store.jsonl")?;
    let cfg_clone = cfg.clone();
    runner.ensure(
        "inverse_model",
        &hash_cfg(&(&cfg.inverse, &cfg.encoder)),
        &[
            external_input("pool.jsonl", &pool_path),
            external_input("store.jsonl", &store_path),
        ],
        &["inverse_model.bin", "inverse_log.jsonl"],
        |wd| {
            let pool = load_samples(&pool_path)?;
            let store = ingest_passages(&store_path, Normalization::default())?;
            let mut texts: Vec<String> = pool.iter().map(|s| s.question.clone()).collect();
            for p in store.passages() {
                texts.push(first_sentence(&p.body).to_string());
            }
            let encoder = cfg_clone.init_encoder();
            let out = retlab::invert::train_inverse(&encoder, &texts, &cfg_clone.inverse_config())?;
            out.model.save(&wd.join("inverse_model.bin"))?;
            let mut log = String::new();
            for (epoch, ll) in out.epoch_log_likelihood.iter().enumerate() {
                log.push_str(
                    &serde_json::to_string(&serde_json::json!({
                        "epoch": epoch,
                        "mean_log_likelihood": ll,
                    }))
                    .expect("serializable"),
                );
                log.push('\n');
            }
            std::fs::write(wd.join("inverse_log.jsonl"), log)?;
            println!(
                "inverse model: vocab {} over {} texts, mean log-likelihood {:.4} -> {:.4}",
                out.model.vocab().len(),
                texts.len(),
                out.epoch_log_likelihood.first().copied().unwrap_or(0.0),
                out.epoch_log_likelihood.last().copied().unwrap_or(0.0),
            );
            Ok(())
        },
    )?;
    Ok(())
}

/// Audit record for the selection report file.
#[derive(Debug, Serialize, serde::Deserialize)]
pub struct ReportRecord {
    pub sample_id: u32,
    pub s: f64,
    pub category: String,
    pub x_hat_q: String,
    pub x_hat_a: String,
    pub q_correct: bool,
    pub a_correct: bool,
    pub degenerate: bool,
}

pub fn select_step(cfg: &PipelineConfig, runner: &mut StepRunner) -> Result<(), CliError> {
    let pool_path = runner.require("pool.jsonl")?;
    let inverse_path = runner.require("inverse_model.bin")?;
    let cfg_clone = cfg.clone();
    runner.ensure(
        "selected",
        &hash_cfg(&(&cfg.selection, &cfg.encoder)),
        &[
            external_input("pool.jsonl", &pool_path),
            external_input("inverse_model.bin", &inverse_path),
        ],
        &["selected.jsonl", "reports.jsonl"],
        |wd| {
            let pool = load_samples(&pool_path)?;
            let inverse = InverseModel::load(&inverse_path)?;
            let encoder = cfg_clone.init_encoder();
            let (selected, reports) =
                select(&pool, &encoder, &inverse, &cfg_clone.selection_config())?;
            save_samples(&wd.join("selected.jsonl"), &selected)?;
            let mut out = String::new();
            for r in &reports {
                let record = ReportRecord {
                    sample_id: r.sample_id,
                    s: r.s,
                    category: r.category.label().to_string(),
                    x_hat_q: r.x_hat_q.clone(),
                    x_hat_a: r.x_hat_a.clone(),
                    q_correct: r.q_correct,
                    a_correct: r.a_correct,
                    degenerate: r.degenerate,
                };
                out.push_str(&serde_json::to_string(&record).expect("serializable"));
                out.push('\n');
            }
            std::fs::write(wd.join("reports.jsonl"), out)?;
            println!("selected {} of {} samples", selected.len(), pool.len());
            Ok(())
        },
    )?;
    Ok(())
}

fn load_reports(path: &Path) -> Result<Vec<ReportRecord>, CliError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Other(e.to_string())))
        .collect()
}

/// The training set a variant uses, derived from the pool, the selection,
/// and the audit reports.
fn variant_training_set(
    variant: Variant,
    pool: &[QASample],
    selected: &[QASample],
    reports: &[ReportRecord],
    seed: u64,
) -> Vec<QASample> {
    match variant {
        Variant::Untrained => Vec::new(),
        Variant::Selected => selected.to_vec(),
        Variant::Full => pool.to_vec(),
        Variant::Random => {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed.wrapping_add(100));
            let mut shuffled: Vec<QASample> = pool.to_vec();
            shuffled.shuffle(&mut rng);
            shuffled.truncate(selected.len());
            shuffled
        }
        Variant::Qwaw => pool
            .iter()
            .zip(reports)
            .filter(|(_, r)| r.category == Category::QwAw.label() && !r.degenerate)
            .map(|(s, _)| s.clone())
            .take(selected.len().max(1))
            .collect(),
    }
}

pub fn train_retriever_step(
    cfg: &PipelineConfig,
    runner: &mut StepRunner,
    variant: Variant,
) -> Result<(), CliError> {
    if variant == Variant::Untrained {
        return Err(CliError::Config(
            "the untrained variant has no training step".into(),
        ));
    }
    let pool_path = runner.require("pool.jsonl")?;
    let selected_path = runner.require("selected.jsonl")?;
    let reports_path = runner.require("reports.jsonl")?;
    let sparse_path = runner.require("sparse_index.bin")?;
    let store_path = runner.require("store.jsonl")?;
    let cfg_clone = cfg.clone();
    let encoder_file = format!("encoder_{}.bin", variant.name());
    let log_file = format!("train_log_{}.jsonl", variant.name());
    let outputs = [encoder_file.as_str(), log_file.as_str()];
    runner.ensure(
        &format!("encoder_{}", variant.name()),
        &hash_cfg(&(&cfg.train, &cfg.encoder, variant.name())),
        &[
            external_input("pool.jsonl", &pool_path),
            external_input("selected.jsonl", &selected_path),
            external_input("reports.jsonl", &reports_path),
            external_input("sparse_index.bin", &sparse_path),
            external_input("store.jsonl", &store_path),
        ],
        &outputs,
        |wd| {
            let pool = load_samples(&pool_path)?;
            let selected = load_samples(&selected_path)?;
            let reports = load_reports(&reports_path)?;
            let store = ingest_passages(&store_path, Normalization::default())?;
            let sparse = SparseIndex::load(&sparse_path)?;
            let train_cfg = cfg_clone.train_config()?;
            let set = variant_training_set(variant, &pool, &selected, &reports, train_cfg.seed);
            if set.is_empty() {
                return Err(CliError::Other(format!(
                    "variant {} has an empty training set",
                    variant.name()
                )));
            }
            let (examples, dropped) =
                mine_examples(&set, &sparse, &store, train_cfg.negatives_per_example);
            let init = cfg_clone.init_encoder();
            let out = train_retriever(&init, &examples, &store, &train_cfg)?;
            out.params.save(&wd.join(&encoder_file))?;
            let mut log = String::new();
            for e in &out.epochs {
                log.push_str(
                    &serde_json::to_string(&serde_json::json!({
                        "epoch": e.epoch,
                        "mean_loss": e.mean_loss,
                        "wall_ms": e.wall_ms,
                    }))
                    .expect("serializable"),
                );
                log.push('\n');
            }
            std::fs::write(wd.join(&log_file), log)?;
            println!(
                "trained {}: {} samples -> {} examples ({dropped} dropped), loss {:.4} -> {:.4}",
                variant.name(),
                set.len(),
                examples.len(),
                out.epochs.first().map_or(0.0, |e| e.mean_loss),
                out.epochs.last().map_or(0.0, |e| e.mean_loss),
            );
            Ok(())
        },
    )?;
    Ok(())
}

pub fn index_dense(
    cfg: &PipelineConfig,
    runner: &mut StepRunner,
    variant: Variant,
) -> Result<(), CliError> {
    let store_path = runner.require("store.jsonl")?;
    let mut inputs = vec![external_input("store.jsonl", &store_path)];
    let encoder_file = format!("encoder_{}.bin", variant.name());
    if variant != Variant::Untrained {
        inputs.push(external_input(&encoder_file, &runner.require(&encoder_file)?));
    }
    let index_file = format!("dense_index_{}.bin", variant.name());
    let cfg_clone = cfg.clone();
    let workdir = runner.workdir.clone();
    runner.ensure(
        &format!("dense_index_{}", variant.name()),
        &hash_cfg(&(&cfg.encoder, variant.name())),
        &inputs,
        &[index_file.as_str()],
        |wd| {
            let store = ingest_passages(&store_path, Normalization::default())?;
            let params = if variant == Variant::Untrained {
                cfg_clone.init_encoder()
            } else {
                EncoderParams::load(&workdir.join(&encoder_file))?
            };
            let index = build_dense_index(&params, &store);
            index.save(&wd.join(&index_file))?;
            println!("dense index {}: {} rows", variant.name(), index.len());
            Ok(())
        },
    )?;
    Ok(())
}

fn hits(
    retriever: &dyn Retriever,
    samples: &[QASample],
    store: &PassageStore,
    k: usize,
) -> Vec<bool> {
    samples
        .iter()
        .map(|s| hit_at_k(&retriever.retrieve(&s.question, k), store, &s.answers, k))
        .collect()
}

pub fn train_router_step(cfg: &PipelineConfig, runner: &mut StepRunner) -> Result<(), CliError> {
    let store_path = runner.require("store.jsonl")?;
    let sparse_path = runner.require("sparse_index.bin")?;
    let encoder_path = runner.require("encoder_selected.bin")?;
    let dense_path = runner.require("dense_index_selected.bin")?;
    let routing = cfg.paths.routing.clone();
    if !routing.exists() {
        return Err(CliError::Config(format!(
            "paths.routing does not exist: {}",
            routing.display()
        )));
    }
    let cfg_clone = cfg.clone();
    runner.ensure(
        "router",
        &hash_cfg(&cfg.router),
        &[
            external_input("routing", &routing),
            external_input("store.jsonl", &store_path),
            external_input("sparse_index.bin", &sparse_path),
            external_input("encoder_selected.bin", &encoder_path),
            external_input("dense_index_selected.bin", &dense_path),
        ],
        &["router.bin", "router_labels.jsonl"],
        |wd| {
            let store = ingest_passages(&store_path, Normalization::default())?;
            let sparse = SparseIndex::load(&sparse_path)?;
            let params = EncoderParams::load(&encoder_path)?;
            let dense = DenseIndex::load(&dense_path)?;
            let split = load_samples(&routing)?;
            // first half trains the router; the second stays held out
            let train_half = &split[..split.len() / 2];
            let sparse_ret = SparseRetriever { index: &sparse };
            let dense_ret = DenseRetriever {
                params: &params,
                index: &dense,
            };
            let k = cfg_clone.router.label_k;
            let sparse_hits = hits(&sparse_ret, train_half, &store, k);
            let dense_hits = hits(&dense_ret, train_half, &store, k);
            let labeled = build_labels(
                train_half,
                &sparse_hits,
                &dense_hits,
                &sparse,
                cfg_clone.router.seed,
            );
            let model = train_router(&labeled, &cfg_clone.router_config())?;
            model.save(&wd.join("router.bin"))?;
            let mut audit = String::new();
            for (features, label) in &labeled {
                audit.push_str(
                    &serde_json::to_string(&serde_json::json!({
                        "features": features.values,
                        "label": match label {
                            Route::Sparse => "sparse",
                            Route::Dense => "dense",
                        },
                    }))
                    .expect("serializable"),
                );
                audit.push('\n');
            }
            std::fs::write(wd.join("router_labels.jsonl"), audit)?;
            let n_sparse = labeled.iter().filter(|(_, r)| *r == Route::Sparse).count();
            println!(
                "router trained on {} labels ({} sparse / {} dense)",
                labeled.len(),
                n_sparse,
                labeled.len() - n_sparse
            );
            Ok(())
        },
    )?;
    Ok(())
}

/// A named retrieval system assembled from workdir artifacts.
pub struct EvalSystems {
    pub store: PassageStore,
    pub sparse: SparseIndex,
    dense: Vec<(String, EncoderParams, DenseIndex)>,
    router: Option<RouterModel>,
}

impl EvalSystems {
    pub fn load(
        cfg: &PipelineConfig,
        runner: &StepRunner,
        systems: &[String],
    ) -> Result<Self, CliError> {
        let store = load_store(runner)?;
        let sparse = SparseIndex::load(&runner.require("sparse_index.bin")?)?;
        let mut dense = Vec::new();
        let mut router = None;
        let need_variant = |v: Variant| -> Result<(EncoderParams, DenseIndex), CliError> {
            let params = if v == Variant::Untrained {
                cfg.init_encoder()
            } else {
                EncoderParams::load(&runner.require(&format!("encoder_{}.bin", v.name()))?)?
            };
            let index = DenseIndex::load(&runner.require(&format!("dense_index_{}.bin", v.name()))?)?;
            Ok((params, index))
        };
        for system in systems {
            match system.as_str() {
                "bm25" => {}
                "routed" => {
                    router = Some(RouterModel::load(&runner.require("router.bin")?)?);
                    if !dense.iter().any(|(n, _, _)| n == "dense-selected") {
                        let (p, i) = need_variant(Variant::Selected)?;
                        dense.push(("dense-selected".to_string(), p, i));
                    }
                }
                name => {
                    let variant = Variant::parse(
                        name.strip_prefix("dense-")
                            .ok_or_else(|| CliError::Config(format!("unknown system {name:?}")))?,
                    )?;
                    if !dense.iter().any(|(n, _, _)| n == name) {
                        let (p, i) = need_variant(variant)?;
                        dense.push((name.to_string(), p, i));
                    }
                }
            }
        }
        Ok(Self {
            store,
            sparse,
            dense,
            router,
        })
    }

    pub fn dense_system(&self, name: &str) -> Option<DenseRetriever<'_, f64>> {
        self.dense
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, params, index)| DenseRetriever { params, index })
    }

    pub fn retrieve_with(
        &self,
        system: &str,
        query: &str,
        k: usize,
    ) -> Result<Vec<(u32, f64)>, CliError> {
        match system {
            "bm25" => Ok(sparse_top_k(&self.sparse, &tokenize(query), k)),
            "routed" => {
                let router = self
                    .router
                    .as_ref()
                    .ok_or_else(|| CliError::Other("router not loaded".into()))?;
                match route(router, query, &self.sparse) {
                    Route::Sparse => Ok(sparse_top_k(&self.sparse, &tokenize(query), k)),
                    Route::Dense => {
                        let dense = self
                            .dense_system("dense-selected")
                            .ok_or_else(|| CliError::Other("dense-selected not loaded".into()))?;
                        let emb = retlab::embed::encode(dense.params, &dense.params.features(query))
                            .expect("matching dim");
                        Ok(retlab::embed::dense_top_k(dense.index, &emb, k).expect("matching dim"))
                    }
                }
            }
            name => {
                let dense = self
                    .dense_system(name)
                    .ok_or_else(|| CliError::Config(format!("unknown system {name:?}")))?;
                let emb = retlab::embed::encode(dense.params, &dense.params.features(query))
                    .expect("matching dim");
                Ok(retlab::embed::dense_top_k(dense.index, &emb, k).expect("matching dim"))
            }
        }
    }
}

pub fn eval_step(cfg: &PipelineConfig, runner: &mut StepRunner) -> Result<(), CliError> {
    let qa_eval = cfg.paths.qa_eval.clone();
    if !qa_eval.exists() {
        return Err(CliError::Config(format!(
            "paths.qa_eval does not exist: {}",
            qa_eval.display()
        )));
    }
    let mut inputs = vec![
        external_input("qa_eval", &qa_eval),
        external_input("store.jsonl", &runner.require("store.jsonl")?),
        external_input("sparse_index.bin", &runner.require("sparse_index.bin")?),
    ];
    for system in &cfg.eval.systems {
        match system.as_str() {
            "bm25" => {}
            "routed" => {
                inputs.push(external_input("router.bin", &runner.require("router.bin")?));
                inputs.push(external_input(
                    "dense_index_selected.bin",
                    &runner.require("dense_index_selected.bin")?,
                ));
            }
            name => {
                let variant = Variant::parse(
                    name.strip_prefix("dense-")
                        .ok_or_else(|| CliError::Config(format!("unknown system {name:?}")))?,
                )?;
                let file = format!("dense_index_{}.bin", variant.name());
                inputs.push(external_input(&file, &runner.require(&file)?));
                if variant != Variant::Untrained {
                    let enc = format!("encoder_{}.bin", variant.name());
                    inputs.push(external_input(&enc, &runner.require(&enc)?));
                }
            }
        }
    }
    inputs.sort();
    inputs.dedup();
    let cfg_clone = cfg.clone();
    let runner_view = StepRunner {
        workdir: runner.workdir.clone(),
        force: runner.force,
        manifest: runner.manifest.clone(),
    };
    runner.ensure(
        "eval_report",
        &hash_cfg(&cfg.eval),
        &inputs,
        &["eval_report.txt", "eval_report.jsonl"],
        |wd| {
            let systems = EvalSystems::load(&cfg_clone, &runner_view, &cfg_clone.eval.systems)?;
            let samples = load_samples(&qa_eval)?;
            let spec = cfg_clone.bucket_spec();
            let mut reports = Vec::new();
            for name in &cfg_clone.eval.systems {
                let report = match name.as_str() {
                    "bm25" => evaluate(
                        &SparseRetriever {
                            index: &systems.sparse,
                        },
                        name,
                        &samples,
                        &systems.store,
                        &cfg_clone.eval.ks,
                        &spec,
                    ),
                    "routed" => {
                        let dense = systems
                            .dense_system("dense-selected")
                            .ok_or_else(|| CliError::Other("dense-selected not loaded".into()))?;
                        let routed = RoutedRetriever {
                            router: systems.router.as_ref().expect("router loaded"),
                            sparse: SparseRetriever {
                                index: &systems.sparse,
                            },
                            dense,
                        };
                        evaluate(&routed, name, &samples, &systems.store, &cfg_clone.eval.ks, &spec)
                    }
                    other => {
                        let dense = systems
                            .dense_system(other)
                            .ok_or_else(|| CliError::Config(format!("unknown system {other:?}")))?;
                        evaluate(&dense, name, &samples, &systems.store, &cfg_clone.eval.ks, &spec)
                    }
                };
                reports.push(report);
            }
            let table = render_table(&reports, &cfg_clone.eval.ks);
            std::fs::write(wd.join("eval_report.txt"), &table)?;
            let mut jsonl = String::new();
            for record in to_records(&reports) {
                jsonl.push_str(&serde_json::to_string(&record).expect("serializable"));
                jsonl.push('\n');
            }
            std::fs::write(wd.join("eval_report.jsonl"), jsonl)?;
            println!("{table}");
            Ok(())
        },
    )?;
    Ok(())
}

pub fn retrieve(
    cfg: &PipelineConfig,
    runner: &StepRunner,
    system: &str,
    query: &str,
    k: usize,
) -> Result<(), CliError> {
    let systems = EvalSystems::load(cfg, runner, &[system.to_string()])?;
    let ranked = systems.retrieve_with(system, query, k)?;
    for (rank, (id, score)) in ranked.iter().enumerate() {
        let title = systems
            .store
            .get(*id)
            .map(|p| p.title.clone())
            .unwrap_or_default();
        println!("{:>3}  {:>6}  {:>10.4}  {}", rank + 1, id, score, title);
    }
    Ok(())
}

pub fn pipeline(cfg: &PipelineConfig, runner: &mut StepRunner) -> Result<(), CliError> {
    ingest(cfg, runner)?;
    index_sparse(cfg, runner)?;
    synth(cfg, runner)?;
    train_inverse(cfg, runner)?;
    select_step(cfg, runner)?;
    // variants needed by the report rows
    let mut variants: Vec<Variant> = Vec::new();
    for system in &cfg.eval.systems {
        let variant = match system.as_str() {
            "bm25" => None,
            "routed" => Some(Variant::Selected),
            name => Some(Variant::parse(name.strip_prefix("dense-").ok_or_else(
                || CliError::Config(format!("unknown system {name:?}")),
            )?)?),
        };
        if let Some(v) = variant {
            if !variants.contains(&v) {
                variants.push(v);
            }
        }
    }
    for v in &variants {
        if *v != Variant::Untrained {
            train_retriever_step(cfg, runner, *v)?;
        }
    }
    for v in &variants {
        index_dense(cfg, runner, *v)?;
    }
    if cfg.eval.systems.iter().any(|s| s == "routed") {
        train_router_step(cfg, runner)?;
    }
    eval_step(cfg, runner)?;
    Ok(())
}

pub fn gen_testbed(out: &Path, seed: u64) -> Result<(), CliError> {
    let spec = retlab::testbed::TestbedSpec {
        seed,
        ..Default::default()
    };
    let tb = retlab::testbed::generate(&spec);
    tb.write_to(out)?;
    let cfg = PipelineConfig::for_testbed_dir(out);
    let text = toml::to_string_pretty(&cfg).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(out.join("config.toml"), text)?;
    println!(
        "testbed written to {}: {} passages, {} triples, {} eval samples, {} routing samples",
        out.display(),
        tb.passages.len(),
        tb.triples.len(),
        tb.eval_samples.len(),
        tb.routing_samples.len(),
    );
    println!("config written to {}", out.join("config.toml").display());
    Ok(())
}
