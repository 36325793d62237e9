//! Diagnostic run of the full bundled experiment, printing per-class and
//! per-bucket numbers. Used to calibrate the testbed and the default
//! hyperparameters; the CLI `pipeline` subcommand is the shipped version of
//! this flow.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use retlab::corpus::{first_sentence, ingest_passages, Normalization, QASample};
use retlab::embed::build_dense_index;
use retlab::evalkit::{
    evaluate, hit_at_k, Bucket, BucketSpec, DenseRetriever, Retriever, RoutedRetriever,
    SparseRetriever,
};
use retlab::lexical::build_sparse_index;
use retlab::roundtrip::{select, Category, SelectionConfig};
use retlab::router::{build_labels, train_router, RouterConfig};
use retlab::synthgen::{dedupe_against, filter_answer_presence, filter_popularity, generate_candidates};
use retlab::testbed::{generate, PoolClass, SampleClass, TestbedSpec};
use retlab::train::{mine_examples, train_retriever, TrainConfig};

fn main() {
    let t0 = Instant::now();
    let spec = TestbedSpec::default();
    let tb = generate(&spec);
    let dir = tempfile::tempdir().unwrap();
    tb.write_to(dir.path()).unwrap();
    let store = ingest_passages(&dir.path().join("corpus.jsonl"), Normalization::default()).unwrap();
    println!("[{:6.1?}] corpus: {} passages", t0.elapsed(), store.len());

    let sparse = build_sparse_index::<f64>(&store, 1.2, 0.75).unwrap();

    // ---- synth ----
    let candidates = generate_candidates(&tb.triples, &tb.templates).unwrap();
    let pool = filter_popularity(candidates, 1_000_000);
    let pool = filter_answer_presence(pool, &sparse, &store, 50);
    let pool = dedupe_against(pool, &tb.reserved_samples);
    println!(
        "[{:6.1?}] pool after filters: {} (expected {})",
        t0.elapsed(),
        pool.len(),
        tb.manifest.expected_pool_after_filters
    );

    // class lookup by (subject, relation)
    let class_of: HashMap<(String, String), PoolClass> = tb
        .triples
        .iter()
        .zip(&tb.manifest.pool_classes)
        .map(|(t, c)| ((t.subject.clone(), t.relation.clone()), *c))
        .collect();
    let pool_class = |s: &QASample| class_of[&(s.subject_entity.clone(), s.relation.clone())];
    let mut by_class: HashMap<PoolClass, usize> = HashMap::new();
    for s in &pool {
        *by_class.entry(pool_class(s)).or_default() += 1;
    }
    println!("  pool classes: {:?}", by_class);

    // ---- encoder + inverse ----
    let d = 64u32;
    let f_dim = 1u32 << 15;
    let encoder0 = retlab::embed::EncoderParams::<f64>::init(d, f_dim, 7, true, 42);
    let mut inverse_texts: Vec<String> = pool.iter().map(|s| s.question.clone()).collect();
    for p in store.passages() {
        inverse_texts.push(first_sentence(&p.body).to_string());
    }
    let inv_cfg = retlab::invert::InverseConfig {
        epochs: 40,
        learning_rate: 0.15,
        seed: 1,
        max_len: 16,
        beam: 12,
        vocab_cap: 50_000,
    };
    let t = Instant::now();
    let inverse = retlab::invert::train_inverse(&encoder0, &inverse_texts, &inv_cfg).unwrap();
    println!(
        "[{:6.1?}] inverse model: vocab {} trained in {:?}; epoch LL {:.4} -> {:.4}",
        t0.elapsed(),
        inverse.model.vocab().len(),
        t.elapsed(),
        inverse.epoch_log_likelihood.first().unwrap(),
        inverse.epoch_log_likelihood.last().unwrap()
    );

    // ---- selection ----
    let sel_cfg = SelectionConfig {
        threshold: 0.6,
        cap: None,
    };
    let t = Instant::now();
    let (selected, reports) = select(&pool, &encoder0, &inverse.model, &sel_cfg).unwrap();
    println!(
        "[{:6.1?}] selection: {} of {} in {:?}",
        t0.elapsed(),
        selected.len(),
        pool.len(),
        t.elapsed()
    );
    let mut cat_by_class: HashMap<(PoolClass, &'static str), usize> = HashMap::new();
    let mut s_by_class: HashMap<PoolClass, Vec<f64>> = HashMap::new();
    for (sample, report) in pool.iter().zip(&reports) {
        let class = pool_class(sample);
        *cat_by_class.entry((class, report.category.label())).or_default() += 1;
        s_by_class.entry(class).or_default().push(report.s);
    }
    let mut keys: Vec<_> = cat_by_class.keys().copied().collect();
    keys.sort_by_key(|(c, l)| (format!("{c:?}"), *l));
    for (class, label) in keys {
        println!("    {class:?} {label}: {}", cat_by_class[&(class, label)]);
    }
    for (class, scores) in &s_by_class {
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        println!("    mean S {class:?}: {mean:.3}");
    }
    let selected_classes: HashMap<PoolClass, usize> = {
        let mut m = HashMap::new();
        for s in &selected {
            *m.entry(pool_class(s)).or_default() += 1;
        }
        m
    };
    println!("    selected classes: {selected_classes:?}");

    // ---- training sets ----
    let m = 4;
    let train_cfg = TrainConfig::<f64> {
        batch_size: 32,
        epochs: 15,
        learning_rate: 1e-2,
        negatives_per_example: m,
        seed: 3,
        optimizer: retlab::train::OptimizerKind::adam_default(),
        in_batch_negatives: false,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let mut random_set: Vec<QASample> = pool.clone();
    random_set.shuffle(&mut rng);
    random_set.truncate(selected.len());
    let qwaw: Vec<QASample> = pool
        .iter()
        .zip(&reports)
        .filter(|(_, r)| r.category == Category::QwAw)
        .map(|(s, _)| s.clone())
        .take(selected.len())
        .collect();
    println!("    qwaw set: {}", qwaw.len());

    let mut variants: Vec<(&str, retlab::embed::EncoderParams<f64>)> =
        vec![("dense-untrained", encoder0.clone())];
    for (name, set) in [
        ("dense-selected", &selected),
        ("dense-random", &random_set),
        ("dense-full", &pool),
        ("dense-qwaw", &qwaw),
    ] {
        let t = Instant::now();
        let (examples, dropped) = mine_examples(set, &sparse, &store, m);
        let out = train_retriever(&encoder0, &examples, &store, &train_cfg).unwrap();
        println!(
            "[{:6.1?}] {name}: {} examples ({} dropped), loss {:.4} -> {:.4}, {:?}",
            t0.elapsed(),
            examples.len(),
            dropped,
            out.epochs.first().unwrap().mean_loss,
            out.epochs.last().unwrap().mean_loss,
            t.elapsed()
        );
        variants.push((name, out.params));
    }

    // ---- evaluation ----
    let ks = [10usize, 20];
    let bucket_spec = BucketSpec::default();
    let mut report_list = Vec::new();
    let sparse_ret = SparseRetriever { index: &sparse };
    report_list.push(evaluate(
        &sparse_ret,
        "bm25",
        &tb.eval_samples,
        &store,
        &ks,
        &bucket_spec,
    ));
    let mut dense_indexes = Vec::new();
    for (name, params) in &variants {
        let idx = build_dense_index(params, &store);
        dense_indexes.push((name.to_string(), params.clone(), idx));
    }
    for (name, params, idx) in &dense_indexes {
        let r = DenseRetriever { params, index: idx };
        report_list.push(evaluate(&r, name, &tb.eval_samples, &store, &ks, &bucket_spec));
    }

    // per-class diagnosis on the eval set
    let selected = dense_indexes.iter().find(|(n, _, _)| n == "dense-selected").unwrap();
    let untrained_ret = DenseRetriever {
        params: &dense_indexes[0].1,
        index: &dense_indexes[0].2,
    };
    let selected_ret = DenseRetriever {
        params: &selected.1,
        index: &selected.2,
    };
    let named: [(&str, &dyn Retriever); 3] = [
        ("bm25", &sparse_ret),
        ("dense-selected", &selected_ret),
        ("dense-untrained", &untrained_ret),
    ];
    for (name, retriever) in named {
        let mut hit_by_class: HashMap<SampleClass, (usize, usize)> = HashMap::new();
        for (s, class) in tb.eval_samples.iter().zip(&tb.manifest.eval_classes) {
            let retrieved = retriever.retrieve(&s.question, 10);
            let hit = hit_at_k(&retrieved, &store, &s.answers, 10);
            let e = hit_by_class.entry(*class).or_default();
            e.1 += 1;
            if hit {
                e.0 += 1;
            }
        }
        println!("  {name} per-class hits@10: {hit_by_class:?}");
    }

    // ---- router ----
    let selected_params = &selected.1;
    let selected_index = &selected.2;
    let halves = tb.routing_samples.len() / 2;
    let (router_train, router_eval) = tb.routing_samples.split_at(halves);
    let hits_of = |r: &dyn Retriever, samples: &[QASample]| -> Vec<bool> {
        samples
            .iter()
            .map(|s| hit_at_k(&r.retrieve(&s.question, 10), &store, &s.answers, 10))
            .collect()
    };
    let dense_ret = DenseRetriever {
        params: selected_params,
        index: selected_index,
    };
    let sparse_hits = hits_of(&sparse_ret, router_train);
    let dense_hits = hits_of(&dense_ret, router_train);
    let labeled = build_labels(router_train, &sparse_hits, &dense_hits, &sparse, 5);
    println!(
        "  router labels: {} ({} sparse / {} dense)",
        labeled.len(),
        labeled.iter().filter(|(_, r)| *r == retlab::Route::Sparse).count(),
        labeled.iter().filter(|(_, r)| *r == retlab::Route::Dense).count()
    );
    let router = train_router(&labeled, &RouterConfig::default()).unwrap();
    // held-out routing accuracy
    let sh = hits_of(&sparse_ret, router_eval);
    let dh = hits_of(&dense_ret, router_eval);
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, s) in router_eval.iter().enumerate() {
        let want = match (sh[i], dh[i]) {
            (true, false) => Some(retlab::Route::Sparse),
            (false, true) => Some(retlab::Route::Dense),
            _ => None,
        };
        if let Some(w) = want {
            total += 1;
            if retlab::router::route(&router, &s.question, &sparse) == w {
                correct += 1;
            }
        }
    }
    println!(
        "  router held-out accuracy: {correct}/{total} = {:.3}",
        correct as f64 / total.max(1) as f64
    );

    let routed = RoutedRetriever {
        router: &router,
        sparse: SparseRetriever { index: &sparse },
        dense: DenseRetriever {
            params: selected_params,
            index: selected_index,
        },
    };
    report_list.push(evaluate(
        &routed,
        "routed",
        &tb.eval_samples,
        &store,
        &ks,
        &bucket_spec,
    ));
    // routing-split numbers for criterion 7
    for (name, r) in [
        ("split sparse", &sparse_ret as &dyn Retriever),
        ("split dense", &dense_ret as &dyn Retriever),
        ("split routed", &routed as &dyn Retriever),
    ] {
        let rep = evaluate(r, name, router_eval, &store, &ks, &bucket_spec);
        let overall: f64 = {
            let hits = hits_of_boxed(r, router_eval, &store);
            hits.iter().filter(|&&h| h).count() as f64 / router_eval.len() as f64
        };
        println!(
            "  {name}: overall R@10 {overall:.3}, long-tail R@10 {:?}",
            rep.recall(Bucket::LongTail, 10)
        );
    }

    println!("\n{}", retlab::evalkit::render_table(&report_list, &ks));
    println!("total {:?}", t0.elapsed());
}

fn hits_of_boxed(
    r: &dyn Retriever,
    samples: &[QASample],
    store: &retlab::PassageStore,
) -> Vec<bool> {
    samples
        .iter()
        .map(|s| hit_at_k(&r.retrieve(&s.question, 10), store, &s.answers, 10))
        .collect()
}
