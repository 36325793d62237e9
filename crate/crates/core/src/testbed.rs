//! Bundled toy testbed generator.
//!
//! Fabricates, deterministically from a seed, everything the bundled
//! experiment needs: a passage corpus, a knowledge-triple pool for synthetic
//! QA generation, question templates, an evaluation set spanning all three
//! frequency buckets, a routing split, and a reserved list for the
//! deduplication filter. A manifest records the ground-truth class of every
//! sample so tests can use it as an oracle.
//!
//! The corpus is built around three entity styles:
//!
//! * learnable entities: one distinctive name token, planted in a passage
//!   together with their answer string;
//! * noisy entities: multi-token names with short rare tokens, absent from
//!   the corpus; their answer is planted in a relation "register" passage,
//!   so the answer-presence filter keeps them but the mined positive is
//!   wrong;
//! * ambiguous entities: a common word plus a short rare token (planted),
//!   where exact term matching shines and gram-level matching drowns in the
//!   common word.
//!
//! Evaluation questions for learnable entities use an inflected surface form
//! of the name, so exact term matching misses while subword matching works.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_samples, QASample};
use crate::synthgen::{save_triples, TemplateSet, Triple};

const FILLER_WORDS: [&str; 96] = [
    "about", "above", "after", "again", "along", "among", "around", "because", "before",
    "behind", "below", "between", "beyond", "bright", "broad", "calm", "carried", "certain",
    "change", "close", "cold", "common", "country", "covered", "crossed", "dark", "deep",
    "distant", "down", "during", "early", "earth", "evening", "ever", "face", "fall", "family",
    "famous", "field", "fine", "fire", "floor", "follow", "found", "friend", "front", "full",
    "gather", "gentle", "given", "grand", "great", "green", "ground", "grow", "half", "hand",
    "heavy", "high", "hill", "hold", "house", "keep", "kind", "know", "land", "large", "last",
    "late", "learn", "light", "line", "long", "look", "made", "main", "many", "mark", "most",
    "move", "much", "name", "near", "never", "night", "north", "often", "only", "open", "order",
    "other", "over", "part", "place", "plain", "point",
];

/// Common words used as the leading token of ambiguous entity names; also
/// planted across noise passages so they stay common in the corpus.
const AMBIG_STEMS: [&str; 10] = [
    "milk", "stone", "bridge", "river", "garden", "winter", "harbor", "meadow", "copper",
    "finale",
];

const SHORT_CONSONANTS: &[char] = &[
    'b', 'c', 'd', 'f', 'g', 'j', 'k', 'l', 'm', 'n', 'p', 'q', 'r', 's', 't', 'v', 'x', 'z',
];
const SHORT_VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u', 'ő', 'ø', 'ű', 'ï', 'ç'];

const NAME_ONSETS: [&str; 24] = [
    "b", "br", "d", "dr", "f", "fr", "g", "gl", "gr", "h", "k", "kr", "l", "m", "n", "p", "pr",
    "r", "s", "st", "t", "tr", "v", "z",
];
const NAME_VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ae"];
const NAME_CODAS: [&str; 8] = ["n", "r", "l", "s", "th", "k", "m", "nd"];

struct Relation {
    label: &'static str,
    template: &'static str,
    /// Token of the template that identifies the relation; register passages
    /// carry it so template-only queries still reach them.
    key_word: &'static str,
}

const RELATIONS: [Relation; 8] = [
    Relation {
        label: "occupation",
        template: "What is {subject}'s occupation?",
        key_word: "occupation",
    },
    Relation {
        label: "birthplace",
        template: "Where was {subject} born?",
        key_word: "born",
    },
    Relation {
        label: "genre",
        template: "What genre is {subject}?",
        key_word: "genre",
    },
    Relation {
        label: "director",
        template: "Who was the director of {subject}?",
        key_word: "director",
    },
    Relation {
        label: "author",
        template: "Who is the author of {subject}?",
        key_word: "author",
    },
    Relation {
        label: "instrument",
        template: "What instrument does {subject} play?",
        key_word: "instrument",
    },
    Relation {
        label: "founder",
        template: "Who founded {subject}?",
        key_word: "founded",
    },
    Relation {
        label: "color",
        template: "What color is {subject}?",
        key_word: "color",
    },
];

/// Sentence frames for entity passages; every frame mentions the name and
/// the answer, and none contains a relation key word.
const ENTITY_FRAMES: [&str; 4] = [
    "{name} is closely associated with {object} in the old records.",
    "{name} is remembered together with {object} by the people of the valley.",
    "{name} is named alongside {object} in several late chronicles.",
    "{name} is linked with {object} across many surviving accounts.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolClass {
    /// Planted entity, learnable round trip, correct mined positive.
    Easy,
    /// Unplanted entity whose answer sits in a register passage: the
    /// round trip fails and the mined positive is wrong.
    Noisy,
    /// Planted, but popularity above the synthetic-data threshold.
    OverPopular,
    /// Planted, but its (subject, relation) pair is on the reserved list.
    ReservedOverlap,
    /// Answer string planted nowhere; the answer-presence filter drops it.
    Unanswerable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleClass {
    /// Learnable entity asked with an inflected surface form: subword
    /// matching works, exact term matching misses.
    DenseFriendly,
    /// Ambiguous common word plus a short rare token, asked verbatim: exact
    /// term matching wins.
    SparseFriendly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolCounts {
    pub total: usize,
    pub easy: usize,
    pub noisy: usize,
    pub over_popular: usize,
    pub reserved_overlap: usize,
    pub unanswerable: usize,
}

/// Ground truth recorded by the generator, used as a test oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedManifest {
    pub seed: u64,
    pub passage_count: usize,
    pub pool: PoolCounts,
    /// Class of each triple, aligned with the triples file.
    pub pool_classes: Vec<PoolClass>,
    /// Class of each evaluation sample, aligned with the eval file.
    pub eval_classes: Vec<SampleClass>,
    /// Class of each routing-split sample, aligned with the routing file.
    pub routing_classes: Vec<SampleClass>,
    /// (bucket label, expected sample count) for the eval set.
    pub eval_bucket_counts: Vec<(String, usize)>,
    /// Triples expected to survive popularity, answer-presence, and
    /// deduplication filtering (the easy + noisy classes).
    pub expected_pool_after_filters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestbedSpec {
    pub seed: u64,
    pub pool_easy: usize,
    pub pool_noisy: usize,
    pub pool_over_popular: usize,
    pub pool_reserved: usize,
    pub pool_unanswerable: usize,
    /// (dense-friendly, sparse-friendly) per bucket.
    pub eval_long_tail: (usize, usize),
    pub eval_infrequent: (usize, usize),
    pub eval_frequent: (usize, usize),
    pub routing_long_tail: (usize, usize),
    pub routing_infrequent: (usize, usize),
    pub routing_frequent: (usize, usize),
    pub register_passages: usize,
    pub noise_passages: usize,
    /// Popularity threshold the over-popular class must exceed.
    pub max_popularity: u64,
}

impl Default for TestbedSpec {
    fn default() -> Self {
        Self {
            seed: 17,
            pool_easy: 500,
            pool_noisy: 500,
            pool_over_popular: 60,
            pool_reserved: 40,
            pool_unanswerable: 80,
            eval_long_tail: (165, 85),
            eval_infrequent: (100, 50),
            eval_frequent: (70, 30),
            routing_long_tail: (100, 100),
            routing_infrequent: (60, 60),
            routing_frequent: (40, 40),
            register_passages: 260,
            noise_passages: 240,
            max_popularity: 1_000_000,
        }
    }
}

impl TestbedSpec {
    pub fn eval_total(&self) -> usize {
        let (a, b) = self.eval_long_tail;
        let (c, d) = self.eval_infrequent;
        let (e, f) = self.eval_frequent;
        a + b + c + d + e + f
    }

    pub fn routing_total(&self) -> usize {
        let (a, b) = self.routing_long_tail;
        let (c, d) = self.routing_infrequent;
        let (e, f) = self.routing_frequent;
        a + b + c + d + e + f
    }

    pub fn passage_total(&self) -> usize {
        self.pool_easy
            + self.pool_over_popular
            + self.pool_reserved
            + self.eval_total()
            + self.routing_total()
            + self.register_passages
            + self.noise_passages
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestbedPassage {
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone)]
pub struct Testbed {
    pub passages: Vec<TestbedPassage>,
    pub triples: Vec<Triple>,
    pub templates: TemplateSet,
    pub eval_samples: Vec<QASample>,
    pub routing_samples: Vec<QASample>,
    pub reserved_samples: Vec<QASample>,
    pub manifest: TestbedManifest,
}

/// Fabricated-token factory. Tokens are pairwise substring-free so planted
/// answer strings can never match by accident.
struct TokenFactory {
    rng: ChaCha12Rng,
    taken: Vec<String>,
    seen: HashSet<String>,
    baseline: Vec<String>,
}

impl TokenFactory {
    fn new(rng: ChaCha12Rng) -> Self {
        let mut baseline: Vec<String> = FILLER_WORDS.iter().map(|w| w.to_string()).collect();
        baseline.extend(AMBIG_STEMS.iter().map(|w| w.to_string()));
        for r in &RELATIONS {
            for tok in crate::lexical::tokenize(r.template).tokens {
                baseline.push(tok);
            }
        }
        Self {
            rng,
            taken: Vec::new(),
            seen: HashSet::new(),
            baseline,
        }
    }

    fn candidate(&mut self, syllables: usize) -> String {
        let mut s = String::new();
        for i in 0..syllables {
            s.push_str(NAME_ONSETS[self.rng.gen_range(0..NAME_ONSETS.len())]);
            s.push_str(NAME_VOWELS[self.rng.gen_range(0..NAME_VOWELS.len())]);
            if i + 1 == syllables || self.rng.gen_bool(0.35) {
                s.push_str(NAME_CODAS[self.rng.gen_range(0..NAME_CODAS.len())]);
            }
        }
        s
    }

    /// A fresh lowercase token, 3 syllables, substring-free against all
    /// previously issued tokens and the fixed word banks.
    fn fresh(&mut self) -> String {
        loop {
            let cand = self.candidate(3);
            if cand.len() < 6 || self.seen.contains(&cand) {
                continue;
            }
            let clash = self
                .taken
                .iter()
                .any(|t| t.contains(&cand) || cand.contains(t.as_str()))
                || self.baseline.iter().any(|w| w.contains(&cand));
            if clash {
                continue;
            }
            self.seen.insert(cand.clone());
            self.taken.push(cand.clone());
            return cand;
        }
    }
}

fn capitalize(token: &str) -> String {
    let mut chars = token.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Short rare token, 1-3 characters, sometimes with non-ASCII vowels.
fn short_token(rng: &mut ChaCha12Rng, seen: &mut HashSet<String>) -> String {
    loop {
        let style = rng.gen_range(0..3u8);
        let tok: String = match style {
            0 => {
                // roman-numeral-like
                let parts = ["i", "v", "x", "ix", "iv", "xi", "vi", "xx", "xv"];
                parts[rng.gen_range(0..parts.len())].to_string()
            }
            1 => {
                let c = SHORT_CONSONANTS[rng.gen_range(0..SHORT_CONSONANTS.len())];
                let v = SHORT_VOWELS[rng.gen_range(0..SHORT_VOWELS.len())];
                format!("{c}{v}")
            }
            _ => {
                let v = SHORT_VOWELS[rng.gen_range(0..SHORT_VOWELS.len())];
                let c = SHORT_CONSONANTS[rng.gen_range(0..SHORT_CONSONANTS.len())];
                let v2 = SHORT_VOWELS[rng.gen_range(0..SHORT_VOWELS.len())];
                format!("{v}{c}{v2}")
            }
        };
        if seen.insert(tok.clone()) {
            return tok;
        }
    }
}

fn sentence(rng: &mut ChaCha12Rng, words: usize, extra: Option<&str>) -> String {
    let mut picked: Vec<&str> = (0..words)
        .map(|_| FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())])
        .collect();
    if let Some(w) = extra {
        let at = rng.gen_range(0..=picked.len());
        picked.insert(at, w);
    }
    let mut s = picked.join(" ");
    s = capitalize(&s);
    s.push('.');
    s
}

struct EntitySpec {
    name: String,
    object: String,
    relation: usize,
}

fn entity_passage(rng: &mut ChaCha12Rng, e: &EntitySpec) -> TestbedPassage {
    let frame = ENTITY_FRAMES[rng.gen_range(0..ENTITY_FRAMES.len())];
    let first = frame
        .replace("{name}", &e.name)
        .replace("{object}", &e.object);
    let mut body = first;
    for _ in 0..rng.gen_range(1..3u8) {
        let words = rng.gen_range(8..13);
        body.push(' ');
        body.push_str(&sentence(rng, words, None));
    }
    TestbedPassage {
        title: e.name.clone(),
        body,
    }
}

fn register_passage(
    rng: &mut ChaCha12Rng,
    relation: &Relation,
    hosted: &[String],
) -> TestbedPassage {
    let listing = if hosted.is_empty() {
        "many unnamed entries".to_string()
    } else {
        hosted.join(" and also ")
    };
    let first = format!(
        "The {} register records {} among its entries.",
        relation.key_word, listing
    );
    let mut body = first;
    let words = rng.gen_range(7..11);
    body.push(' ');
    body.push_str(&sentence(rng, words, Some(relation.key_word)));
    TestbedPassage {
        title: format!("Register of {} entries", relation.key_word),
        body,
    }
}

fn noise_passage(rng: &mut ChaCha12Rng, stem: Option<&str>) -> TestbedPassage {
    let first_words = rng.gen_range(9..14);
    let mut body = sentence(rng, first_words, stem);
    for _ in 0..rng.gen_range(1..3u8) {
        let words = rng.gen_range(8..13);
        body.push(' ');
        body.push_str(&sentence(rng, words, stem));
    }
    let title = sentence(rng, 2, None).trim_end_matches('.').to_string();
    TestbedPassage { title, body }
}

/// Object pool with bounded reuse: roughly `2 * n / 5` distinct tokens serve
/// `n` draws, so each answer string stays rare in the corpus.
fn object_pool(factory: &mut TokenFactory, draws: usize) -> Vec<String> {
    let distinct = (2 * draws / 5).max(1);
    (0..distinct).map(|_| factory.fresh()).collect()
}

pub fn generate(spec: &TestbedSpec) -> Testbed {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut factory = TokenFactory::new(ChaCha12Rng::seed_from_u64(spec.seed.wrapping_add(1)));
    let mut shorts_seen: HashSet<String> = HashSet::new();

    let templates = TemplateSet::new(
        RELATIONS
            .iter()
            .map(|r| (r.label.to_string(), r.template.to_string())),
    )
    .expect("templates carry the placeholder");

    // ---- planted entity groups -------------------------------------------
    let mut passages: Vec<TestbedPassage> = Vec::new();
    let make_planted = |n: usize,
                            factory: &mut TokenFactory,
                            rng: &mut ChaCha12Rng,
                            objects: &[String],
                            passages: &mut Vec<TestbedPassage>|
     -> Vec<EntitySpec> {
        (0..n)
            .map(|_| {
                let e = EntitySpec {
                    name: capitalize(&factory.fresh()),
                    object: objects[rng.gen_range(0..objects.len())].clone(),
                    relation: rng.gen_range(0..RELATIONS.len()),
                };
                passages.push(entity_passage(rng, &e));
                e
            })
            .collect()
    };

    let pool_objects = object_pool(&mut factory, spec.pool_easy);
    let easy = make_planted(spec.pool_easy, &mut factory, &mut rng, &pool_objects, &mut passages);
    let over = make_planted(
        spec.pool_over_popular,
        &mut factory,
        &mut rng,
        &pool_objects,
        &mut passages,
    );
    let reserved = make_planted(
        spec.pool_reserved,
        &mut factory,
        &mut rng,
        &pool_objects,
        &mut passages,
    );

    // ---- evaluation and routing entities ---------------------------------
    let eval_objects = object_pool(&mut factory, spec.eval_total());
    let routing_objects = object_pool(&mut factory, spec.routing_total());

    // Dense-friendly: learnable planted entity, asked with an inflected form.
    let inflect = |name: &str, rng: &mut ChaCha12Rng| -> String {
        let suffixes = ["a", "en", "is", "or", "ui"];
        format!("{}{}", name, suffixes[rng.gen_range(0..suffixes.len())])
    };
    // Sparse-friendly: ambiguous stem + short rare token, asked verbatim.
    let make_hard_name = |rng: &mut ChaCha12Rng, shorts: &mut HashSet<String>| -> String {
        let stem = AMBIG_STEMS[rng.gen_range(0..AMBIG_STEMS.len())];
        let suffix = short_token(rng, shorts);
        format!("{} {}", capitalize(stem), capitalize(&suffix))
    };

    struct EvalEntity {
        query_name: String,
        object: String,
        relation: usize,
        class: SampleClass,
        frequency: u64,
    }

    let build_split = |buckets: [((usize, usize), (u64, u64)); 3],
                           objects: &[String],
                           factory: &mut TokenFactory,
                           rng: &mut ChaCha12Rng,
                           shorts: &mut HashSet<String>,
                           passages: &mut Vec<TestbedPassage>|
     -> Vec<EvalEntity> {
        let mut out = Vec::new();
        for ((n_dense, n_sparse), (f_lo, f_hi)) in buckets {
            for i in 0..(n_dense + n_sparse) {
                let class = if i < n_dense {
                    SampleClass::DenseFriendly
                } else {
                    SampleClass::SparseFriendly
                };
                let corpus_name = match class {
                    SampleClass::DenseFriendly => capitalize(&factory.fresh()),
                    SampleClass::SparseFriendly => make_hard_name(rng, shorts),
                };
                let query_name = match class {
                    SampleClass::DenseFriendly => inflect(&corpus_name, rng),
                    SampleClass::SparseFriendly => corpus_name.clone(),
                };
                let object = objects[rng.gen_range(0..objects.len())].clone();
                let relation = rng.gen_range(0..RELATIONS.len());
                let e = EntitySpec {
                    name: corpus_name.clone(),
                    object: object.clone(),
                    relation,
                };
                passages.push(entity_passage(rng, &e));
                out.push(EvalEntity {
                    query_name,
                    object,
                    relation,
                    class,
                    frequency: rng.gen_range(f_lo..f_hi),
                });
            }
        }
        out
    };

    let mut eval_entities = build_split(
        [
            (spec.eval_long_tail, (5, 100)),
            (spec.eval_infrequent, (100, 10_000)),
            (spec.eval_frequent, (10_000, 900_000)),
        ],
        &eval_objects,
        &mut factory,
        &mut rng,
        &mut shorts_seen,
        &mut passages,
    );
    let mut routing_entities = build_split(
        [
            (spec.routing_long_tail, (5, 100)),
            (spec.routing_infrequent, (100, 10_000)),
            (spec.routing_frequent, (10_000, 900_000)),
        ],
        &routing_objects,
        &mut factory,
        &mut rng,
        &mut shorts_seen,
        &mut passages,
    );

    eval_entities.shuffle(&mut rng);
    routing_entities.shuffle(&mut rng);

    // ---- noisy and unanswerable pool entities ----------------------------
    let make_noisy_name = |rng: &mut ChaCha12Rng,
                               factory: &mut TokenFactory,
                               shorts: &mut HashSet<String>|
     -> String {
        let head = if rng.gen_bool(0.5) {
            capitalize(AMBIG_STEMS[rng.gen_range(0..AMBIG_STEMS.len())])
        } else {
            capitalize(&factory.fresh())
        };
        format!(
            "{} {} {}",
            head,
            capitalize(&short_token(rng, shorts)),
            capitalize(&short_token(rng, shorts)),
        )
    };

    struct NoisyEntity {
        name: String,
        answer: String,
        relation: usize,
    }

    let noisy: Vec<NoisyEntity> = (0..spec.pool_noisy)
        .map(|_| NoisyEntity {
            name: make_noisy_name(&mut rng, &mut factory, &mut shorts_seen),
            answer: format!("{} {}", factory.fresh(), factory.fresh()),
            relation: rng.gen_range(0..RELATIONS.len()),
        })
        .collect();
    let unanswerable: Vec<NoisyEntity> = (0..spec.pool_unanswerable)
        .map(|_| NoisyEntity {
            name: make_noisy_name(&mut rng, &mut factory, &mut shorts_seen),
            answer: format!("{} {}", factory.fresh(), factory.fresh()),
            relation: rng.gen_range(0..RELATIONS.len()),
        })
        .collect();

    // Register passages: noisy answers are planted in registers of their own
    // relation, two per register; remaining registers stay answer-free.
    let mut by_relation: Vec<Vec<String>> = vec![Vec::new(); RELATIONS.len()];
    for n in &noisy {
        by_relation[n.relation].push(n.answer.clone());
    }
    let mut register_count = 0usize;
    for (ri, answers) in by_relation.iter().enumerate() {
        for hosted in answers.chunks(2) {
            passages.push(register_passage(&mut rng, &RELATIONS[ri], hosted));
            register_count += 1;
        }
    }
    while register_count < spec.register_passages {
        let ri = rng.gen_range(0..RELATIONS.len());
        passages.push(register_passage(&mut rng, &RELATIONS[ri], &[]));
        register_count += 1;
    }

    // Noise passages keep the ambiguous stems common in the corpus.
    for i in 0..spec.noise_passages {
        let stem = if i % 3 != 2 {
            Some(AMBIG_STEMS[rng.gen_range(0..AMBIG_STEMS.len())])
        } else {
            None
        };
        passages.push(noise_passage(&mut rng, stem));
    }

    passages.shuffle(&mut rng);

    // ---- triples ----------------------------------------------------------
    let mut classed_triples: Vec<(Triple, PoolClass)> = Vec::new();
    let push_planted = |list: &[EntitySpec], class: PoolClass, lo: u64, hi: u64,
                            rng: &mut ChaCha12Rng,
                            out: &mut Vec<(Triple, PoolClass)>| {
        for e in list {
            out.push((
                Triple {
                    subject: e.name.clone(),
                    relation: RELATIONS[e.relation].label.to_string(),
                    object: e.object.clone(),
                    popularity: rng.gen_range(lo..hi),
                },
                class,
            ));
        }
    };
    push_planted(&easy, PoolClass::Easy, 5, 100, &mut rng, &mut classed_triples);
    push_planted(
        &over,
        PoolClass::OverPopular,
        spec.max_popularity,
        spec.max_popularity * 4,
        &mut rng,
        &mut classed_triples,
    );
    push_planted(
        &reserved,
        PoolClass::ReservedOverlap,
        5,
        100,
        &mut rng,
        &mut classed_triples,
    );
    for n in noisy {
        classed_triples.push((
            Triple {
                subject: n.name,
                relation: RELATIONS[n.relation].label.to_string(),
                object: n.answer,
                popularity: rng.gen_range(5..100),
            },
            PoolClass::Noisy,
        ));
    }
    for n in unanswerable {
        classed_triples.push((
            Triple {
                subject: n.name,
                relation: RELATIONS[n.relation].label.to_string(),
                object: n.answer,
                popularity: rng.gen_range(5..100),
            },
            PoolClass::Unanswerable,
        ));
    }
    classed_triples.shuffle(&mut rng);
    let pool_classes: Vec<PoolClass> = classed_triples.iter().map(|(_, c)| *c).collect();
    let triples: Vec<Triple> = classed_triples.into_iter().map(|(t, _)| t).collect();

    // ---- samples ----------------------------------------------------------
    let to_sample = |i: usize, e: &EvalEntity| -> QASample {
        let template = RELATIONS[e.relation].template;
        QASample {
            id: i as u32,
            question: template.replace("{subject}", &e.query_name),
            answers: vec![e.object.clone()],
            subject_entity: e.query_name.clone(),
            answer_entity: Some(e.object.clone()),
            relation: RELATIONS[e.relation].label.to_string(),
            frequency: e.frequency,
        }
    };
    let eval_samples: Vec<QASample> = eval_entities
        .iter()
        .enumerate()
        .map(|(i, e)| to_sample(i, e))
        .collect();
    let routing_samples: Vec<QASample> = routing_entities
        .iter()
        .enumerate()
        .map(|(i, e)| to_sample(i, e))
        .collect();
    let eval_classes: Vec<SampleClass> = eval_entities.iter().map(|e| e.class).collect();
    let routing_classes: Vec<SampleClass> = routing_entities.iter().map(|e| e.class).collect();

    let reserved_samples: Vec<QASample> = reserved
        .iter()
        .enumerate()
        .map(|(i, e)| QASample {
            id: i as u32,
            question: RELATIONS[e.relation]
                .template
                .replace("{subject}", &e.name),
            answers: vec![e.object.clone()],
            subject_entity: e.name.clone(),
            answer_entity: Some(e.object.clone()),
            relation: RELATIONS[e.relation].label.to_string(),
            frequency: 1,
        })
        .collect();

    let eval_bucket_counts = vec![
        (
            "long-tail".to_string(),
            spec.eval_long_tail.0 + spec.eval_long_tail.1,
        ),
        (
            "infrequent".to_string(),
            spec.eval_infrequent.0 + spec.eval_infrequent.1,
        ),
        (
            "frequent".to_string(),
            spec.eval_frequent.0 + spec.eval_frequent.1,
        ),
    ];

    let manifest = TestbedManifest {
        seed: spec.seed,
        passage_count: passages.len(),
        pool: PoolCounts {
            total: triples.len(),
            easy: spec.pool_easy,
            noisy: spec.pool_noisy,
            over_popular: spec.pool_over_popular,
            reserved_overlap: spec.pool_reserved,
            unanswerable: spec.pool_unanswerable,
        },
        pool_classes,
        eval_classes,
        routing_classes,
        eval_bucket_counts,
        expected_pool_after_filters: spec.pool_easy + spec.pool_noisy,
    };

    Testbed {
        passages,
        triples,
        templates,
        eval_samples,
        routing_samples,
        reserved_samples,
        manifest,
    }
}

impl Testbed {
    /// Writes every testbed file into `dir`: corpus.jsonl, triples.jsonl,
    /// templates.jsonl, qa_eval.jsonl, routing.jsonl, reserved.jsonl, and
    /// testbed_manifest.json.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut corpus = String::new();
        for p in &self.passages {
            corpus.push_str(&serde_json::to_string(p).expect("serializable"));
            corpus.push('\n');
        }
        fs::write(dir.join("corpus.jsonl"), corpus)?;
        save_triples(&dir.join("triples.jsonl"), &self.triples)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        self.templates
            .save(&dir.join("templates.jsonl"))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        save_samples(&dir.join("qa_eval.jsonl"), &self.eval_samples)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        save_samples(&dir.join("routing.jsonl"), &self.routing_samples)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        save_samples(&dir.join("reserved.jsonl"), &self.reserved_samples)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        fs::write(
            dir.join("testbed_manifest.json"),
            serde_json::to_string_pretty(&self.manifest).expect("serializable"),
        )?;
        Ok(())
    }
}
