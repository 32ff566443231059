//! Synthetic corpora shared by the integration tests.
//!
//! Everything is generated from seeded streams, so the same seed always
//! yields byte-identical corpus files.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::json;
use softaug::seeding;
use tempfile::TempDir;

pub fn write_lines(path: &Path, lines: &[String]) {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).expect("write corpus file");
}

/// A dialogue corpus whose nouns form synonym clusters: the history names a
/// cluster member and the response answers with a member of the same
/// cluster, most often the same one. Cluster mates are distributionally
/// interchangeable, so a neighbor model trained on it recovers the clusters
/// and soft augmentation has real synonyms to work with.
pub struct ToyWorld {
    pub dir: TempDir,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

const CLUSTERS: [[&str; 3]; 16] = [
    ["pizza", "pasta", "burger"],
    ["coffee", "tea", "juice"],
    ["soccer", "tennis", "hockey"],
    ["jazz", "blues", "reggae"],
    ["paris", "london", "tokyo"],
    ["cats", "dogs", "parrots"],
    ["hiking", "biking", "swimming"],
    ["novels", "comics", "poetry"],
    ["autumn", "spring", "winter"],
    ["chess", "checkers", "dominoes"],
    ["tulips", "roses", "daisies"],
    ["pancakes", "waffles", "muffins"],
    ["violins", "cellos", "flutes"],
    ["castles", "temples", "bridges"],
    ["comets", "planets", "nebulas"],
    ["salads", "soups", "stews"],
];

/// One topic noun per cluster. Topic words show up near their cluster's
/// members inside single sentences, which is what lets a window model tell
/// the clusters apart: every cluster member shares the same templates, so
/// without a topic anchor they would all be distributionally identical.
const TOPICS: [&str; 16] = [
    "dinner", "drink", "sport", "music", "city", "pet", "exercise", "reading", "season", "game",
    "flower", "breakfast", "instrument", "landmark", "sky", "lunch",
];

const ADJECTIVES: [&str; 12] = [
    "tasty", "great", "lovely", "boring", "fun", "relaxing", "cozy", "fancy", "simple", "odd",
    "classic", "modern",
];

const TAILS: [&str; 20] = [
    "anyway", "cheers", "indeed", "truly", "perhaps", "honestly", "surely", "somehow", "lately",
    "often", "usually", "rarely", "basically", "certainly", "clearly", "definitely",
    "apparently", "generally", "mostly", "roughly",
];

const GREETINGS: [&str; 8] = [
    "hey", "hi", "listen", "say", "look", "well", "so", "now",
];

const TIME_PHRASES: [&str; 6] = [
    "this morning",
    "last night",
    "on sundays",
    "after lunch",
    "before work",
    "in summer",
];

const FOLLOWUPS: [&str; 3] = ["and you ?", "right ?", "what about you ?"];

pub const HISTORY_TEMPLATES: usize = 12;
pub const RESPONSE_TEMPLATES: usize = 10;

fn history_line(rng: &mut impl Rng, idx: usize, x: &str, adj: &str, topic: &str) -> String {
    let core = match idx {
        0 => format!("do you like {x} ?"),
        1 => format!("i really enjoy {x} these days"),
        2 => format!("what do you think about {x} ?"),
        3 => format!("my friend says {x} is {adj}"),
        4 => format!("we tried {x} last weekend"),
        5 => format!("is {x} still your favorite ?"),
        6 => format!("everyone around here loves {x}"),
        7 => format!("for {topic} i suggest {x} myself"),
        8 => format!("which {topic} wins {x} maybe ?"),
        9 => format!("maybe we should try {x} together"),
        10 => format!("what {topic} beats {x} really ?"),
        _ => format!("how was {x} yesterday ?"),
    };
    let mut line = String::new();
    if rng.gen::<f64>() < 0.3 {
        line.push_str(GREETINGS[rng.gen_range(0..GREETINGS.len())]);
        line.push(' ');
    }
    line.push_str(&core);
    if rng.gen::<f64>() < 0.25 {
        line.push(' ');
        line.push_str(TIME_PHRASES[rng.gen_range(0..TIME_PHRASES.len())]);
    }
    line
}

fn response_line(rng: &mut impl Rng, idx: usize, y: &str, adj: &str, topic: &str) -> String {
    let mut line = match idx {
        0 => format!("yes i like {y} a lot"),
        1 => format!("{y} is really {adj} i think"),
        2 => format!("honestly i prefer {y} now"),
        3 => format!("oh {y} sounds {adj} to me"),
        4 => format!("for {topic} i pick {y} always"),
        5 => format!("well i could talk about {y} all day"),
        6 => format!("no {topic} beats {y} here"),
        7 => format!("i would pick {y} over anything"),
        8 => format!("my favorite {topic} is {y} too"),
        _ => format!("{y} is fine though {adj} sometimes"),
    };
    if rng.gen::<f64>() < 0.3 {
        line.push(' ');
        line.push_str(TAILS[rng.gen_range(0..TAILS.len())]);
    }
    line
}

fn toy_sample(rng: &mut impl Rng) -> String {
    let ci = rng.gen_range(0..CLUSTERS.len());
    let cluster = &CLUSTERS[ci];
    let topic = TOPICS[ci];
    let xi = rng.gen_range(0..3);
    let x = cluster[xi];
    // Response stays in the history's cluster, usually on the same member.
    // The echo has to dominate clearly or a small model never learns to
    // condition on the history at all within test-sized budgets.
    let r = rng.gen::<f64>();
    let yi = if r < 0.8 {
        xi
    } else if r < 0.9 {
        (xi + 1) % 3
    } else {
        (xi + 2) % 3
    };
    let y = cluster[yi];
    let adj_h = ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())];
    let adj_r = ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())];
    // Answer style follows question style most of the time. This gives the
    // model a sentence-level conditioning signal that is much easier to pick
    // up than the word echo, so generated responses vary by history shape
    // long before the word channel converges.
    let h_idx = rng.gen_range(0..HISTORY_TEMPLATES);
    let r_idx = if rng.gen::<f64>() < 0.6 {
        h_idx % RESPONSE_TEMPLATES
    } else {
        rng.gen_range(0..RESPONSE_TEMPLATES)
    };
    let mut history = vec![history_line(rng, h_idx, x, adj_h, topic)];
    if rng.gen::<f64>() < 0.25 {
        history.push(FOLLOWUPS[rng.gen_range(0..FOLLOWUPS.len())].to_string());
    }
    json!({ "history": history, "response": response_line(rng, r_idx, y, adj_r, topic) }).to_string()
}

fn toy_lines(seed: u64, stream: &str, n: usize) -> Vec<String> {
    let mut rng = seeding::stream(seed, stream);
    (0..n).map(|_| toy_sample(&mut rng)).collect()
}

/// Write train/valid/test splits of the cluster dialogue corpus.
pub fn toy_corpus(seed: u64, n_train: usize, n_valid: usize, n_test: usize) -> ToyWorld {
    let dir = TempDir::new().expect("temp dir");
    let train = dir.path().join("train.jsonl");
    let valid = dir.path().join("valid.jsonl");
    let test = dir.path().join("test.jsonl");
    write_lines(&train, &toy_lines(seed, "test/toy/train", n_train));
    write_lines(&valid, &toy_lines(seed, "test/toy/valid", n_valid));
    write_lines(&test, &toy_lines(seed, "test/toy/test", n_test));
    ToyWorld {
        dir,
        train,
        valid,
        test,
    }
}

/// A corpus small enough that a full train run takes well under a second.
pub fn tiny_corpus(seed: u64) -> ToyWorld {
    toy_corpus(seed, 48, 12, 12)
}

/// A corpus with 20 planted synonym pairs. Pair members appear in identical
/// four-word frames unique to the pair, so their distributions match exactly
/// and any sane distributional model puts them next to each other. A tenth
/// of the sentences are filler drawn from a shared pool, as noise.
pub struct SynonymWorld {
    pub dir: TempDir,
    pub path: PathBuf,
    pub pairs: Vec<(String, String)>,
}

pub const SYNONYM_PAIRS: usize = 20;

fn synonym_sentence(rng: &mut impl Rng) -> String {
    if rng.gen::<f64>() < 0.1 {
        let words: Vec<String> = (0..5)
            .map(|_| format!("noise{}", rng.gen_range(0..30)))
            .collect();
        return words.join(" ");
    }
    let pair = rng.gen_range(0..SYNONYM_PAIRS);
    let member = if rng.gen::<bool>() { "a" } else { "b" };
    format!("fra{pair} frb{pair} syn{member}{pair} frc{pair} frd{pair}")
}

/// Write a ~5000-sentence corpus (2500 samples, one history sentence and one
/// response sentence each) with the planted pairs.
pub fn synonym_corpus(seed: u64) -> SynonymWorld {
    let mut rng = seeding::stream(seed, "test/synonyms");
    let lines: Vec<String> = (0..2500)
        .map(|_| {
            let h = synonym_sentence(&mut rng);
            let r = synonym_sentence(&mut rng);
            json!({ "history": [h], "response": r }).to_string()
        })
        .collect();
    let dir = TempDir::new().expect("temp dir");
    let path = dir.path().join("synonyms.jsonl");
    write_lines(&path, &lines);
    let pairs = (0..SYNONYM_PAIRS)
        .map(|i| (format!("syna{i}"), format!("synb{i}")))
        .collect();
    SynonymWorld { dir, path, pairs }
}
