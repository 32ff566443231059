//! Dialogue corpus loading, tokenization, and vocabulary construction.
//!
//! A corpus file is JSONL, one dialogue per line:
//!
//! ```json
//! {"context": ["i love hiking"], "history": ["do you hike?"], "response": "yes, every weekend"}
//! ```
//!
//! `context` (optional) holds grounding segments such as persona lines,
//! `history` holds the dialogue turns oldest first, and `response` is the
//! reference reply. Encoded samples join all parts with a single `<sep>` and
//! terminate the response with `<eos>`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const UNK: TokenId = 4;
pub const NUM_RESERVED: usize = 5;
pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

/// Lowercase and split text into word and punctuation tokens.
///
/// Words are maximal runs of alphanumeric characters; an apostrophe joins a
/// word when it has an alphanumeric character on both sides ("don't" stays
/// whole). Every other non-whitespace character becomes its own token. The
/// function is idempotent under re-tokenizing its space-joined output.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut word = String::new();
        for (i, &ch) in chars.iter().enumerate() {
            let internal_apostrophe = ch == '\''
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && i + 1 < chars.len()
                && chars[i + 1].is_alphanumeric();
            if ch.is_alphanumeric() || internal_apostrophe {
                word.push(ch);
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

/// Token/id mapping with the five reserved entries pinned at ids 0..=4.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Rebuild from a full token list (reserved entries first), as stored in
    /// checkpoints.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_RESERVED
            || tokens[..NUM_RESERVED]
                .iter()
                .zip(RESERVED_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Invalid(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for `token`, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id < NUM_RESERVED
    }

    /// Hex digest over the token list in id order; checkpoints refuse to load
    /// against a vocabulary with a different hash.
    pub fn hash_hex(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(32);
        for byte in &digest[..16] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
        };
        f.write_str(s)
    }
}

/// One dialogue before vocabulary encoding: tokenized strings.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub context: Vec<Vec<String>>,
    pub turns: Vec<Vec<String>>,
    pub response: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RawCorpus {
    pub samples: Vec<RawSample>,
    pub tag: SplitTag,
}

/// One encoded dialogue. `history` is the `<sep>`-joined context segments and
/// turns; `response` carries a trailing `<eos>` and never contains `<pad>` or
/// `<bos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueSample {
    pub history: Vec<TokenId>,
    pub response: Vec<TokenId>,
}

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub samples: Vec<DialogueSample>,
    pub tag: SplitTag,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    context: Vec<String>,
    history: Vec<String>,
    response: String,
}

/// Read and tokenize a JSONL corpus file.
///
/// Errors name the offending 1-based line. A train split must be non-empty;
/// every sample needs at least one non-empty history part.
pub fn load_corpus(path: &Path, tag: SplitTag) -> Result<RawCorpus> {
    let file = fs::File::open(path).map_err(|e| Error::Corpus {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let context: Vec<Vec<String>> = record
            .context
            .iter()
            .map(|s| tokenize(s))
            .filter(|t| !t.is_empty())
            .collect();
        let turns: Vec<Vec<String>> = record
            .history
            .iter()
            .map(|s| tokenize(s))
            .filter(|t| !t.is_empty())
            .collect();
        if turns.is_empty() && context.is_empty() {
            return Err(Error::Corpus {
                path: path.display().to_string(),
                line: idx + 1,
                msg: "empty history".into(),
            });
        }
        samples.push(RawSample {
            context,
            turns,
            response: tokenize(&record.response),
        });
    }
    if samples.is_empty() && tag == SplitTag::Train {
        return Err(Error::Corpus {
            path: path.display().to_string(),
            line: 0,
            msg: "train split has no samples".into(),
        });
    }
    Ok(RawCorpus { samples, tag })
}

/// Build a vocabulary from a raw training corpus.
///
/// Tokens with frequency >= `min_count` get ids from 5 upward, ordered by
/// descending frequency with ties broken by ascending token string.
pub fn build_vocab(corpus: &RawCorpus, min_count: usize) -> Result<Vocabulary> {
    if corpus.samples.is_empty() {
        return Err(Error::Invalid("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sample in &corpus.samples {
        for part in sample.context.iter().chain(&sample.turns) {
            for tok in part {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        for tok in &sample.response {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(tok, n)| n >= min_count && !RESERVED_TOKENS.contains(&tok))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(tok, _)| tok.to_string()));
    Vocabulary::from_tokens(tokens)
}

/// Join already-encoded parts with a single `<sep>` between consecutive
/// parts. Empty parts are skipped; no leading or trailing separator.
pub fn assemble_history(context: &[Vec<TokenId>], turns: &[Vec<TokenId>]) -> Vec<TokenId> {
    let mut out = Vec::new();
    for part in context.iter().chain(turns) {
        if part.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(SEP);
        }
        out.extend_from_slice(part);
    }
    out
}

/// Encode a raw corpus against `vocab`; out-of-vocabulary tokens map to
/// `<unk>`.
pub fn encode(corpus: &RawCorpus, vocab: &Vocabulary) -> CorpusSplit {
    let ids = |part: &[String]| -> Vec<TokenId> { part.iter().map(|t| vocab.id(t)).collect() };
    let samples = corpus
        .samples
        .iter()
        .map(|raw| {
            let context: Vec<Vec<TokenId>> = raw.context.iter().map(|p| ids(p)).collect();
            let turns: Vec<Vec<TokenId>> = raw.turns.iter().map(|p| ids(p)).collect();
            let mut response = ids(&raw.response);
            response.push(EOS);
            DialogueSample {
                history: assemble_history(&context, &turns),
                response,
            }
        })
        .collect();
    CorpusSplit {
        samples,
        tag: corpus.tag,
    }
}

/// Write generated responses, one per line.
pub fn save_generated(path: &Path, responses: &[String]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for line in responses {
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Read a generated-responses file back, one response per line.
pub fn load_generated(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}
