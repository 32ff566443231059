//! Binary checkpoint container.
//!
//! Layout: an 8-byte magic tag, a u32 format version, a u32 section count,
//! then length-prefixed named sections (u32 name length, name bytes, u64
//! payload length, payload). Numeric payloads are little-endian f64 arrays
//! in the fixed parameter-block order; metadata and the trailing manifest
//! are JSON. Nothing time- or host-dependent is written, so identical runs
//! produce byte-identical files.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::corpus::Vocabulary;
use crate::neighbors::NeighborModel;
use crate::seq2seq::Seq2SeqParams;
use crate::training::AdamState;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SAUGCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to reproduce the run that wrote a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Package version of the writing binary.
    pub artifact_version: String,
    pub config: RunConfig,
    pub seed: u64,
    pub vocab_hash: String,
    pub corpus_paths: Vec<String>,
    pub mode: Mode,
    pub output_dir: String,
}

impl RunManifest {
    pub fn new(config: &RunConfig, corpus_paths: &[&Path], vocab: &Vocabulary, output_dir: &Path) -> Self {
        RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seed: config.seed,
            vocab_hash: vocab.hash_hex(),
            corpus_paths: corpus_paths.iter().map(|p| p.display().to_string()).collect(),
            mode: config.mode,
            output_dir: output_dir.display().to_string(),
        }
    }
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_to_f64s(bytes: &[u8], what: &str) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(err(format!("{what}: payload is not a whole number of f64s")));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_sections(path: &Path, sections: &[(&str, Vec<u8>)]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(sections.len() as u32).to_le_bytes())?;
    for (name, payload) in sections {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(payload.len() as u64).to_le_bytes())?;
        w.write_all(payload)?;
    }
    w.flush()?;
    Ok(())
}

fn read_sections(path: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let mut at = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if at + n > data.len() {
            return Err(err(format!("truncated reading {what}")));
        }
        let slice = &data[at..at + n];
        at += n;
        Ok(slice)
    };

    if take(8, "magic")? != MAGIC {
        return Err(err("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(err(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let count = u32::from_le_bytes(take(4, "section count")?.try_into().unwrap());
    let mut sections = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4, "section name length")?.try_into().unwrap());
        let name = String::from_utf8(take(name_len as usize, "section name")?.to_vec())
            .map_err(|_| err("section name is not UTF-8"))?;
        let payload_len = u64::from_le_bytes(take(8, "section payload length")?.try_into().unwrap());
        let payload = take(payload_len as usize, &name)?.to_vec();
        sections.push((name, payload));
    }
    if at != data.len() {
        return Err(err(format!("{} trailing bytes after last section", data.len() - at)));
    }
    Ok(sections)
}

fn find<'a>(sections: &'a [(String, Vec<u8>)], name: &str) -> Result<&'a [u8]> {
    sections
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, p)| p.as_slice())
        .ok_or_else(|| err(format!("missing section `{name}`")))
}

fn vocab_to_bytes(vocab: &Vocabulary) -> Vec<u8> {
    // Tokens never contain whitespace, so newline-joining is unambiguous.
    vocab.tokens().join("\n").into_bytes()
}

fn vocab_from_bytes(bytes: &[u8]) -> Result<Vocabulary> {
    let text = std::str::from_utf8(bytes).map_err(|_| err("vocab section is not UTF-8"))?;
    Vocabulary::from_tokens(text.lines().map(str::to_string).collect())
}

fn load_vocab_and_manifest(sections: &[(String, Vec<u8>)]) -> Result<(Vocabulary, RunManifest)> {
    let vocab = vocab_from_bytes(find(sections, "vocab")?)?;
    let manifest: RunManifest = serde_json::from_slice(find(sections, "manifest")?)?;
    if vocab.hash_hex() != manifest.vocab_hash {
        return Err(err("vocabulary does not match the manifest hash"));
    }
    Ok((vocab, manifest))
}

fn require_hash(found: &Vocabulary, expected: &Vocabulary) -> Result<()> {
    if found.hash_hex() != expected.hash_hex() {
        return Err(err(format!(
            "checkpoint vocabulary {} does not match expected {}",
            found.hash_hex(),
            expected.hash_hex()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NeighborMeta {
    vocab_size: usize,
    dim: usize,
    window: usize,
    trained_epochs: usize,
}

#[derive(Debug)]
pub struct NeighborCheckpoint {
    pub vocab: Vocabulary,
    pub model: NeighborModel,
    pub manifest: RunManifest,
}

impl NeighborCheckpoint {
    pub fn require_vocab(&self, expected: &Vocabulary) -> Result<()> {
        require_hash(&self.vocab, expected)
    }
}

pub fn save_neighbor_checkpoint(
    path: &Path,
    vocab: &Vocabulary,
    model: &NeighborModel,
    manifest: &RunManifest,
) -> Result<()> {
    let meta = NeighborMeta {
        vocab_size: model.vocab_size(),
        dim: model.dim(),
        window: model.window,
        trained_epochs: model.trained_epochs,
    };
    let sections = vec![
        ("vocab", vocab_to_bytes(vocab)),
        ("neighbor.meta", serde_json::to_vec(&meta)?),
        ("neighbor.w_in", f64s_to_bytes(model.w_in.as_slice().unwrap())),
        ("neighbor.w_out", f64s_to_bytes(model.w_out.as_slice().unwrap())),
        ("manifest", serde_json::to_vec_pretty(manifest)?),
    ];
    write_sections(path, &sections)
}

pub fn load_neighbor_checkpoint(path: &Path) -> Result<NeighborCheckpoint> {
    let sections = read_sections(path)?;
    let (vocab, manifest) = load_vocab_and_manifest(&sections)?;
    let meta: NeighborMeta = serde_json::from_slice(find(&sections, "neighbor.meta")?)?;
    if meta.vocab_size != vocab.len() {
        return Err(err(format!(
            "neighbor matrix has {} rows but the vocabulary {} tokens",
            meta.vocab_size,
            vocab.len()
        )));
    }
    let read_matrix = |name: &str| -> Result<ndarray::Array2<f64>> {
        let values = bytes_to_f64s(find(&sections, name)?, name)?;
        if values.len() != meta.vocab_size * meta.dim {
            return Err(err(format!(
                "{name}: expected {} values, found {}",
                meta.vocab_size * meta.dim,
                values.len()
            )));
        }
        ndarray::Array2::from_shape_vec((meta.vocab_size, meta.dim), values)
            .map_err(|e| err(format!("{name}: {e}")))
    };
    let model = NeighborModel {
        w_in: read_matrix("neighbor.w_in")?,
        w_out: read_matrix("neighbor.w_out")?,
        window: meta.window,
        trained_epochs: meta.trained_epochs,
    };
    Ok(NeighborCheckpoint {
        vocab,
        model,
        manifest,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    vocab_size: usize,
    embed_dim: usize,
    hidden: usize,
}

#[derive(Debug)]
pub struct ModelCheckpoint {
    pub vocab: Vocabulary,
    pub params: Seq2SeqParams,
    pub adam: Option<AdamState>,
    pub manifest: RunManifest,
}

impl ModelCheckpoint {
    pub fn require_vocab(&self, expected: &Vocabulary) -> Result<()> {
        require_hash(&self.vocab, expected)
    }
}

fn params_to_bytes(params: &Seq2SeqParams) -> Vec<u8> {
    let total: usize = params.blocks().iter().map(|(_, b)| b.len()).sum();
    let mut out = Vec::with_capacity(total * 8);
    for (_, block) in params.blocks() {
        out.extend_from_slice(&f64s_to_bytes(block));
    }
    out
}

fn params_from_bytes(bytes: &[u8], meta: &ModelMeta, what: &str) -> Result<Seq2SeqParams> {
    let values = bytes_to_f64s(bytes, what)?;
    let mut params = Seq2SeqParams::zeros(meta.vocab_size, meta.embed_dim, meta.hidden);
    let expected: usize = params.blocks().iter().map(|(_, b)| b.len()).sum();
    if values.len() != expected {
        return Err(err(format!(
            "{what}: expected {expected} values for shape (|V|={}, d={}, h={}), found {}",
            meta.vocab_size,
            meta.embed_dim,
            meta.hidden,
            values.len()
        )));
    }
    let mut at = 0usize;
    for (_, block) in params.blocks_mut() {
        block.copy_from_slice(&values[at..at + block.len()]);
        at += block.len();
    }
    Ok(params)
}

pub fn save_model_checkpoint(
    path: &Path,
    vocab: &Vocabulary,
    params: &Seq2SeqParams,
    adam: Option<&AdamState>,
    manifest: &RunManifest,
) -> Result<()> {
    let meta = ModelMeta {
        vocab_size: params.vocab_size(),
        embed_dim: params.embed_dim(),
        hidden: params.hidden_dim(),
    };
    let mut sections = vec![
        ("vocab", vocab_to_bytes(vocab)),
        ("seq2seq.meta", serde_json::to_vec(&meta)?),
        ("seq2seq.params", params_to_bytes(params)),
    ];
    if let Some(adam) = adam {
        sections.push(("adam.meta", serde_json::to_vec(&serde_json::json!({ "step": adam.step }))?));
        sections.push(("adam.m", params_to_bytes(&adam.m)));
        sections.push(("adam.v", params_to_bytes(&adam.v)));
    }
    sections.push(("manifest", serde_json::to_vec_pretty(manifest)?));
    write_sections(path, &sections)
}

pub fn load_model_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let sections = read_sections(path)?;
    let (vocab, manifest) = load_vocab_and_manifest(&sections)?;
    let meta: ModelMeta = serde_json::from_slice(find(&sections, "seq2seq.meta")?)?;
    if meta.vocab_size != vocab.len() {
        return Err(err(format!(
            "model embeds {} tokens but the vocabulary has {}",
            meta.vocab_size,
            vocab.len()
        )));
    }
    let params = params_from_bytes(find(&sections, "seq2seq.params")?, &meta, "seq2seq.params")?;
    let adam = if sections.iter().any(|(n, _)| n == "adam.meta") {
        let step_meta: serde_json::Value = serde_json::from_slice(find(&sections, "adam.meta")?)?;
        let step = step_meta["step"]
            .as_u64()
            .ok_or_else(|| err("adam.meta lacks a step counter"))?;
        Some(AdamState {
            m: params_from_bytes(find(&sections, "adam.m")?, &meta, "adam.m")?,
            v: params_from_bytes(find(&sections, "adam.v")?, &meta, "adam.v")?,
            step,
        })
    } else {
        None
    };
    Ok(ModelCheckpoint {
        vocab,
        params,
        adam,
        manifest,
    })
}
