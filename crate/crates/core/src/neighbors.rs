//! Word-level CBOW neighbor model with negative sampling.
//!
//! Trained on the token sequences of a corpus split (history and response
//! separately), the model provides the cosine-similarity neighbor lists that
//! drive augmentation. Queries run over the input matrix only; the output
//! matrix exists for training and round-tripping checkpoints.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::corpus::{CorpusSplit, TokenId, Vocabulary, NUM_RESERVED};
use crate::error::{Error, Result};
use crate::seeding::{self, STREAM_INIT, STREAM_NEGATIVES};

#[derive(Debug, Clone)]
pub struct NeighborModel {
    /// Input vectors, one row per vocabulary id. Queries use these.
    pub w_in: Array2<f64>,
    /// Output vectors used by the negative-sampling objective.
    pub w_out: Array2<f64>,
    pub window: usize,
    pub trained_epochs: usize,
}

impl NeighborModel {
    pub fn vocab_size(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w_in.ncols()
    }
}

/// CBOW trainer hyperparameters. `epochs = 0` yields the seeded
/// initialization untouched.
#[derive(Debug, Clone, Copy)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub lr: f64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: 100,
            window: 4,
            epochs: 100,
            negatives: 5,
            lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub token: TokenId,
    pub score: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// log(sigmoid(x)) computed without overflow for large |x|.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Negative-sampling loss for one training instance: the averaged context
/// vectors scored against the target (label 1) and each negative (label 0).
pub fn cbow_instance_loss(
    w_in: &Array2<f64>,
    w_out: &Array2<f64>,
    context: &[TokenId],
    target: TokenId,
    negatives: &[TokenId],
) -> f64 {
    let dim = w_in.ncols();
    let mut avg = Array1::<f64>::zeros(dim);
    for &c in context {
        avg += &w_in.row(c);
    }
    avg /= context.len() as f64;
    let mut loss = -log_sigmoid(avg.dot(&w_out.row(target)));
    for &n in negatives {
        loss -= log_sigmoid(-avg.dot(&w_out.row(n)));
    }
    loss
}

/// Gradients of [`cbow_instance_loss`]: one shared gradient for every context
/// row of `w_in` (already divided by the context size) and one gradient per
/// (target or negative) row of `w_out`, in scoring order.
pub fn cbow_instance_grads(
    w_in: &Array2<f64>,
    w_out: &Array2<f64>,
    context: &[TokenId],
    target: TokenId,
    negatives: &[TokenId],
) -> (f64, Array1<f64>, Vec<(TokenId, Array1<f64>)>) {
    let dim = w_in.ncols();
    let mut avg = Array1::<f64>::zeros(dim);
    for &c in context {
        avg += &w_in.row(c);
    }
    avg /= context.len() as f64;

    let mut loss = 0.0;
    let mut d_avg = Array1::<f64>::zeros(dim);
    let mut d_out = Vec::with_capacity(1 + negatives.len());
    for (i, &cand) in std::iter::once(&target).chain(negatives).enumerate() {
        let label = if i == 0 { 1.0 } else { 0.0 };
        let f = avg.dot(&w_out.row(cand));
        loss -= if i == 0 { log_sigmoid(f) } else { log_sigmoid(-f) };
        let g = sigmoid(f) - label;
        d_avg.scaled_add(g, &w_out.row(cand));
        d_out.push((cand, &avg * g));
    }
    let d_ctx = &d_avg / context.len() as f64;
    (loss, d_ctx, d_out)
}

/// Cumulative table for the unigram^0.75 noise distribution.
struct NoiseTable {
    cumulative: Vec<f64>,
    ids: Vec<TokenId>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut cumulative = Vec::new();
        let mut ids = Vec::new();
        let mut acc = 0.0;
        for (id, &n) in counts.iter().enumerate() {
            if n > 0 {
                acc += (n as f64).powf(0.75);
                cumulative.push(acc);
                ids.push(id);
            }
        }
        NoiseTable { cumulative, ids }
    }

    fn draw(&self, rng: &mut impl Rng) -> TokenId {
        let total = *self.cumulative.last().unwrap();
        let x = rng.gen::<f64>() * total;
        let pos = self.cumulative.partition_point(|&c| c <= x);
        self.ids[pos.min(self.ids.len() - 1)]
    }

    /// Draw a negative distinct from `target`.
    fn draw_negative(&self, target: TokenId, rng: &mut impl Rng) -> TokenId {
        loop {
            let id = self.draw(rng);
            if id != target {
                return id;
            }
        }
    }
}

/// Per-epoch mean instance loss, recorded so callers can check that training
/// made progress.
#[derive(Debug, Clone)]
pub struct CbowTrainStats {
    pub epoch_loss: Vec<f64>,
}

/// Train a CBOW model on the history and response sequences of `split`.
///
/// Deterministic for a fixed seed: initialization comes from the `init`
/// stream, negatives from the `negatives` stream. Errors if fewer than two
/// distinct non-reserved tokens occur.
pub fn train_cbow(
    split: &CorpusSplit,
    vocab: &Vocabulary,
    cfg: &CbowConfig,
    seed: u64,
) -> Result<(NeighborModel, CbowTrainStats)> {
    let v = vocab.len();
    let mut counts = vec![0u64; v];
    let mut sequences: Vec<&[TokenId]> = Vec::with_capacity(split.samples.len() * 2);
    for sample in &split.samples {
        sequences.push(&sample.history);
        sequences.push(&sample.response);
    }
    for seq in &sequences {
        for &t in *seq {
            counts[t] += 1;
        }
    }
    let distinct_content = counts[NUM_RESERVED..].iter().filter(|&&n| n > 0).count();
    if distinct_content < 2 {
        return Err(Error::Invalid(
            "neighbor training needs at least two distinct non-reserved tokens".into(),
        ));
    }

    let mut init_rng = seeding::stream(seed, STREAM_INIT);
    let half = 0.5 / cfg.dim as f64;
    let w_in = Array2::from_shape_fn((v, cfg.dim), |_| init_rng.gen_range(-half..half));
    let w_out = Array2::<f64>::zeros((v, cfg.dim));
    let mut model = NeighborModel {
        w_in,
        w_out,
        window: cfg.window,
        trained_epochs: 0,
    };

    let table = NoiseTable::new(&counts);
    let mut neg_rng = seeding::stream(seed, STREAM_NEGATIVES);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut negatives = vec![0usize; cfg.negatives];
    let mut context: Vec<TokenId> = Vec::new();

    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut instances = 0u64;
        for seq in &sequences {
            for (t, &target) in seq.iter().enumerate() {
                context.clear();
                let lo = t.saturating_sub(cfg.window);
                let hi = (t + cfg.window + 1).min(seq.len());
                context.extend(seq[lo..t].iter().chain(&seq[t + 1..hi]));
                if context.is_empty() {
                    continue;
                }
                for slot in negatives.iter_mut() {
                    *slot = table.draw_negative(target, &mut neg_rng);
                }
                let (loss, d_ctx, d_out) =
                    cbow_instance_grads(&model.w_in, &model.w_out, &context, target, &negatives);
                loss_sum += loss;
                instances += 1;
                for (id, grad) in &d_out {
                    model.w_out.row_mut(*id).scaled_add(-cfg.lr, grad);
                }
                for &c in &context {
                    model.w_in.row_mut(c).scaled_add(-cfg.lr, &d_ctx);
                }
            }
        }
        epoch_loss.push(if instances > 0 {
            loss_sum / instances as f64
        } else {
            0.0
        });
        model.trained_epochs += 1;
    }
    Ok((model, CbowTrainStats { epoch_loss }))
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.dot(&b) / (na * nb))
}

/// Top-`k` cosine neighbors of `token` over the input vectors with scores in
/// `[tau, 1]`. Non-positive scores are discarded before the `tau` filter;
/// ties break by ascending token id. Reserved tokens are neither valid
/// queries nor candidates.
pub fn query_neighbors(
    model: &NeighborModel,
    token: TokenId,
    k: usize,
    tau: f64,
) -> Result<Vec<Neighbor>> {
    if token < NUM_RESERVED {
        return Err(Error::Invalid(format!(
            "cannot query neighbors of reserved token id {token}"
        )));
    }
    if token >= model.vocab_size() {
        return Err(Error::Invalid(format!(
            "token id {token} out of range for vocabulary of {}",
            model.vocab_size()
        )));
    }
    let query = model.w_in.row(token);
    let mut found = Vec::new();
    for cand in NUM_RESERVED..model.vocab_size() {
        if cand == token {
            continue;
        }
        let Some(score) = cosine(query, model.w_in.row(cand)) else {
            continue;
        };
        let score = score.min(1.0);
        if score <= 0.0 || score < tau {
            continue;
        }
        found.push(Neighbor { token: cand, score });
    }
    found.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.token.cmp(&b.token))
    });
    found.truncate(k);
    Ok(found)
}

/// Write vectors in word2vec text format: a `count dim` header, then one
/// `token v1 .. vd` line per vocabulary entry in id order. Values use Rust's
/// shortest round-trip float formatting, so import reproduces them exactly.
pub fn export_vectors(model: &NeighborModel, vocab: &Vocabulary, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{} {}", vocab.len(), model.dim())?;
    for id in 0..vocab.len() {
        write!(out, "{}", vocab.token(id))?;
        for x in model.w_in.row(id) {
            write!(out, " {x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Read word2vec text vectors aligned to `vocab`.
///
/// Tokens absent from the vocabulary are ignored; vocabulary tokens absent
/// from the file get rows drawn uniformly from `(-0.08, 0.08)` using `rng`.
/// The header dimension must equal `dim`.
pub fn import_vectors(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Vectors("empty vector file".into()))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Vectors("malformed header".into()))?;
    let file_dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Vectors("malformed header".into()))?;
    if file_dim != dim {
        return Err(Error::Vectors(format!(
            "dimension mismatch: file has {file_dim}, expected {dim}"
        )));
    }

    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut seen = 0usize;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap();
        let values: Vec<f64> = fields
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Vectors(format!("line {}: bad float {s:?}", idx + 1)))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Vectors(format!(
                "line {}: expected {dim} components, found {}",
                idx + 1,
                values.len()
            )));
        }
        seen += 1;
        if vocab.contains(token) {
            rows[vocab.id(token)] = Some(values);
        }
    }
    if seen != count {
        return Err(Error::Vectors(format!(
            "header declares {count} rows, file has {seen}"
        )));
    }

    let mut matrix = Array2::<f64>::zeros((vocab.len(), dim));
    for (id, row) in rows.into_iter().enumerate() {
        match row {
            Some(values) => {
                for (j, v) in values.into_iter().enumerate() {
                    matrix[(id, j)] = v;
                }
            }
            None => {
                for j in 0..dim {
                    matrix[(id, j)] = rng.gen_range(-0.08..0.08);
                }
            }
        }
    }
    Ok(matrix)
}
