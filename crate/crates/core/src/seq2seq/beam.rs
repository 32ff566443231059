//! Beam search decoding.
//!
//! Scores are summed token log-probabilities with no length normalization.
//! At every step each live hypothesis expands over the full vocabulary and
//! all expansions, `<eos>` included, compete for the `beam` slots; kept
//! hypotheses ending in `<eos>` retire to the completed set. The answer is
//! the best completed hypothesis, falling back to the best length-capped
//! live one only when nothing completed. Ties resolve toward the
//! lexicographically smallest id sequence. A width-1 search is exactly
//! greedy decoding: the single slot follows the argmax token and the search
//! stops the first time that argmax is `<eos>`.

use ndarray::{Array1, Array2};

use crate::corpus::{TokenId, BOS, EOS};
use crate::error::{Error, Result};
use crate::seq2seq::{
    decode_step_cached, encode, log_softmax, precompute_annot_proj, Seq2SeqParams,
};

struct Hypothesis {
    tokens: Vec<TokenId>,
    score: f64,
    state: Array1<f64>,
}

fn better(a: &(f64, Vec<TokenId>), b: &(f64, Vec<TokenId>)) -> std::cmp::Ordering {
    b.0.partial_cmp(&a.0)
        .expect("beam scores are never NaN")
        .then_with(|| a.1.cmp(&b.1))
}

/// Decode a response for `history`. The result carries a trailing `<eos>`
/// when the winning hypothesis completed; a hypothesis cut off at `max_len`
/// has none.
pub fn beam_search(
    params: &Seq2SeqParams,
    history: &[TokenId],
    beam: usize,
    max_len: usize,
) -> Result<Vec<TokenId>> {
    if beam == 0 {
        return Err(Error::Invalid("beam size must be at least 1".into()));
    }
    if history.is_empty() {
        return Err(Error::Invalid("cannot decode from an empty history".into()));
    }
    let d = params.embed_dim();
    let v = params.vocab_size();
    let mut inputs = Array2::<f64>::zeros((history.len(), d));
    for (i, &tok) in history.iter().enumerate() {
        inputs.row_mut(i).assign(&params.embedding.row(tok));
    }
    let enc = encode(params, &inputs);
    let annot_proj = precompute_annot_proj(params, &enc.annotations);

    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        state: enc.s0.clone(),
    }];
    let mut completed: Vec<(f64, Vec<TokenId>)> = Vec::new();

    for _ in 0..max_len {
        let mut candidates: Vec<Hypothesis> = Vec::with_capacity(live.len() * v);
        for hyp in &live {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let step = decode_step_cached(
                params,
                params.embedding.row(prev),
                hyp.state.view(),
                &enc.annotations,
                &annot_proj,
            );
            let logits = params.out_w.dot(&step.gru.h) + &params.out_b;
            let logp = log_softmax(logits.view());
            for tok in 0..v {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                candidates.push(Hypothesis {
                    tokens,
                    score: hyp.score + logp[tok],
                    state: step.gru.h.clone(),
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("beam scores are never NaN")
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        candidates.truncate(beam);
        live = Vec::with_capacity(candidates.len());
        for hyp in candidates {
            if hyp.tokens.last() == Some(&EOS) {
                completed.push((hyp.score, hyp.tokens));
            } else {
                live.push(hyp);
            }
        }
        if live.is_empty() {
            break;
        }
    }

    let mut pool = if completed.is_empty() {
        // Nothing completed within the cap (or max_len = 0, where the
        // initial empty hypothesis yields the empty decode).
        live.into_iter().map(|h| (h.score, h.tokens)).collect()
    } else {
        completed
    };
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    pool.sort_by(better);
    Ok(pool.swap_remove(0).1)
}
