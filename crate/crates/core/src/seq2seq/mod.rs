//! Attentional encoder/decoder.
//!
//! Architecture: shared embedding matrix, one-layer bidirectional GRU
//! encoder, a tanh bridge from the concatenated final encoder states to the
//! initial decoder state, a GRU decoder whose input is the previous response
//! embedding concatenated with the additive-attention context, and a linear
//! projection to vocabulary logits.
//!
//! GRU convention, gates stacked `[z | r | c]` in the weight matrices:
//!
//! ```text
//! z = sigmoid(Wz x + Uz h + bz)
//! r = sigmoid(Wr x + Ur h + br)
//! c = tanh(Wc x + Uc (r * h) + bc)
//! h' = (1 - z) * h + z * c
//! ```
//!
//! Attention scores are `v . tanh(Ws s + Wa a_i)` over annotation rows `a_i`.
//!
//! Forward passes record every intermediate needed by the hand-written
//! backward pass in [`backward`]; decoding for search reuses the exact same
//! cell math through the lean step functions here.

pub mod backward;
pub mod beam;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;

use crate::augment::{fuse_embedding, AugmentationPlan, SoftWordSet};
use crate::corpus::{DialogueSample, TokenId, BOS};
use crate::error::{Error, Result};

/// One GRU direction's weights with gates stacked `[z | r | c]`:
/// `w_in` is `3h x in`, `w_h` is `3h x h`, `b` is `3h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_in: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

impl GruWeights {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        GruWeights {
            w_in: Array2::zeros((3 * hidden, in_dim)),
            w_h: Array2::zeros((3 * hidden, hidden)),
            b: Array1::zeros(3 * hidden),
        }
    }

    fn init(in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        GruWeights {
            w_in: Array2::from_shape_fn((3 * hidden, in_dim), |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
            w_h: Array2::from_shape_fn((3 * hidden, hidden), |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
            b: Array1::from_shape_fn(3 * hidden, |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }
}

pub const INIT_SCALE: f64 = 0.08;

/// All trainable parameters. The same struct doubles as a gradient and
/// Adam-moment container since those share every shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqParams {
    /// `|V| x d`, shared by encoder and decoder inputs.
    pub embedding: Array2<f64>,
    pub enc_fwd: GruWeights,
    pub enc_bwd: GruWeights,
    /// `h x 2h`: maps the concatenated final encoder states to the initial
    /// decoder state (through tanh).
    pub bridge_w: Array2<f64>,
    pub bridge_b: Array1<f64>,
    /// Decoder GRU over `[prev embedding | context]`, input width `d + 2h`.
    pub dec: GruWeights,
    /// `h x h`, attention transform of the decoder state.
    pub attn_state: Array2<f64>,
    /// `h x 2h`, attention transform of an annotation row.
    pub attn_annot: Array2<f64>,
    /// `h`, attention score vector.
    pub attn_v: Array1<f64>,
    /// `|V| x h` output projection and its bias.
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl Seq2SeqParams {
    pub fn init(vocab_size: usize, embed_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let embedding =
            Array2::from_shape_fn((vocab_size, embed_dim), |_| rng.gen_range(-INIT_SCALE..INIT_SCALE));
        Self::init_with_embedding(embedding, hidden, rng)
    }

    /// Initialize everything but the embedding, which is supplied (for
    /// warm-starting from imported word vectors).
    pub fn init_with_embedding(embedding: Array2<f64>, hidden: usize, rng: &mut impl Rng) -> Self {
        let (vocab_size, embed_dim) = embedding.dim();
        Seq2SeqParams {
            embedding,
            enc_fwd: GruWeights::init(embed_dim, hidden, rng),
            enc_bwd: GruWeights::init(embed_dim, hidden, rng),
            bridge_w: Array2::from_shape_fn((hidden, 2 * hidden), |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
            bridge_b: Array1::from_shape_fn(hidden, |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
            dec: GruWeights::init(embed_dim + 2 * hidden, hidden, rng),
            attn_state: Array2::from_shape_fn((hidden, hidden), |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
            attn_annot: Array2::from_shape_fn((hidden, 2 * hidden), |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
            attn_v: Array1::from_shape_fn(hidden, |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
            out_w: Array2::from_shape_fn((vocab_size, hidden), |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
            out_b: Array1::from_shape_fn(vocab_size, |_| rng.gen_range(-INIT_SCALE..INIT_SCALE)),
        }
    }

    pub fn zeros(vocab_size: usize, embed_dim: usize, hidden: usize) -> Self {
        let (v, d, h) = (vocab_size, embed_dim, hidden);
        Seq2SeqParams {
            embedding: Array2::zeros((v, d)),
            enc_fwd: GruWeights::zeros(d, h),
            enc_bwd: GruWeights::zeros(d, h),
            bridge_w: Array2::zeros((h, 2 * h)),
            bridge_b: Array1::zeros(h),
            dec: GruWeights::zeros(d + 2 * h, h),
            attn_state: Array2::zeros((h, h)),
            attn_annot: Array2::zeros((h, 2 * h)),
            attn_v: Array1::zeros(h),
            out_w: Array2::zeros((v, h)),
            out_b: Array1::zeros(v),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.embed_dim(), self.hidden_dim())
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.bridge_w.nrows()
    }

    /// Named flat views over every parameter block, in a fixed order shared
    /// with [`Seq2SeqParams::blocks_mut`] (checkpoints and Adam rely on it).
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("embedding", self.embedding.as_slice().unwrap()),
            ("enc_fwd.w_in", self.enc_fwd.w_in.as_slice().unwrap()),
            ("enc_fwd.w_h", self.enc_fwd.w_h.as_slice().unwrap()),
            ("enc_fwd.b", self.enc_fwd.b.as_slice().unwrap()),
            ("enc_bwd.w_in", self.enc_bwd.w_in.as_slice().unwrap()),
            ("enc_bwd.w_h", self.enc_bwd.w_h.as_slice().unwrap()),
            ("enc_bwd.b", self.enc_bwd.b.as_slice().unwrap()),
            ("bridge_w", self.bridge_w.as_slice().unwrap()),
            ("bridge_b", self.bridge_b.as_slice().unwrap()),
            ("dec.w_in", self.dec.w_in.as_slice().unwrap()),
            ("dec.w_h", self.dec.w_h.as_slice().unwrap()),
            ("dec.b", self.dec.b.as_slice().unwrap()),
            ("attn_state", self.attn_state.as_slice().unwrap()),
            ("attn_annot", self.attn_annot.as_slice().unwrap()),
            ("attn_v", self.attn_v.as_slice().unwrap()),
            ("out_w", self.out_w.as_slice().unwrap()),
            ("out_b", self.out_b.as_slice().unwrap()),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("embedding", self.embedding.as_slice_mut().unwrap()),
            ("enc_fwd.w_in", self.enc_fwd.w_in.as_slice_mut().unwrap()),
            ("enc_fwd.w_h", self.enc_fwd.w_h.as_slice_mut().unwrap()),
            ("enc_fwd.b", self.enc_fwd.b.as_slice_mut().unwrap()),
            ("enc_bwd.w_in", self.enc_bwd.w_in.as_slice_mut().unwrap()),
            ("enc_bwd.w_h", self.enc_bwd.w_h.as_slice_mut().unwrap()),
            ("enc_bwd.b", self.enc_bwd.b.as_slice_mut().unwrap()),
            ("bridge_w", self.bridge_w.as_slice_mut().unwrap()),
            ("bridge_b", self.bridge_b.as_slice_mut().unwrap()),
            ("dec.w_in", self.dec.w_in.as_slice_mut().unwrap()),
            ("dec.w_h", self.dec.w_h.as_slice_mut().unwrap()),
            ("dec.b", self.dec.b.as_slice_mut().unwrap()),
            ("attn_state", self.attn_state.as_slice_mut().unwrap()),
            ("attn_annot", self.attn_annot.as_slice_mut().unwrap()),
            ("attn_v", self.attn_v.as_slice_mut().unwrap()),
            ("out_w", self.out_w.as_slice_mut().unwrap()),
            ("out_b", self.out_b.as_slice_mut().unwrap()),
        ]
    }
}

/// Where a position's input embedding comes from: a plain vocabulary row or
/// a fused soft word set.
#[derive(Debug, Clone, PartialEq)]
pub enum PosInput {
    Token(TokenId),
    Soft(SoftWordSet),
}

/// Embedding for one input position. A `Token` input is a direct row copy;
/// only `Soft` inputs go through fusion, so an all-token pass is bit-identical
/// to one with the augmentation path absent.
pub fn embed(params: &Seq2SeqParams, input: &PosInput) -> Array1<f64> {
    match input {
        PosInput::Token(t) => params.embedding.row(*t).to_owned(),
        PosInput::Soft(set) => fuse_embedding(set, &params.embedding),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stable softmax.
pub fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = x.mapv(|v| (v - max).exp());
    let total = out.sum();
    out /= total;
    out
}

/// Stable log-softmax.
pub fn log_softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let log_sum = x.fold(0.0, |a, &v| a + (v - max).exp()).ln();
    x.mapv(|v| v - max - log_sum)
}

/// Intermediates of one GRU step, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub c: Array1<f64>,
    /// `r * h_prev`, the candidate gate's recurrent input.
    pub rh: Array1<f64>,
    pub h: Array1<f64>,
}

pub(crate) fn gru_step(w: &GruWeights, x: ArrayView1<f64>, h_prev: ArrayView1<f64>) -> GruCache {
    let h = w.hidden();
    let mut pre = w.w_in.dot(&x) + &w.b;
    {
        let zr = w.w_h.slice(s![..2 * h, ..]).dot(&h_prev);
        pre.slice_mut(s![..2 * h]).zip_mut_with(&zr, |a, &b| *a += b);
    }
    let z = pre.slice(s![..h]).mapv(sigmoid);
    let r = pre.slice(s![h..2 * h]).mapv(sigmoid);
    let rh = &r * &h_prev;
    let pre_c = pre.slice(s![2 * h..]).to_owned() + w.w_h.slice(s![2 * h.., ..]).dot(&rh);
    let c = pre_c.mapv(f64::tanh);
    let new_h = (1.0 - &z) * &h_prev + &z * &c;
    GruCache {
        x: x.to_owned(),
        h_prev: h_prev.to_owned(),
        z,
        r,
        c,
        rh,
        h: new_h,
    }
}

/// Encoder output: per-position caches for both directions, the annotation
/// matrix, and the bridged initial decoder state.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub(crate) fwd: Vec<GruCache>,
    /// `bwd[i]` is the backward pass's cache at position `i` (it processes
    /// positions last to first, so `bwd[0]` holds its final state).
    pub(crate) bwd: Vec<GruCache>,
    /// `N x 2h`; row `i` is `[fwd state at i | bwd state at i]`.
    pub annotations: Array2<f64>,
    /// `[last fwd state | last bwd state]`, the bridge input.
    pub(crate) hcat: Array1<f64>,
    /// Initial decoder state `tanh(Wb hcat + bb)`.
    pub s0: Array1<f64>,
}

/// Run the bidirectional encoder over already-embedded inputs (`N x d`).
pub fn encode(params: &Seq2SeqParams, inputs: &Array2<f64>) -> Encoding {
    let n = inputs.nrows();
    assert!(n > 0, "encoder input must be non-empty");
    let h = params.hidden_dim();

    let mut fwd = Vec::with_capacity(n);
    let mut state = Array1::<f64>::zeros(h);
    for i in 0..n {
        let cache = gru_step(&params.enc_fwd, inputs.row(i), state.view());
        state = cache.h.clone();
        fwd.push(cache);
    }

    let mut bwd: Vec<Option<GruCache>> = (0..n).map(|_| None).collect();
    let mut state_b = Array1::<f64>::zeros(h);
    for i in (0..n).rev() {
        let cache = gru_step(&params.enc_bwd, inputs.row(i), state_b.view());
        state_b = cache.h.clone();
        bwd[i] = Some(cache);
    }
    let bwd: Vec<GruCache> = bwd.into_iter().map(Option::unwrap).collect();

    let mut annotations = Array2::<f64>::zeros((n, 2 * h));
    for i in 0..n {
        annotations.row_mut(i).slice_mut(s![..h]).assign(&fwd[i].h);
        annotations.row_mut(i).slice_mut(s![h..]).assign(&bwd[i].h);
    }
    let mut hcat = Array1::<f64>::zeros(2 * h);
    hcat.slice_mut(s![..h]).assign(&fwd[n - 1].h);
    hcat.slice_mut(s![h..]).assign(&bwd[0].h);
    let s0 = (params.bridge_w.dot(&hcat) + &params.bridge_b).mapv(f64::tanh);

    Encoding {
        fwd,
        bwd,
        annotations,
        hcat,
        s0,
    }
}

/// Attention intermediates for one decoder step.
#[derive(Debug, Clone)]
pub(crate) struct AttnCache {
    /// `N x h`, `tanh(Ws s_prev + Wa a_i)` rows.
    pub tanh_q: Array2<f64>,
    /// Softmax weights over annotations.
    pub alpha: Array1<f64>,
    /// `2h` context vector.
    pub ctx: Array1<f64>,
}

/// `Wa a_i` for every annotation row (`N x h`), computable once per sample.
pub(crate) fn precompute_annot_proj(params: &Seq2SeqParams, annotations: &Array2<f64>) -> Array2<f64> {
    annotations.dot(&params.attn_annot.t())
}

pub(crate) fn attention(
    params: &Seq2SeqParams,
    s_prev: ArrayView1<f64>,
    annotations: &Array2<f64>,
    annot_proj: &Array2<f64>,
) -> AttnCache {
    let ws_s = params.attn_state.dot(&s_prev);
    let mut tanh_q = annot_proj.clone();
    for mut row in tanh_q.rows_mut() {
        row.zip_mut_with(&ws_s, |a, &b| *a = (*a + b).tanh());
    }
    let scores = tanh_q.dot(&params.attn_v);
    let alpha = softmax(scores.view());
    let ctx = annotations.t().dot(&alpha);
    AttnCache { tanh_q, alpha, ctx }
}

/// Logits, probabilities, and the new decoder state for one step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Array1<f64>,
    pub g: Array1<f64>,
    pub state: Array1<f64>,
}

/// Full per-step cache used by backprop.
#[derive(Debug, Clone)]
pub(crate) struct DecStepCache {
    pub s_prev: Array1<f64>,
    pub attn: AttnCache,
    pub gru: GruCache,
    pub g: Array1<f64>,
}

pub(crate) fn decode_step_cached(
    params: &Seq2SeqParams,
    prev_emb: ArrayView1<f64>,
    s_prev: ArrayView1<f64>,
    annotations: &Array2<f64>,
    annot_proj: &Array2<f64>,
) -> DecStepCache {
    let attn = attention(params, s_prev, annotations, annot_proj);
    let mut x = Array1::<f64>::zeros(prev_emb.len() + attn.ctx.len());
    x.slice_mut(s![..prev_emb.len()]).assign(&prev_emb);
    x.slice_mut(s![prev_emb.len()..]).assign(&attn.ctx);
    let gru = gru_step(&params.dec, x.view(), s_prev);
    let logits = params.out_w.dot(&gru.h) + &params.out_b;
    let g = softmax(logits.view());
    DecStepCache {
        s_prev: s_prev.to_owned(),
        attn,
        gru,
        g,
    }
}

fn logits_of(params: &Seq2SeqParams, cache: &DecStepCache) -> Array1<f64> {
    params.out_w.dot(&cache.gru.h) + &params.out_b
}

/// One decoder step from `state` given the previous token's embedding.
/// Returns the step output and the attention weights.
pub fn decode_step(
    params: &Seq2SeqParams,
    prev_emb: ArrayView1<f64>,
    state: ArrayView1<f64>,
    annotations: &Array2<f64>,
) -> (StepOutput, Array1<f64>) {
    let annot_proj = precompute_annot_proj(params, annotations);
    let cache = decode_step_cached(params, prev_emb, state, annotations, &annot_proj);
    let logits = logits_of(params, &cache);
    (
        StepOutput {
            logits,
            g: cache.g.clone(),
            state: cache.gru.h.clone(),
        },
        cache.attn.alpha,
    )
}

/// Everything the backward pass needs from one teacher-forced pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) enc: Encoding,
    pub(crate) enc_inputs: Vec<PosInput>,
    pub(crate) dec_inputs: Vec<PosInput>,
    pub(crate) steps: Vec<DecStepCache>,
}

impl ForwardCache {
    pub fn outputs(&self, params: &Seq2SeqParams) -> Vec<StepOutput> {
        self.steps
            .iter()
            .map(|c| StepOutput {
                logits: logits_of(params, c),
                g: c.g.clone(),
                state: c.gru.h.clone(),
            })
            .collect()
    }

    pub fn step_probs(&self) -> impl Iterator<Item = &Array1<f64>> {
        self.steps.iter().map(|c| &c.g)
    }
}

/// Input source for every encoder position and decoder step of a sample
/// under `plan`. Decoder step 0 consumes `<bos>`; step `i > 0` consumes
/// response position `i - 1`, fused when that position is a response target.
pub(crate) fn plan_inputs(
    sample: &DialogueSample,
    plan: &AugmentationPlan,
) -> (Vec<PosInput>, Vec<PosInput>) {
    let enc_inputs: Vec<PosInput> = sample
        .history
        .iter()
        .enumerate()
        .map(|(i, &tok)| match plan.history_set(i) {
            Some(set) => PosInput::Soft(set.clone()),
            None => PosInput::Token(tok),
        })
        .collect();
    let dec_inputs: Vec<PosInput> = std::iter::once(PosInput::Token(BOS))
        .chain((1..sample.response.len()).map(|i| match plan.response_set(i - 1) {
            Some(set) => PosInput::Soft(set.clone()),
            None => PosInput::Token(sample.response[i - 1]),
        }))
        .collect();
    (enc_inputs, dec_inputs)
}

/// Teacher-forced pass over one sample. The plan supplies fused inputs; an
/// empty plan reduces to plain embedding lookups.
pub fn forward(
    params: &Seq2SeqParams,
    sample: &DialogueSample,
    plan: &AugmentationPlan,
) -> Result<ForwardCache> {
    if sample.history.is_empty() || sample.response.is_empty() {
        return Err(Error::Invalid("sample needs non-empty history and response".into()));
    }
    let d = params.embed_dim();
    let (enc_inputs, dec_inputs) = plan_inputs(sample, plan);

    let mut enc_emb = Array2::<f64>::zeros((enc_inputs.len(), d));
    for (i, input) in enc_inputs.iter().enumerate() {
        enc_emb.row_mut(i).assign(&embed(params, input));
    }
    let enc = encode(params, &enc_emb);
    let annot_proj = precompute_annot_proj(params, &enc.annotations);

    let m = sample.response.len();
    let mut dec_emb = Array2::<f64>::zeros((m, d));
    for (i, input) in dec_inputs.iter().enumerate() {
        dec_emb.row_mut(i).assign(&embed(params, input));
    }

    let mut steps = Vec::with_capacity(m);
    let mut state = enc.s0.clone();
    for i in 0..m {
        let cache = decode_step_cached(params, dec_emb.row(i), state.view(), &enc.annotations, &annot_proj);
        state = cache.gru.h.clone();
        steps.push(cache);
    }

    Ok(ForwardCache {
        enc,
        enc_inputs,
        dec_inputs,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::SoftWordSet;
    use crate::neighbors::Neighbor;
    use crate::seeding;
    use ndarray::arr1;

    pub(crate) fn tiny_params(vocab: usize, d: usize, h: usize, seed: u64) -> Seq2SeqParams {
        let mut rng = seeding::stream(seed, "init");
        Seq2SeqParams::init(vocab, d, h, &mut rng)
    }

    fn sample(history: &[TokenId], response: &[TokenId]) -> DialogueSample {
        DialogueSample {
            history: history.to_vec(),
            response: response.to_vec(),
        }
    }

    #[test]
    fn embed_plain_and_degenerate_soft_agree() {
        let params = tiny_params(10, 4, 3, 1);
        let plain = embed(&params, &PosInput::Token(7));
        let soft = embed(&params, &PosInput::Soft(SoftWordSet::new(7, &[])));
        assert_eq!(plain, soft);
        let mixed = embed(
            &params,
            &PosInput::Soft(SoftWordSet::new(7, &[Neighbor { token: 8, score: 0.9 }])),
        );
        assert_ne!(plain, mixed);
    }

    #[test]
    fn softmax_sums_to_one_and_handles_shift() {
        let x = arr1(&[1.0, 2.0, 3.0]);
        let p = softmax(x.view());
        assert!((p.sum() - 1.0).abs() < 1e-15);
        let shifted = softmax((x + 500.0).view());
        for (a, b) in p.iter().zip(shifted.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let lp = log_softmax(arr1(&[1.0, 2.0, 3.0]).view());
        for (l, p) in lp.iter().zip(p.iter()) {
            assert!((l.exp() - p).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_zero_weights_give_zero_states() {
        let w = GruWeights::zeros(3, 2);
        let cache = gru_step(&w, arr1(&[1.0, -2.0, 0.5]).view(), arr1(&[0.0, 0.0]).view());
        assert_eq!(cache.h, arr1(&[0.0, 0.0]));
    }

    #[test]
    fn gru_bias_only_matches_hand_computation() {
        // Zero weight matrices, nonzero biases, h = 2: two steps by hand.
        let mut w = GruWeights::zeros(3, 2);
        w.b = arr1(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        let x = arr1(&[9.0, 9.0, 9.0]); // ignored by zero W
        let h0 = arr1(&[0.0, 0.0]);
        let c1 = gru_step(&w, x.view(), h0.view());
        let z = [sigmoid(0.3), sigmoid(-0.2)];
        let cand = [(-0.4f64).tanh(), 0.7f64.tanh()];
        let h1 = [z[0] * cand[0], z[1] * cand[1]];
        assert!((c1.h[0] - h1[0]).abs() < 1e-15);
        assert!((c1.h[1] - h1[1]).abs() < 1e-15);
        let c2 = gru_step(&w, x.view(), c1.h.view());
        for j in 0..2 {
            let expect = (1.0 - z[j]) * h1[j] + z[j] * cand[j];
            assert!((c2.h[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_single_position_shapes() {
        let params = tiny_params(8, 3, 4, 2);
        let inputs = Array2::from_shape_fn((1, 3), |(_, j)| j as f64 * 0.1);
        let enc = encode(&params, &inputs);
        assert_eq!(enc.annotations.dim(), (1, 8));
        assert_eq!(enc.s0.len(), 4);
        assert_eq!(enc.hcat.len(), 8);
    }

    #[test]
    fn encode_backward_component_mirrors_reversed_input() {
        let params = tiny_params(8, 3, 2, 5);
        let n = 3;
        let inputs = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let mut reversed = inputs.clone();
        for i in 0..n {
            reversed.row_mut(i).assign(&inputs.row(n - 1 - i));
        }
        // Swap the direction weights so the reversed run's forward direction
        // uses the original backward weights.
        let mut swapped = params.clone();
        std::mem::swap(&mut swapped.enc_fwd, &mut swapped.enc_bwd);

        let enc = encode(&params, &inputs);
        let enc_rev = encode(&swapped, &reversed);
        let h = 2;
        for i in 0..n {
            let bwd_i = enc.annotations.row(i).slice(s![h..]).to_owned();
            let fwd_rev = enc_rev.annotations.row(n - 1 - i).slice(s![..h]).to_owned();
            assert_eq!(bwd_i, fwd_rev);
        }
    }

    #[test]
    fn attention_single_annotation_gets_weight_one() {
        let params = tiny_params(8, 3, 4, 3);
        let annotations = Array2::from_shape_fn((1, 8), |(_, j)| j as f64 * 0.05);
        let state = Array1::zeros(4);
        let prev = Array1::zeros(3);
        let (_, alpha) = decode_step(&params, prev.view(), state.view(), &annotations);
        assert_eq!(alpha.len(), 1);
        assert_eq!(alpha[0], 1.0);
    }

    #[test]
    fn attention_identical_annotations_are_uniform() {
        let params = tiny_params(8, 3, 4, 4);
        let row: Vec<f64> = (0..8).map(|j| j as f64 * 0.07 - 0.2).collect();
        let mut annotations = Array2::zeros((3, 8));
        for i in 0..3 {
            annotations.row_mut(i).assign(&arr1(&row));
        }
        let (_, alpha) = decode_step(
            &params,
            Array1::zeros(3).view(),
            Array1::from_elem(4, 0.1).view(),
            &annotations,
        );
        for &a in alpha.iter() {
            assert!((a - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn decode_step_matches_scalar_trace() {
        // h = 1, d = 1, |V| = 6, N = 2: recompute the whole step with plain
        // scalar arithmetic.
        let mut params = Seq2SeqParams {
            embedding: Array2::zeros((6, 1)),
            enc_fwd: GruWeights::zeros(1, 1),
            enc_bwd: GruWeights::zeros(1, 1),
            bridge_w: Array2::zeros((1, 2)),
            bridge_b: Array1::zeros(1),
            dec: GruWeights::zeros(3, 1),
            attn_state: Array2::from_elem((1, 1), 0.5),
            attn_annot: Array2::from_shape_fn((1, 2), |(_, j)| 0.3 + 0.1 * j as f64),
            attn_v: arr1(&[0.8]),
            out_w: Array2::from_shape_fn((6, 1), |(i, _)| 0.1 * i as f64 - 0.2),
            out_b: Array1::from_shape_fn(6, |i| 0.05 * i as f64),
        };
        params.dec.w_in = Array2::from_shape_fn((3, 3), |(i, j)| 0.1 * (i + j) as f64 - 0.1);
        params.dec.w_h = Array2::from_shape_fn((3, 1), |(i, _)| 0.2 - 0.05 * i as f64);
        params.dec.b = arr1(&[0.01, -0.02, 0.03]);

        let annotations =
            Array2::from_shape_vec((2, 2), vec![0.4, -0.3, 0.2, 0.6]).unwrap();
        let prev = arr1(&[0.7]);
        let state = arr1(&[-0.25]);
        let (out, alpha) = decode_step(&params, prev.view(), state.view(), &annotations);

        // Scalar re-derivation.
        let q1: f64 = (0.5 * -0.25 + 0.3 * 0.4 + 0.4 * -0.3f64).tanh();
        let q2: f64 = (0.5 * -0.25 + 0.3 * 0.2 + 0.4 * 0.6f64).tanh();
        let (u1, u2) = (0.8 * q1, 0.8 * q2);
        let m = u1.max(u2);
        let (e1, e2) = ((u1 - m).exp(), (u2 - m).exp());
        let (a1, a2) = (e1 / (e1 + e2), e2 / (e1 + e2));
        assert!((alpha[0] - a1).abs() < 1e-15);
        assert!((alpha[1] - a2).abs() < 1e-15);
        let ctx = [a1 * 0.4 + a2 * 0.2, a1 * -0.3 + a2 * 0.6];
        let x = [0.7, ctx[0], ctx[1]];
        let dot = |row: usize, x: &[f64; 3]| -> f64 {
            (0..3).map(|j| params.dec.w_in[(row, j)] * x[j]).sum()
        };
        let z = sigmoid(dot(0, &x) + 0.2 * -0.25 + 0.01);
        let r = sigmoid(dot(1, &x) + 0.15 * -0.25 - 0.02);
        let c = (dot(2, &x) + 0.1 * (r * -0.25) + 0.03).tanh();
        let s_new = (1.0 - z) * -0.25 + z * c;
        assert!((out.state[0] - s_new).abs() < 1e-14);
        for i in 0..6 {
            let logit = params.out_w[(i, 0)] * s_new + params.out_b[i];
            assert!((out.logits[i] - logit).abs() < 1e-13);
        }
        assert!((out.g.sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn forward_empty_plan_equals_plain_path() {
        let params = tiny_params(12, 4, 3, 6);
        let s = sample(&[5, 6, 7], &[8, 9, 2]);
        let with_plan = forward(&params, &s, &AugmentationPlan::empty()).unwrap();
        // A second run with a separately constructed empty plan must agree
        // bit for bit.
        let plain = forward(&params, &s, &AugmentationPlan::default()).unwrap();
        for (a, b) in with_plan.steps.iter().zip(&plain.steps) {
            assert_eq!(a.g, b.g);
            assert_eq!(a.gru.h, b.gru.h);
        }
    }

    #[test]
    fn forward_fused_inputs_change_outputs() {
        let params = tiny_params(12, 4, 3, 7);
        let s = sample(&[5, 6, 7], &[8, 9, 2]);
        let mut plan = AugmentationPlan::empty();
        plan.response_targets.push((
            0,
            SoftWordSet::new(8, &[Neighbor { token: 10, score: 0.8 }]),
        ));
        let plain = forward(&params, &s, &AugmentationPlan::empty()).unwrap();
        let fused = forward(&params, &s, &plan).unwrap();
        // Step 0 sees <bos> either way; step 1 consumes position 0's fused
        // embedding, so outputs from step 1 on must differ.
        assert_eq!(plain.steps[0].g, fused.steps[0].g);
        assert_ne!(plain.steps[1].g, fused.steps[1].g);
    }

    #[test]
    fn forward_single_token_response() {
        let params = tiny_params(12, 4, 3, 8);
        let s = sample(&[5], &[2]);
        let cache = forward(&params, &s, &AugmentationPlan::empty()).unwrap();
        assert_eq!(cache.steps.len(), 1);
        let outs = cache.outputs(&params);
        assert_eq!(outs[0].g.len(), 12);
        assert!((outs[0].g.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_empty_sequences() {
        let params = tiny_params(12, 4, 3, 9);
        assert!(forward(&params, &sample(&[], &[2]), &AugmentationPlan::empty()).is_err());
        assert!(forward(&params, &sample(&[5], &[]), &AugmentationPlan::empty()).is_err());
    }
}
