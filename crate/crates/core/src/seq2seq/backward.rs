//! Exact backpropagation for the encoder/decoder.
//!
//! [`backward`] consumes a [`ForwardCache`] and the per-step logit gradients
//! and returns gradients for every parameter block, including embedding rows
//! reached through fused inputs (chain rule distributes a fused position's
//! gradient over its member rows, weighted by `p`).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewMut2, Axis};

use crate::seq2seq::{ForwardCache, GruCache, GruWeights, PosInput, Seq2SeqParams};

/// `m[i][j] += a[i] * b[j]`.
fn add_outer(mut m: ArrayViewMut2<f64>, a: &Array1<f64>, b: ArrayView1<f64>) {
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let ai = a[i];
        if ai == 0.0 {
            continue;
        }
        row.zip_mut_with(&b, |r, &bv| *r += ai * bv);
    }
}

/// Backprop through one GRU step. Accumulates into `grads`, the input
/// gradient `dx`, and the previous-state gradient `dh_prev`.
pub(crate) fn gru_backward(
    w: &GruWeights,
    cache: &GruCache,
    dh: &Array1<f64>,
    grads: &mut GruWeights,
    dx: &mut Array1<f64>,
    dh_prev: &mut Array1<f64>,
) {
    let h = w.hidden();

    // h' = (1 - z) * h_prev + z * c
    let mut dz = &cache.c - &cache.h_prev;
    dz *= dh;
    let mut dc = cache.z.clone();
    dc *= dh;
    {
        let mut direct = cache.z.mapv(|z| 1.0 - z);
        direct *= dh;
        *dh_prev += &direct;
    }

    // Candidate gate: c = tanh(pre_c), pre_c sees x and r * h_prev.
    let mut dpre_c = dc;
    dpre_c.zip_mut_with(&cache.c, |d, &c| *d *= 1.0 - c * c);
    {
        let mut b = grads.b.slice_mut(s![2 * h..]);
        b += &dpre_c;
    }
    add_outer(grads.w_in.slice_mut(s![2 * h.., ..]), &dpre_c, cache.x.view());
    add_outer(grads.w_h.slice_mut(s![2 * h.., ..]), &dpre_c, cache.rh.view());
    *dx += &w.w_in.slice(s![2 * h.., ..]).t().dot(&dpre_c);
    let drh = w.w_h.slice(s![2 * h.., ..]).t().dot(&dpre_c);

    // rh = r * h_prev
    let mut dr = &drh * &cache.h_prev;
    {
        let mut via_rh = drh;
        via_rh *= &cache.r;
        *dh_prev += &via_rh;
    }

    // Reset gate.
    let mut dpre_r = std::mem::take(&mut dr);
    dpre_r.zip_mut_with(&cache.r, |d, &r| *d *= r * (1.0 - r));
    {
        let mut b = grads.b.slice_mut(s![h..2 * h]);
        b += &dpre_r;
    }
    add_outer(grads.w_in.slice_mut(s![h..2 * h, ..]), &dpre_r, cache.x.view());
    add_outer(grads.w_h.slice_mut(s![h..2 * h, ..]), &dpre_r, cache.h_prev.view());
    *dx += &w.w_in.slice(s![h..2 * h, ..]).t().dot(&dpre_r);
    *dh_prev += &w.w_h.slice(s![h..2 * h, ..]).t().dot(&dpre_r);

    // Update gate.
    let mut dpre_z = dz;
    dpre_z.zip_mut_with(&cache.z, |d, &z| *d *= z * (1.0 - z));
    {
        let mut b = grads.b.slice_mut(s![..h]);
        b += &dpre_z;
    }
    add_outer(grads.w_in.slice_mut(s![..h, ..]), &dpre_z, cache.x.view());
    add_outer(grads.w_h.slice_mut(s![..h, ..]), &dpre_z, cache.h_prev.view());
    *dx += &w.w_in.slice(s![..h, ..]).t().dot(&dpre_z);
    *dh_prev += &w.w_h.slice(s![..h, ..]).t().dot(&dpre_z);
}

fn scatter_embedding(grad_emb: &mut Array2<f64>, input: &PosInput, dy: ArrayView1<f64>) {
    match input {
        PosInput::Token(t) => {
            grad_emb.row_mut(*t).zip_mut_with(&dy, |a, &b| *a += b);
        }
        PosInput::Soft(set) => {
            for (tok, p) in set.members() {
                grad_emb.row_mut(tok).zip_mut_with(&dy, |a, &b| *a += p * b);
            }
        }
    }
}

/// Gradients of a scalar loss whose per-step logit gradients are `dlogits`
/// (one vector of length `|V|` per decoder step, already carrying any
/// normalization weights).
pub fn backward(
    params: &Seq2SeqParams,
    cache: &ForwardCache,
    dlogits: &[Array1<f64>],
) -> Seq2SeqParams {
    let mut g = params.zeros_like();
    let h = params.hidden_dim();
    let d = params.embed_dim();
    let n = cache.enc.fwd.len();
    let m = cache.steps.len();
    assert_eq!(dlogits.len(), m, "one logit gradient per decoder step");
    let annotations = &cache.enc.annotations;

    // Gradients into annotation rows, accumulated across decoder steps.
    let mut dann = Array2::<f64>::zeros((n, 2 * h));
    // Gradient flowing into s_t from step t + 1.
    let mut ds_next = Array1::<f64>::zeros(h);

    for t in (0..m).rev() {
        let step = &cache.steps[t];
        let dl = &dlogits[t];

        add_outer(g.out_w.view_mut(), dl, step.gru.h.view());
        g.out_b += dl;
        let mut ds = params.out_w.t().dot(dl);
        ds += &ds_next;

        let mut dx = Array1::<f64>::zeros(d + 2 * h);
        let mut ds_prev = Array1::<f64>::zeros(h);
        gru_backward(&params.dec, &step.gru, &ds, &mut g.dec, &mut dx, &mut ds_prev);

        scatter_embedding(&mut g.embedding, &cache.dec_inputs[t], dx.slice(s![..d]));
        let dctx = dx.slice(s![d..]).to_owned();

        // ctx = A^T alpha
        let dalpha = annotations.dot(&dctx);
        for i in 0..n {
            let a = step.attn.alpha[i];
            dann.row_mut(i).zip_mut_with(&dctx, |acc, &v| *acc += a * v);
        }

        // Softmax: du_i = alpha_i (dalpha_i - dalpha . alpha)
        let mix = dalpha.dot(&step.attn.alpha);
        let mut du = dalpha;
        du.zip_mut_with(&step.attn.alpha, |dv, &a| *dv = a * (*dv - mix));

        // u_i = v . tanh_q_i
        g.attn_v += &step.attn.tanh_q.t().dot(&du);
        let mut dq = Array2::<f64>::zeros((n, h));
        for i in 0..n {
            let dui = du[i];
            let tq = step.attn.tanh_q.row(i);
            let mut row = dq.row_mut(i);
            for j in 0..h {
                row[j] = dui * params.attn_v[j] * (1.0 - tq[j] * tq[j]);
            }
        }
        let dq_sum = dq.sum_axis(Axis(0));
        add_outer(g.attn_state.view_mut(), &dq_sum, step.s_prev.view());
        ds_prev += &params.attn_state.t().dot(&dq_sum);
        g.attn_annot += &dq.t().dot(annotations);
        dann += &dq.dot(&params.attn_annot);

        ds_next = ds_prev;
    }

    // Bridge: s0 = tanh(Wb hcat + bb)
    let mut dspre = ds_next;
    dspre.zip_mut_with(&cache.enc.s0, |dv, &s0| *dv *= 1.0 - s0 * s0);
    add_outer(g.bridge_w.view_mut(), &dspre, cache.enc.hcat.view());
    g.bridge_b += &dspre;
    let dhcat = params.bridge_w.t().dot(&dspre);

    let mut dhf: Vec<Array1<f64>> = (0..n).map(|i| dann.row(i).slice(s![..h]).to_owned()).collect();
    let mut dhb: Vec<Array1<f64>> = (0..n).map(|i| dann.row(i).slice(s![h..]).to_owned()).collect();
    dhf[n - 1] += &dhcat.slice(s![..h]);
    dhb[0] += &dhcat.slice(s![h..]);

    let mut denc_inputs = Array2::<f64>::zeros((n, d));

    // Forward direction ran positions 0..n, so unroll from the end.
    let mut carry = Array1::<f64>::zeros(h);
    for i in (0..n).rev() {
        let mut dh = std::mem::take(&mut dhf[i]);
        dh += &carry;
        carry = Array1::zeros(h);
        let mut dx = Array1::<f64>::zeros(d);
        gru_backward(&params.enc_fwd, &cache.enc.fwd[i], &dh, &mut g.enc_fwd, &mut dx, &mut carry);
        denc_inputs.row_mut(i).assign(&dx);
    }

    // Backward direction ran positions n-1..0; its step at position i has
    // the state at i + 1 as predecessor, so unroll ascending.
    let mut carry_b = Array1::<f64>::zeros(h);
    for i in 0..n {
        let mut dh = std::mem::take(&mut dhb[i]);
        dh += &carry_b;
        carry_b = Array1::zeros(h);
        let mut dx = Array1::<f64>::zeros(d);
        gru_backward(&params.enc_bwd, &cache.enc.bwd[i], &dh, &mut g.enc_bwd, &mut dx, &mut carry_b);
        denc_inputs.row_mut(i).zip_mut_with(&dx, |a, &b| *a += b);
    }

    for i in 0..n {
        scatter_embedding(&mut g.embedding, &cache.enc_inputs[i], denc_inputs.row(i));
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AugmentationPlan, SoftWordSet};
    use crate::corpus::DialogueSample;
    use crate::neighbors::Neighbor;
    use crate::seeding;
    use crate::seq2seq::forward;

    /// Mean hard cross-entropy of the response under teacher forcing; the
    /// independent scalar loss used for finite-difference checks here.
    fn hard_loss(params: &Seq2SeqParams, sample: &DialogueSample, plan: &AugmentationPlan) -> f64 {
        let cache = forward(params, sample, plan).unwrap();
        let m = sample.response.len() as f64;
        cache
            .steps
            .iter()
            .zip(&sample.response)
            .map(|(step, &tok)| -step.g[tok].ln())
            .sum::<f64>()
            / m
    }

    fn hard_dlogits(
        params: &Seq2SeqParams,
        sample: &DialogueSample,
        plan: &AugmentationPlan,
    ) -> (crate::seq2seq::ForwardCache, Vec<Array1<f64>>) {
        let cache = forward(params, sample, plan).unwrap();
        let m = sample.response.len() as f64;
        let dl = cache
            .steps
            .iter()
            .zip(&sample.response)
            .map(|(step, &tok)| {
                let mut d = step.g.clone();
                d[tok] -= 1.0;
                d /= m;
                d
            })
            .collect();
        (cache, dl)
    }

    fn test_plan() -> AugmentationPlan {
        let mut plan = AugmentationPlan::empty();
        plan.history_targets.push((
            1,
            SoftWordSet::new(6, &[Neighbor { token: 9, score: 0.7 }]),
        ));
        plan.response_targets.push((
            0,
            SoftWordSet::new(
                8,
                &[
                    Neighbor { token: 10, score: 0.6 },
                    Neighbor { token: 11, score: 0.4 },
                ],
            ),
        ));
        plan
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeding::stream(31, "init");
        let mut params = Seq2SeqParams::init(12, 4, 4, &mut rng);
        let sample = DialogueSample {
            history: vec![5, 6, 7, 3, 5],
            response: vec![8, 9, 10, 2],
        };
        let plan = test_plan();
        let (cache, dl) = hard_dlogits(&params, &sample, &plan);
        let grads = backward(&params, &cache, &dl);

        let eps = 1e-5;
        let grad_blocks: Vec<(&str, Vec<f64>)> = grads
            .blocks()
            .into_iter()
            .map(|(name, s)| (name, s.to_vec()))
            .collect();
        for (bi, (name, gblock)) in grad_blocks.iter().enumerate() {
            // Check a deterministic subset of each block to keep this quick;
            // the acceptance suite sweeps every scalar.
            let stride = (gblock.len() / 6).max(1);
            for idx in (0..gblock.len()).step_by(stride) {
                let orig = {
                    let mut blocks = params.blocks_mut();
                    let val = blocks[bi].1[idx];
                    blocks[bi].1[idx] = val + eps;
                    val
                };
                let plus = hard_loss(&params, &sample, &plan);
                {
                    let mut blocks = params.blocks_mut();
                    blocks[bi].1[idx] = orig - eps;
                }
                let minus = hard_loss(&params, &sample, &plan);
                {
                    let mut blocks = params.blocks_mut();
                    blocks[bi].1[idx] = orig;
                }
                let fd = (plus - minus) / (2.0 * eps);
                let analytic = gblock[idx];
                let denom = fd.abs().max(analytic.abs());
                // Central differences at eps=1e-5 carry ~1e-10 absolute noise on an
                // O(1) loss, so gradients below ~1e-6 cannot be resolved to 1e-4
                // relative. For those, require absolute agreement at the noise floor.
                if denom < 1e-6 {
                    assert!(
                        (fd - analytic).abs() < 1e-9,
                        "{name}[{idx}]: fd {fd:.3e} vs analytic {analytic:.3e} (abs)"
                    );
                    continue;
                }
                let rel = (fd - analytic).abs() / denom;
                assert!(
                    rel < 1e-4,
                    "{name}[{idx}]: fd {fd:.3e} vs analytic {analytic:.3e} (rel {rel:.3e})"
                );
            }
        }
    }

    #[test]
    fn unused_embedding_rows_get_zero_gradient() {
        let mut rng = seeding::stream(32, "init");
        let params = Seq2SeqParams::init(12, 4, 3, &mut rng);
        let sample = DialogueSample {
            history: vec![5, 6],
            response: vec![7, 2],
        };
        let (cache, dl) = hard_dlogits(&params, &sample, &AugmentationPlan::empty());
        let grads = backward(&params, &cache, &dl);
        // Rows 9, 10, 11 appear nowhere as inputs.
        for row in [9, 10, 11] {
            assert!(grads.embedding.row(row).iter().all(|&x| x == 0.0), "row {row}");
        }
        // <bos> feeds decoder step 0, so its row has gradient.
        assert!(grads.embedding.row(crate::corpus::BOS).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn degenerate_soft_input_matches_plain_row_gradient() {
        let mut rng = seeding::stream(33, "init");
        let params = Seq2SeqParams::init(12, 4, 3, &mut rng);
        let sample = DialogueSample {
            history: vec![5, 6],
            response: vec![7, 2],
        };
        let mut plan = AugmentationPlan::empty();
        plan.history_targets.push((0, SoftWordSet::new(5, &[])));
        let (cache_a, dl_a) = hard_dlogits(&params, &sample, &plan);
        let ga = backward(&params, &cache_a, &dl_a);
        let (cache_b, dl_b) = hard_dlogits(&params, &sample, &AugmentationPlan::empty());
        let gb = backward(&params, &cache_b, &dl_b);
        assert_eq!(ga.embedding, gb.embedding);
    }
}
