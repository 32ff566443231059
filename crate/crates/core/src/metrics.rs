//! Corpus-level evaluation: diversity (Dist-n, Ent-n, Sen-n), n-gram
//! accuracy (BLEU, NIST-4), and average length.
//!
//! All functions take responses as lists of token sequences; callers
//! tokenize text first. Entropy is reported in nats. Aggregations iterate
//! ordered maps so results never depend on hash order.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::{Error, Result};

fn window_counts<'a>(seq: &'a [String], n: usize) -> BTreeMap<&'a [String], usize> {
    let mut counts = BTreeMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0usize) += 1;
        }
    }
    counts
}

fn pooled_counts<'a>(responses: &'a [Vec<String>], n: usize) -> BTreeMap<&'a [String], usize> {
    let mut counts = BTreeMap::new();
    for r in responses {
        if r.len() >= n {
            for w in r.windows(n) {
                *counts.entry(w.as_ref()).or_insert(0usize) += 1;
            }
        }
    }
    counts
}

/// Distinct n-grams over total n-grams, pooled across all responses.
/// Responses shorter than `n` contribute nothing; 0 when nothing pools.
pub fn dist_n(responses: &[Vec<String>], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    let counts = pooled_counts(responses, n);
    let total: usize = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    counts.len() as f64 / total as f64
}

/// Entropy (nats) of the pooled n-gram frequency distribution; 0 when
/// nothing pools.
pub fn ent_n(responses: &[Vec<String>], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    let counts = pooled_counts(responses, n);
    let total: usize = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    -counts
        .values()
        .map(|&f| {
            let p = f as f64 / t;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Mean over responses of per-sentence Dist-n. A sentence too short to hold
/// an n-gram counts as fully distinct (1.0) rather than being punished for
/// brevity twice.
pub fn sen_n(responses: &[Vec<String>], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    if responses.is_empty() {
        return 0.0;
    }
    let total: f64 = responses
        .iter()
        .map(|r| {
            if r.len() < n {
                return 1.0;
            }
            let counts = window_counts(r, n);
            let total: usize = counts.values().sum();
            counts.len() as f64 / total as f64
        })
        .sum();
    total / responses.len() as f64
}

/// Mean token count.
pub fn avg_len(responses: &[Vec<String>]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::Invalid("average length of an empty response list".into()));
    }
    let total: usize = responses.iter().map(Vec::len).sum();
    Ok(total as f64 / responses.len() as f64)
}

fn check_aligned(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Invalid("evaluation over empty lists".into()));
    }
    Ok(())
}

/// Corpus BLEU-4: clipped n-gram precisions up to order 4, geometric mean,
/// brevity penalty. Add-one smoothing applies only to orders with zero
/// matches, so an exact self-match scores 1.0 with no distortion.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    check_aligned(candidates, references)?;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            if c.len() < n {
                continue;
            }
            totals[n - 1] += c.len() - n + 1;
            let rc = window_counts(r, n);
            for (g, &count) in &window_counts(c, n) {
                if let Some(&rcount) = rc.get(g) {
                    matches[n - 1] += count.min(rcount);
                }
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (num, den) = if matches[n] == 0 {
            ((matches[n] + 1) as f64, (totals[n] + 1) as f64)
        } else {
            (matches[n] as f64, totals[n] as f64)
        };
        log_sum += (num / den).ln();
    }
    let gm = (log_sum / 4.0).exp();
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(gm * bp)
}

/// One NIST order: the information mass of matched candidate n-grams and
/// the candidate n-gram count it is divided by.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct NistOrder {
    pub info_matched: f64,
    pub candidate_ngrams: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Nist4Detail {
    pub orders: [NistOrder; 4],
    pub brevity: f64,
    pub score: f64,
}

/// NIST-4 with the per-order terms exposed.
///
/// Information weights come from pooled reference statistics:
/// `Info(w1..wn) = log2(count(w1..w_{n-1}) / count(w1..wn))`, the count of
/// the empty parent being the total reference token count. Matching is
/// per segment with clipping. The score is the arithmetic mean of the four
/// per-order precisions times the NIST brevity factor
/// `exp(beta * ln^2(min(1, len_ratio)))`, `beta` fixed so the factor is 0.5
/// at a 2/3 length ratio.
pub fn nist4_detail(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<Nist4Detail> {
    check_aligned(candidates, references)?;

    let mut ref_counts: Vec<BTreeMap<&[String], usize>> =
        (1..=4).map(|n| pooled_counts(references, n)).collect();
    let ref_tokens: usize = references.iter().map(Vec::len).sum();
    let info = |g: &[String]| -> f64 {
        let own = ref_counts[g.len() - 1][g];
        let parent = if g.len() == 1 {
            ref_tokens
        } else {
            ref_counts[g.len() - 2][&g[..g.len() - 1]]
        };
        (parent as f64 / own as f64).log2()
    };

    let mut orders = [NistOrder::default(); 4];
    let mut cand_len = 0usize;
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        for n in 1..=4 {
            if c.len() < n {
                continue;
            }
            orders[n - 1].candidate_ngrams += c.len() - n + 1;
            let rc = window_counts(r, n);
            for (g, &count) in &window_counts(c, n) {
                if let Some(&rcount) = rc.get(g) {
                    orders[n - 1].info_matched += count.min(rcount) as f64 * info(g);
                }
            }
        }
    }
    ref_counts.clear();

    if cand_len == 0 {
        return Ok(Nist4Detail {
            orders,
            brevity: 0.0,
            score: 0.0,
        });
    }
    let ratio = if ref_tokens == 0 {
        1.0
    } else {
        (cand_len as f64 / ref_tokens as f64).min(1.0)
    };
    let beta = 0.5f64.ln() / (2.0f64 / 3.0).ln().powi(2);
    let brevity = (beta * ratio.ln().powi(2)).exp();
    let mean: f64 = orders
        .iter()
        .map(|o| {
            if o.candidate_ngrams == 0 {
                0.0
            } else {
                o.info_matched / o.candidate_ngrams as f64
            }
        })
        .sum::<f64>()
        / 4.0;
    Ok(Nist4Detail {
        orders,
        brevity,
        score: mean * brevity,
    })
}

pub fn nist4(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    Ok(nist4_detail(candidates, references)?.score)
}

/// Flat reporting bundle; serializes to a single-level JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub bleu: f64,
    pub nist4: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub dist3: f64,
    pub ent1: f64,
    pub ent2: f64,
    pub ent3: f64,
    pub sen1: f64,
    pub sen2: f64,
    pub sen3: f64,
    pub avg_len: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
}

/// Compute every report field at once. `ppl` is supplied by the caller
/// (it needs a model, not just text).
pub fn evaluate_responses(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    ppl: Option<f64>,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        bleu: bleu(candidates, references)?,
        nist4: nist4(candidates, references)?,
        dist1: dist_n(candidates, 1),
        dist2: dist_n(candidates, 2),
        dist3: dist_n(candidates, 3),
        ent1: ent_n(candidates, 1),
        ent2: ent_n(candidates, 2),
        ent3: ent_n(candidates, 3),
        sen1: sen_n(candidates, 1),
        sen2: sen_n(candidates, 2),
        sen3: sen_n(candidates, 3),
        avg_len: avg_len(candidates)?,
        ppl,
    })
}

impl MetricsReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("metric        value\n");
        let mut row = |name: &str, value: f64| {
            out.push_str(&format!("{name:<12}  {value:.6}\n"));
        };
        row("BLEU", self.bleu);
        row("NIST-4", self.nist4);
        row("Dist-1", self.dist1);
        row("Dist-2", self.dist2);
        row("Dist-3", self.dist3);
        row("Ent-1 (nats)", self.ent1);
        row("Ent-2 (nats)", self.ent2);
        row("Ent-3 (nats)", self.ent3);
        row("Sen-1", self.sen1);
        row("Sen-2", self.sen2);
        row("Sen-3", self.sen3);
        row("avg.len", self.avg_len);
        if let Some(ppl) = self.ppl {
            row("PPL", ppl);
        }
        out
    }
}
