//! Augmentation target selection and soft word sets.
//!
//! A plan marks positions in a dialogue sample whose tokens are replaced by a
//! convex mixture over the token and its neighbors. Each set keeps the
//! original token at raw score 1; candidate probabilities are the normalized
//! raw scores, so the mixed embedding is
//!
//! `e_fused = sum_j p(c_j) * E[c_j]` with `p(c_j) = s_j / sum_l s_l`.
//!
//! Selection draws one Bernoulli(rho) variable per eligible position from a
//! per-(epoch, sample) stream, so plans are fully determined by
//! (sample, config, seed, epoch) and never perturb any other randomness.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::corpus::{DialogueSample, TokenId, Vocabulary, NUM_RESERVED};
use crate::error::Result;
use crate::neighbors::{query_neighbors, Neighbor, NeighborModel};

/// Article tokens excluded from augmentation.
pub const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Preposition tokens excluded from augmentation.
pub const PREPOSITIONS: [&str; 16] = [
    "in", "on", "at", "to", "of", "for", "with", "from", "by", "about", "as", "into", "over",
    "under", "up", "down",
];

/// Whether a token may be chosen as an augmentation target. Reserved tokens,
/// punctuation (no alphanumeric character), articles, and prepositions are
/// ineligible.
pub fn is_eligible(token: TokenId, vocab: &Vocabulary) -> bool {
    if token < NUM_RESERVED || token >= vocab.len() {
        return false;
    }
    let s = vocab.token(token);
    if !s.chars().any(|c| c.is_alphanumeric()) {
        return false;
    }
    !(ARTICLES.contains(&s) || PREPOSITIONS.contains(&s))
}

/// Candidate set for one target position: the original token first at raw
/// score 1, then its neighbors in query order. `p` is the normalized score
/// vector over the same entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftWordSet {
    entries: Vec<(TokenId, f64)>,
    p: Vec<f64>,
}

impl SoftWordSet {
    pub fn new(original: TokenId, neighbors: &[Neighbor]) -> Self {
        let mut entries = vec![(original, 1.0)];
        entries.extend(neighbors.iter().map(|n| (n.token, n.score)));
        let total: f64 = entries.iter().map(|&(_, s)| s).sum();
        let p = entries.iter().map(|&(_, s)| s / total).collect();
        SoftWordSet { entries, p }
    }

    pub fn original(&self) -> TokenId {
        self.entries[0].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Only the original token, probability 1.
    pub fn is_degenerate(&self) -> bool {
        self.entries.len() == 1
    }

    /// `(token, p)` pairs, original first.
    pub fn members(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.entries
            .iter()
            .zip(&self.p)
            .map(|(&(tok, _), &p)| (tok, p))
    }

    /// `(token, raw_score)` pairs, original first.
    pub fn raw_entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }
}

/// Build the soft word set for an eligible token from its neighbor list.
pub fn build_soft_word_set(
    token: TokenId,
    model: &NeighborModel,
    k: usize,
    tau: f64,
) -> Result<SoftWordSet> {
    let neighbors = query_neighbors(model, token, k, tau)?;
    Ok(SoftWordSet::new(token, &neighbors))
}

/// Convex mixture of embedding rows under the set's probabilities.
pub fn fuse_embedding(set: &SoftWordSet, embedding: &Array2<f64>) -> Array1<f64> {
    let mut fused = Array1::<f64>::zeros(embedding.ncols());
    for (tok, p) in set.members() {
        fused.scaled_add(p, &embedding.row(tok));
    }
    fused
}

/// The hard-replacement counterpart used by the `rep` baseline: the most
/// similar neighbor, or the token itself when none qualifies.
pub fn replace_most_similar(
    token: TokenId,
    model: &NeighborModel,
    k: usize,
    tau: f64,
) -> Result<TokenId> {
    let neighbors = query_neighbors(model, token, k, tau)?;
    Ok(neighbors.first().map_or(token, |n| n.token))
}

/// Positions selected for augmentation in one sample, with their soft word
/// sets. Position lists are ascending and index into the sample's history
/// and response respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct AugmentationPlan {
    pub history_targets: Vec<(usize, SoftWordSet)>,
    pub response_targets: Vec<(usize, SoftWordSet)>,
}

impl AugmentationPlan {
    pub fn empty() -> Self {
        AugmentationPlan::default()
    }

    pub fn is_empty(&self) -> bool {
        self.history_targets.is_empty() && self.response_targets.is_empty()
    }

    pub fn history_set(&self, pos: usize) -> Option<&SoftWordSet> {
        self.history_targets
            .binary_search_by_key(&pos, |&(p, _)| p)
            .ok()
            .map(|i| &self.history_targets[i].1)
    }

    pub fn response_set(&self, pos: usize) -> Option<&SoftWordSet> {
        self.response_targets
            .binary_search_by_key(&pos, |&(p, _)| p)
            .ok()
            .map(|i| &self.response_targets[i].1)
    }
}

/// Hard replacements for one sample under the `rep` baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ReplacementPlan {
    pub history: Vec<(usize, TokenId)>,
    pub response: Vec<(usize, TokenId)>,
}

/// Independently select each eligible position with probability `rho`,
/// consuming exactly one draw per eligible position. Returns ascending
/// position lists for history and response.
pub fn select_targets(
    sample: &DialogueSample,
    vocab: &Vocabulary,
    rho: f64,
    rng: &mut impl Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut pick = |seq: &[TokenId]| -> Vec<usize> {
        seq.iter()
            .enumerate()
            .filter(|&(_, &tok)| is_eligible(tok, vocab))
            .filter(|_| rng.gen::<f64>() < rho)
            .map(|(pos, _)| pos)
            .collect()
    };
    let history = pick(&sample.history);
    let response = pick(&sample.response);
    (history, response)
}

/// Builds plans for samples, caching neighbor lookups per token. One builder
/// serves a whole training run since `k` and `tau` are fixed.
pub struct PlanBuilder<'a> {
    model: &'a NeighborModel,
    vocab: &'a Vocabulary,
    k: usize,
    tau: f64,
    cache: HashMap<TokenId, SoftWordSet>,
}

impl<'a> PlanBuilder<'a> {
    pub fn new(model: &'a NeighborModel, vocab: &'a Vocabulary, k: usize, tau: f64) -> Self {
        PlanBuilder {
            model,
            vocab,
            k,
            tau,
            cache: HashMap::new(),
        }
    }

    fn set_for(&mut self, token: TokenId) -> Result<SoftWordSet> {
        if let Some(set) = self.cache.get(&token) {
            return Ok(set.clone());
        }
        let set = build_soft_word_set(token, self.model, self.k, self.tau)?;
        self.cache.insert(token, set.clone());
        Ok(set)
    }

    /// Build a soft-augmentation plan. With `augment_history` false, history
    /// positions still consume their selection draws but are never selected,
    /// so response-side plans stay aligned with the full variant.
    pub fn plan(
        &mut self,
        sample: &DialogueSample,
        rho: f64,
        augment_history: bool,
        rng: &mut impl Rng,
    ) -> Result<AugmentationPlan> {
        let (history_pos, response_pos) = select_targets(sample, self.vocab, rho, rng);
        let mut plan = AugmentationPlan::empty();
        if augment_history {
            for pos in history_pos {
                let set = self.set_for(sample.history[pos])?;
                plan.history_targets.push((pos, set));
            }
        }
        for pos in response_pos {
            let set = self.set_for(sample.response[pos])?;
            plan.response_targets.push((pos, set));
        }
        Ok(plan)
    }

    /// Build a hard-replacement plan for the `rep` baseline using the same
    /// selection draws as [`PlanBuilder::plan`].
    pub fn replacement_plan(
        &mut self,
        sample: &DialogueSample,
        rho: f64,
        rng: &mut impl Rng,
    ) -> Result<ReplacementPlan> {
        let (history_pos, response_pos) = select_targets(sample, self.vocab, rho, rng);
        let mut plan = ReplacementPlan::default();
        for pos in history_pos {
            let set = self.set_for(sample.history[pos])?;
            let rep = set.raw_entries().get(1).map_or(set.original(), |&(t, _)| t);
            plan.history.push((pos, rep));
        }
        for pos in response_pos {
            let set = self.set_for(sample.response[pos])?;
            let rep = set.raw_entries().get(1).map_or(set.original(), |&(t, _)| t);
            plan.response.push((pos, rep));
        }
        Ok(plan)
    }

    /// Apply a replacement plan, yielding the modified sample.
    pub fn apply_replacements(sample: &DialogueSample, plan: &ReplacementPlan) -> DialogueSample {
        let mut out = sample.clone();
        for &(pos, tok) in &plan.history {
            out.history[pos] = tok;
        }
        for &(pos, tok) in &plan.response {
            out.response[pos] = tok;
        }
        out
    }
}
