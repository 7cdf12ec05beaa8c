//! ROVER combination: iterative alignment of multiple hypotheses into a
//! token transition network, followed by per-slot voting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textnorm::{TokenMode, TokenSequence};

#[derive(Debug, Error, PartialEq)]
pub enum RoverError {
    #[error("cannot combine an empty hypothesis list")]
    EmptyInput,
    #[error("all hypotheses must share one token mode")]
    ModeMismatch,
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("expected one confidence per hypothesis ({hyps}), got {confidences}")]
    ConfidenceCountMismatch { hyps: usize, confidences: usize },
}

/// One arc of a slot: a token (or NULL), how many inputs voted for it, the
/// summed confidence of those votes, and the earliest input that put the
/// arc there (the vote tie-breaker).
#[derive(Debug, Clone, PartialEq)]
pub struct NetArc {
    pub token: Option<String>,
    pub votes: u32,
    pub conf_sum: f64,
    pub first_input: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Slot {
    arcs: Vec<NetArc>,
}

impl Slot {
    pub fn arcs(&self) -> &[NetArc] {
        &self.arcs
    }

    pub fn total_votes(&self) -> u32 {
        self.arcs.iter().map(|a| a.votes).sum()
    }

    fn votes_for(&self, token: Option<&str>) -> u32 {
        self.arcs
            .iter()
            .find(|a| a.token.as_deref() == token)
            .map_or(0, |a| a.votes)
    }

    fn add_vote(&mut self, token: Option<&str>, conf: f64, input: usize, count: u32) {
        if let Some(arc) = self.arcs.iter_mut().find(|a| a.token.as_deref() == token) {
            arc.votes += count;
            arc.conf_sum += conf;
        } else {
            self.arcs.push(NetArc {
                token: token.map(String::from),
                votes: count,
                conf_sum: conf,
                first_input: input,
            });
        }
    }
}

/// Slot/arc structure produced by iteratively aligning hypotheses; every
/// input contributes exactly one arc per slot, so vote counts per slot sum
/// to the number of combined inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionNetwork {
    slots: Vec<Slot>,
    num_inputs: usize,
    mode: TokenMode,
}

impl TransitionNetwork {
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }
}

/// How slot votes are scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteOptions {
    /// Weight of vote frequency against confidence; 1.0 is pure frequency
    /// voting, appropriate when inputs carry no confidence scores.
    pub alpha: f64,
    /// Confidence assigned to NULL arcs when alpha < 1.
    pub null_confidence: f64,
    pub tie_break: TieBreak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Prefer non-NULL arcs, then the arc first contributed by the
    /// earliest input. Keeps 50/50 splits from deleting content.
    #[default]
    NonNullFirstInput,
}

impl Default for VoteOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            null_confidence: 0.0,
            tie_break: TieBreak::NonNullFirstInput,
        }
    }
}

impl VoteOptions {
    pub fn validate(&self) -> Result<(), RoverError> {
        if !(0.0..=1.0).contains(&self.alpha) || self.alpha.is_nan() {
            return Err(RoverError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }
}

/// Builds a transition network from hypotheses, all with confidence 1.0.
pub fn build_wtn(hyps: &[TokenSequence]) -> Result<TransitionNetwork, RoverError> {
    let confs = vec![1.0; hyps.len()];
    build_wtn_weighted(hyps, &confs)
}

/// Builds a transition network with a per-hypothesis confidence attached
/// to every vote that hypothesis casts.
///
/// The network is seeded from `hyps[0]`; each subsequent hypothesis is
/// aligned against the current slots with the same DP and tie-breaking as
/// [`crate::alignment::align`], where a token matches a slot when it
/// equals any arc already in it. DEL steps vote NULL into the skipped
/// slot; INS steps open a new slot in which all earlier inputs are NULL.
pub fn build_wtn_weighted(
    hyps: &[TokenSequence],
    confidences: &[f64],
) -> Result<TransitionNetwork, RoverError> {
    let first = hyps.first().ok_or(RoverError::EmptyInput)?;
    if hyps.iter().any(|h| h.mode() != first.mode()) {
        return Err(RoverError::ModeMismatch);
    }
    if confidences.len() != hyps.len() {
        return Err(RoverError::ConfidenceCountMismatch {
            hyps: hyps.len(),
            confidences: confidences.len(),
        });
    }

    let mut slots: Vec<Slot> = first
        .tokens()
        .iter()
        .map(|t| {
            let mut slot = Slot::default();
            slot.add_vote(Some(t), confidences[0], 0, 1);
            slot
        })
        .collect();

    for (k, hyp) in hyps.iter().enumerate().skip(1) {
        slots = merge_hypothesis(slots, hyp.tokens(), confidences[k], k);
    }

    Ok(TransitionNetwork {
        slots,
        num_inputs: hyps.len(),
        mode: first.mode(),
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Diag,
    Del,
    Ins,
}

/// Aligns one hypothesis against the current slots.
///
/// Unit edit costs, as in token-vs-token alignment; a token matches a slot
/// when the slot already carries it. Among minimum-cost paths the one that
/// runs through the most already-cast votes wins (counting the matched
/// token arcs and, on skipped slots, their NULL arcs), then COR/SUB is
/// preferred over DEL over INS. The vote-weighted tie-break keeps repeated
/// hypotheses aligning the same way as the network grows, which is what
/// lets a majority of identical inputs reconverge slot by slot.
fn align_to_slots(slots: &[Slot], tokens: &[String]) -> Vec<Step> {
    let n = slots.len();
    let m = tokens.len();
    let cols = m + 1;
    // (cost, path votes) per cell, lexicographic: min cost, then max votes.
    let mut cost = vec![0u32; (n + 1) * cols];
    let mut votes = vec![0u64; (n + 1) * cols];
    let mut steps = vec![Step::Diag; (n + 1) * cols];
    for j in 1..=m {
        cost[j] = j as u32;
        steps[j] = Step::Ins;
    }
    for i in 1..=n {
        cost[i * cols] = cost[(i - 1) * cols] + 1;
        votes[i * cols] = votes[(i - 1) * cols] + u64::from(slots[i - 1].votes_for(None));
        steps[i * cols] = Step::Del;
        for j in 1..=m {
            let here = i * cols + j;
            let matched = slots[i - 1].votes_for(Some(&tokens[j - 1]));
            let diag = (
                cost[here - cols - 1] + u32::from(matched == 0),
                votes[here - cols - 1] + u64::from(matched),
            );
            let del = (
                cost[here - cols] + 1,
                votes[here - cols] + u64::from(slots[i - 1].votes_for(None)),
            );
            let ins = (cost[here - 1] + 1, votes[here - 1]);
            let mut best = (diag, Step::Diag);
            for candidate in [(del, Step::Del), (ins, Step::Ins)] {
                let ((c, v), _) = candidate;
                let ((bc, bv), _) = best;
                if c < bc || (c == bc && v > bv) {
                    best = candidate;
                }
            }
            let ((c, v), step) = best;
            cost[here] = c;
            votes[here] = v;
            steps[here] = step;
        }
    }
    let (mut i, mut j) = (n, m);
    let mut path = Vec::with_capacity(n + m);
    while i > 0 || j > 0 {
        let step = steps[i * cols + j];
        match step {
            Step::Diag => {
                i -= 1;
                j -= 1;
            }
            Step::Del => i -= 1,
            Step::Ins => j -= 1,
        }
        path.push(step);
    }
    path.reverse();
    path
}

fn merge_hypothesis(slots: Vec<Slot>, tokens: &[String], conf: f64, input: usize) -> Vec<Slot> {
    let path = align_to_slots(&slots, tokens);
    let mut merged = Vec::with_capacity(path.len());
    let mut old = slots.into_iter();
    let mut next_token = 0usize;
    let prior_inputs = input as u32;
    for step in path {
        match step {
            Step::Diag => {
                let mut slot = old.next().expect("path consumes each slot once");
                slot.add_vote(Some(&tokens[next_token]), conf, input, 1);
                next_token += 1;
                merged.push(slot);
            }
            Step::Del => {
                let mut slot = old.next().expect("path consumes each slot once");
                slot.add_vote(None, 0.0, input, 1);
                merged.push(slot);
            }
            Step::Ins => {
                let mut slot = Slot::default();
                // Every earlier input is absent from a freshly opened slot.
                slot.add_vote(None, 0.0, 0, prior_inputs);
                slot.add_vote(Some(&tokens[next_token]), conf, input, 1);
                next_token += 1;
                merged.push(slot);
            }
        }
    }
    merged
}

/// Picks each slot's winning arc and drops NULL winners.
///
/// Arc score: `alpha * votes/num_inputs + (1 - alpha) * confidence`, where
/// a token arc's confidence is the mean of its votes' confidences and a
/// NULL arc uses `null_confidence`. Ties go to non-NULL arcs, then to the
/// arc first contributed by the earliest input.
pub fn vote(wtn: &TransitionNetwork, opts: &VoteOptions) -> TokenSequence {
    let n = wtn.num_inputs as f64;
    let mut tokens = Vec::with_capacity(wtn.slots.len());
    for slot in &wtn.slots {
        let mut best: Option<(&NetArc, f64)> = None;
        for arc in slot.arcs() {
            let confidence = match arc.token {
                Some(_) => arc.conf_sum / arc.votes as f64,
                None => opts.null_confidence,
            };
            let score = opts.alpha * (arc.votes as f64 / n) + (1.0 - opts.alpha) * confidence;
            let wins = match best {
                None => true,
                Some((cur, cur_score)) => {
                    score > cur_score
                        || (score == cur_score && beats_on_tie(arc, cur, opts.tie_break))
                }
            };
            if wins {
                best = Some((arc, score));
            }
        }
        if let Some((arc, _)) = best {
            if let Some(token) = &arc.token {
                tokens.push(token.clone());
            }
        }
    }
    TokenSequence::from_tokens_unchecked(tokens, wtn.mode)
}

fn beats_on_tie(candidate: &NetArc, incumbent: &NetArc, policy: TieBreak) -> bool {
    match policy {
        TieBreak::NonNullFirstInput => {
            match (candidate.token.is_some(), incumbent.token.is_some()) {
                (true, false) => true,
                (false, true) => false,
                _ => candidate.first_input < incumbent.first_input,
            }
        }
    }
}

/// Builds the network and votes in one step.
pub fn rover_combine(
    hyps: &[TokenSequence],
    opts: &VoteOptions,
) -> Result<TokenSequence, RoverError> {
    opts.validate()?;
    let wtn = build_wtn(hyps)?;
    Ok(vote(&wtn, opts))
}
