//! Minimum-edit-distance alignment between token sequences; the primitive
//! beneath both CER scoring and ROVER network construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textnorm::{TokenMode, TokenSequence};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlignmentError {
    #[error("token mode mismatch: reference is {reference:?}, hypothesis is {hypothesis:?}")]
    ModeMismatch {
        reference: TokenMode,
        hypothesis: TokenMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EditOpKind {
    Cor,
    Sub,
    Ins,
    Del,
}

/// One step of an edit script. COR/SUB carry both tokens, INS only the
/// hypothesis token, DEL only the reference token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditOpKind,
    pub ref_token: Option<String>,
    pub hyp_token: Option<String>,
}

/// An ordered edit script together with its unit-cost distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    ops: Vec<EditOp>,
    distance: usize,
}

impl Alignment {
    pub fn ops(&self) -> &[EditOp] {
        &self.ops
    }

    pub fn distance(&self) -> usize {
        self.distance
    }

    /// Reference-side projection of the edit script.
    pub fn ref_tokens(&self) -> Vec<&str> {
        self.ops
            .iter()
            .filter_map(|op| op.ref_token.as_deref())
            .collect()
    }

    /// Hypothesis-side projection of the edit script.
    pub fn hyp_tokens(&self) -> Vec<&str> {
        self.ops
            .iter()
            .filter_map(|op| op.hyp_token.as_deref())
            .collect()
    }
}

/// Edit counts in SCTK's accounting: `ref_len = hits + subs + dels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub hits: usize,
    pub subs: usize,
    pub dels: usize,
    pub ins: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.subs + self.dels + self.ins
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Diag,
    Del,
    Ins,
}

/// Aligns `hypothesis` against `reference` under unit costs.
///
/// Among minimal alignments, ties are broken deterministically at each DP
/// cell by preferring COR/SUB over DEL over INS, so alignments (and the
/// ROVER networks built from them) are reproducible across runs.
pub fn align(
    reference: &TokenSequence,
    hypothesis: &TokenSequence,
) -> Result<Alignment, AlignmentError> {
    if reference.mode() != hypothesis.mode() {
        return Err(AlignmentError::ModeMismatch {
            reference: reference.mode(),
            hypothesis: hypothesis.mode(),
        });
    }
    let r = reference.tokens();
    let h = hypothesis.tokens();
    let (steps, distance) = edit_dp(r.len(), h.len(), |i, j| r[i] == h[j]);
    let ops = backtrace(&steps, r, h);
    Ok(Alignment { ops, distance })
}

/// Shared DP kernel: fills the cost table for an `n x m` alignment where
/// `matches(i, j)` reports whether ref item `i` equals hyp item `j`, and
/// returns the chosen step per cell plus the final distance.
fn edit_dp<F: Fn(usize, usize) -> bool>(
    n: usize,
    m: usize,
    matches: F,
) -> (StepGrid, usize) {
    let mut steps = StepGrid::new(n, m);
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut curr = vec![0usize; m + 1];
    for j in 1..=m {
        steps.set(0, j, Step::Ins);
    }
    for i in 1..=n {
        curr[0] = i;
        steps.set(i, 0, Step::Del);
        for j in 1..=m {
            let diag = prev[j - 1] + usize::from(!matches(i - 1, j - 1));
            let del = prev[j] + 1;
            let ins = curr[j - 1] + 1;
            // Tie order: COR/SUB, then DEL, then INS.
            let (cost, step) = if diag <= del && diag <= ins {
                (diag, Step::Diag)
            } else if del <= ins {
                (del, Step::Del)
            } else {
                (ins, Step::Ins)
            };
            curr[j] = cost;
            steps.set(i, j, step);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let distance = prev[m];
    (steps, distance)
}

struct StepGrid {
    cols: usize,
    cells: Vec<Step>,
}

impl StepGrid {
    fn new(n: usize, m: usize) -> Self {
        Self {
            cols: m + 1,
            cells: vec![Step::Diag; (n + 1) * (m + 1)],
        }
    }

    fn set(&mut self, i: usize, j: usize, step: Step) {
        self.cells[i * self.cols + j] = step;
    }

    fn get(&self, i: usize, j: usize) -> Step {
        self.cells[i * self.cols + j]
    }

    /// Walks the recorded steps from `(n, m)` back to the origin and
    /// yields `(ref_index, hyp_index, step)` in forward order.
    fn path(&self, n: usize, m: usize) -> Vec<(usize, usize, Step)> {
        let (mut i, mut j) = (n, m);
        let mut path = Vec::with_capacity(n + m);
        while i > 0 || j > 0 {
            match self.get(i, j) {
                Step::Diag => {
                    i -= 1;
                    j -= 1;
                    path.push((i, j, Step::Diag));
                }
                Step::Del => {
                    i -= 1;
                    path.push((i, j, Step::Del));
                }
                Step::Ins => {
                    j -= 1;
                    path.push((i, j, Step::Ins));
                }
            }
        }
        path.reverse();
        path
    }
}

fn backtrace(steps: &StepGrid, r: &[String], h: &[String]) -> Vec<EditOp> {
    steps
        .path(r.len(), h.len())
        .into_iter()
        .map(|(i, j, step)| match step {
            Step::Diag => {
                let (rt, ht) = (&r[i], &h[j]);
                EditOp {
                    kind: if rt == ht { EditOpKind::Cor } else { EditOpKind::Sub },
                    ref_token: Some(rt.clone()),
                    hyp_token: Some(ht.clone()),
                }
            }
            Step::Del => EditOp {
                kind: EditOpKind::Del,
                ref_token: Some(r[i].clone()),
                hyp_token: None,
            },
            Step::Ins => EditOp {
                kind: EditOpKind::Ins,
                ref_token: None,
                hyp_token: Some(h[j].clone()),
            },
        })
        .collect()
}

/// Tallies the edit script into hit/substitution/deletion/insertion counts.
pub fn edit_counts(alignment: &Alignment) -> EditCounts {
    let mut counts = EditCounts::default();
    for op in alignment.ops() {
        match op.kind {
            EditOpKind::Cor => counts.hits += 1,
            EditOpKind::Sub => counts.subs += 1,
            EditOpKind::Del => counts.dels += 1,
            EditOpKind::Ins => counts.ins += 1,
        }
    }
    counts.ref_len = counts.hits + counts.subs + counts.dels;
    counts
}
