//! Word-level comparison of two prompts.
//!
//! The comparison runs in three steps: a Myers alignment over token texts
//! finds inserted and removed words, words that were both removed and
//! inserted are collapsed into reorders, and the weights of aligned words are
//! compared.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::prompt::PromptTokens;

/// Modification action between two prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Insert,
    Remove,
    Reorder,
    IncreaseWeight,
    DecreaseWeight,
}

impl Action {
    /// Additions are insertions and weight increases.
    pub fn is_addition(self) -> bool {
        matches!(self, Action::Insert | Action::IncreaseWeight)
    }

    pub fn is_subtraction(self) -> bool {
        matches!(self, Action::Remove | Action::DecreaseWeight)
    }

    pub fn is_weight_change(self) -> bool {
        matches!(self, Action::IncreaseWeight | Action::DecreaseWeight)
    }

    /// Short label of a word change, e.g. `+1girl`, `-1boy`, `~cat`.
    pub fn label(self, word: &str) -> String {
        match self {
            Action::Insert => alloc::format!("+{word}"),
            Action::Remove => alloc::format!("-{word}"),
            Action::Reorder => alloc::format!("~{word}"),
            Action::IncreaseWeight => alloc::format!("{word}+"),
            Action::DecreaseWeight => alloc::format!("{word}-"),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Insert => "insert",
            Action::Remove => "remove",
            Action::Reorder => "reorder",
            Action::IncreaseWeight => "increase_weight",
            Action::DecreaseWeight => "decrease_weight",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOp {
    pub word: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_after: Option<f64>,
}

impl EditOp {
    fn plain(word: &str, action: Action) -> Self {
        EditOp {
            word: word.into(),
            action,
            weight_before: None,
            weight_after: None,
        }
    }
}

/// Word-level modifications between two prompts. `m` is the number of ops.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptDiff {
    pub ops: Vec<EditOp>,
}

impl PromptDiff {
    pub fn m(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// Result of aligning two token sequences.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    /// `(index in a, index in b)` of words kept by the alignment, in order.
    pub matches: Vec<(usize, usize)>,
    /// Indices into `a` of removed words, ascending.
    pub removed: Vec<usize>,
    /// Indices into `b` of inserted words, ascending.
    pub inserted: Vec<usize>,
}

impl Alignment {
    /// Number of insertions plus removals.
    pub fn cost(&self) -> usize {
        self.removed.len() + self.inserted.len()
    }
}

/// Minimal insert/delete alignment of two sequences (Myers, O((N+M)·D)).
pub fn myers_align_by<T, U, F>(a: &[T], b: &[U], eq: F) -> Alignment
where
    F: Fn(&T, &U) -> bool,
{
    let n = a.len() as isize;
    let m = b.len() as isize;
    let max = (n + m) as usize;
    let offset = max as isize + 1;
    let mut v = vec![0isize; 2 * max + 3];
    let mut trace: Vec<Vec<isize>> = Vec::new();

    'search: for d in 0..=max as isize {
        trace.push(v.clone());
        let mut k = -d;
        while k <= d {
            let idx = (k + offset) as usize;
            let mut x = if k == -d || (k != d && v[idx - 1] < v[idx + 1]) {
                v[idx + 1]
            } else {
                v[idx - 1] + 1
            };
            let mut y = x - k;
            while x < n && y < m && eq(&a[x as usize], &b[y as usize]) {
                x += 1;
                y += 1;
            }
            v[idx] = x;
            if x >= n && y >= m {
                break 'search;
            }
            k += 2;
        }
    }

    // Walk back from (n, m) through the saved frontiers.
    let mut out = Alignment::default();
    let (mut x, mut y) = (n, m);
    for d in (0..trace.len() as isize).rev() {
        let v = &trace[d as usize];
        let k = x - y;
        let idx = (k + offset) as usize;
        let prev_k = if k == -d || (k != d && v[idx - 1] < v[idx + 1]) {
            k + 1
        } else {
            k - 1
        };
        let prev_x = if d == 0 { 0 } else { v[(prev_k + offset) as usize] };
        let prev_y = prev_x - prev_k;
        while x > prev_x.max(0) && y > prev_y.max(0) && x - y == k {
            x -= 1;
            y -= 1;
            out.matches.push((x as usize, y as usize));
        }
        if d == 0 {
            break;
        }
        if x == prev_x {
            y -= 1;
            out.inserted.push(y as usize);
        } else {
            x -= 1;
            out.removed.push(x as usize);
        }
    }
    out.matches.reverse();
    out.removed.reverse();
    out.inserted.reverse();
    out
}

/// Aligns two prompts by token text; weights are ignored here.
pub fn myers_align(a: &PromptTokens, b: &PromptTokens) -> Alignment {
    myers_align_by(&a.tokens, &b.tokens, |x, y| x.text == y.text)
}

/// Turns the unmatched words of an alignment into insert/remove/reorder ops.
///
/// Removed and inserted copies of the same word are paired greedily in
/// positional order, one-to-one; each pair becomes a single reorder.
pub fn detect_reorders(a: &PromptTokens, b: &PromptTokens, alignment: &Alignment) -> Vec<EditOp> {
    let mut paired = vec![false; alignment.inserted.len()];
    let mut removes = Vec::new();
    let mut reorders = Vec::new();
    for &ri in &alignment.removed {
        let word = &a.tokens[ri].text;
        let hit = alignment
            .inserted
            .iter()
            .enumerate()
            .find(|&(slot, &ii)| !paired[slot] && b.tokens[ii].text == *word);
        match hit {
            Some((slot, _)) => {
                paired[slot] = true;
                reorders.push(EditOp::plain(word, Action::Reorder));
            }
            None => removes.push(EditOp::plain(word, Action::Remove)),
        }
    }
    let inserts = alignment
        .inserted
        .iter()
        .zip(&paired)
        .filter(|(_, &p)| !p)
        .map(|(&ii, _)| EditOp::plain(&b.tokens[ii].text, Action::Insert));

    removes.into_iter().chain(inserts).chain(reorders).collect()
}

/// Weight changes between aligned words.
pub fn compare_weights(a: &PromptTokens, b: &PromptTokens, matches: &[(usize, usize)]) -> Vec<EditOp> {
    matches
        .iter()
        .filter_map(|&(i, j)| {
            let (ta, tb) = (&a.tokens[i], &b.tokens[j]);
            let action = if tb.weight > ta.weight {
                Action::IncreaseWeight
            } else if tb.weight < ta.weight {
                Action::DecreaseWeight
            } else {
                return None;
            };
            Some(EditOp {
                word: ta.text.clone(),
                action,
                weight_before: Some(ta.weight),
                weight_after: Some(tb.weight),
            })
        })
        .collect()
}

/// Full three-step comparison of two prompts.
pub fn diff_prompts(a: &PromptTokens, b: &PromptTokens) -> PromptDiff {
    let alignment = myers_align(a, b);
    let mut ops = detect_reorders(a, b, &alignment);
    ops.extend(compare_weights(a, b, &alignment.matches));
    PromptDiff { ops }
}
