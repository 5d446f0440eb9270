//! Prompt parsing, phrase detection, and prompt similarity.
//!
//! Prompts are comma-delimited tag lists with optional emphasis syntax:
//!
//! * `(words:1.3)` sets an explicit multiplier on every word in the group,
//! * `(words)` multiplies by 1.1 and `[words]` by 0.9,
//! * groups nest and their multipliers compose by multiplication.
//!
//! Words are case-folded; commas, colons, brackets, and whitespace separate
//! words, and periods are trimmed from word boundaries.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::ops::Range;

use serde::{Deserialize, Serialize};

const PAREN_FACTOR: f64 = 1.1;
const BRACKET_FACTOR: f64 = 0.9;

/// A normalized word (or merged phrase) with its emphasis weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedToken {
    pub text: String,
    pub weight: f64,
    /// Byte range of the token in the raw prompt.
    pub span: Range<usize>,
}

/// What went wrong in a recoverable parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    UnbalancedBracket,
    MalformedWeight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub kind: WarningKind,
    pub span: Range<usize>,
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            WarningKind::UnbalancedBracket => write!(f, "unbalanced bracket at {:?}", self.span),
            WarningKind::MalformedWeight => write!(f, "malformed weight at {:?}", self.span),
        }
    }
}

/// A parsed prompt.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptTokens {
    pub raw: String,
    pub tokens: Vec<WeightedToken>,
    pub token_set: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ParseWarning>,
}

impl PromptTokens {
    pub fn texts(&self) -> impl Iterator<Item = &str> + '_ {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Renders the tokens back into prompt syntax, writing an explicit
    /// `(text:w)` group for every token whose weight is not 1.
    pub fn to_prompt_string(&self) -> String {
        let mut out = String::new();
        for (i, token) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            if token.weight == 1.0 {
                out.push_str(&token.text);
            } else {
                let _ = write!(out, "({}:{})", token.text, token.weight);
            }
        }
        out
    }
}

/// Multi-word sequences that are treated as a single token.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhraseTable {
    pub units: BTreeSet<Vec<String>>,
}

impl PhraseTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn contains(&self, words: &[&str]) -> bool {
        self.units
            .iter()
            .any(|u| u.len() == words.len() && u.iter().zip(words).all(|(a, b)| a == b))
    }

    fn longest_match(&self, words: &[WeightedToken]) -> Option<usize> {
        self.units
            .iter()
            .filter(|unit| {
                unit.len() <= words.len() && unit.iter().zip(words).all(|(u, w)| *u == w.text)
            })
            .map(Vec::len)
            .max()
    }
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, ',' | ':' | '(' | ')' | '[' | ']')
}

struct Group {
    open: usize,
    close: usize,
    factor: f64,
    /// Byte range of `:weight` consumed by the explicit weight syntax.
    weight_span: Option<Range<usize>>,
}

/// Finds the position of the last `:` directly inside the group (not inside
/// a nested group).
fn top_level_colon(raw: &str, open: usize, close: usize) -> Option<usize> {
    let mut depth = 0i32;
    let mut found = None;
    for (i, c) in raw[open + 1..close].char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ':' if depth == 0 => found = Some(open + 1 + i),
            _ => {}
        }
    }
    found
}

fn scan_groups(raw: &str, warnings: &mut Vec<ParseWarning>) -> Vec<Group> {
    let mut stack: Vec<(usize, char)> = Vec::new();
    let mut groups = Vec::new();
    for (i, c) in raw.char_indices() {
        match c {
            '(' | '[' => stack.push((i, c)),
            ')' | ']' => {
                let want = if c == ')' { '(' } else { '[' };
                match stack.last() {
                    Some(&(open, o)) if o == want => {
                        stack.pop();
                        groups.push(Group {
                            open,
                            close: i,
                            factor: if c == ')' { PAREN_FACTOR } else { BRACKET_FACTOR },
                            weight_span: None,
                        });
                    }
                    _ => warnings.push(ParseWarning {
                        kind: WarningKind::UnbalancedBracket,
                        span: i..i + 1,
                    }),
                }
            }
            _ => {}
        }
    }
    for (open, _) in stack {
        warnings.push(ParseWarning {
            kind: WarningKind::UnbalancedBracket,
            span: open..open + 1,
        });
    }

    for group in groups.iter_mut() {
        if raw.as_bytes()[group.open] != b'(' {
            continue;
        }
        let Some(colon) = top_level_colon(raw, group.open, group.close) else {
            continue;
        };
        match raw[colon + 1..group.close].trim().parse::<f64>() {
            Ok(w) if w.is_finite() && w > 0.0 => {
                group.factor = w;
                group.weight_span = Some(colon..group.close);
            }
            _ => {
                warnings.push(ParseWarning {
                    kind: WarningKind::MalformedWeight,
                    span: group.open..group.close + 1,
                });
                group.factor = 1.0;
            }
        }
    }
    groups
}

fn split_words(raw: &str, groups: &[Group]) -> Vec<WeightedToken> {
    let skipped = |i: usize| {
        groups
            .iter()
            .filter_map(|g| g.weight_span.as_ref())
            .any(|s| s.contains(&i))
    };
    let weight_at = |i: usize| {
        groups
            .iter()
            .filter(|g| g.open < i && i < g.close)
            .map(|g| g.factor)
            .product::<f64>()
    };

    let mut tokens = Vec::new();
    let mut push = |start: usize, end: usize| {
        let word = &raw[start..end];
        let lead = word.len() - word.trim_start_matches('.').len();
        let trimmed = word.trim_matches('.');
        if trimmed.is_empty() {
            return;
        }
        let s = start + lead;
        tokens.push(WeightedToken {
            text: trimmed.to_lowercase(),
            weight: weight_at(s),
            span: s..s + trimmed.len(),
        });
    };

    let mut start = None;
    for (i, c) in raw.char_indices() {
        let boundary = is_separator(c) || skipped(i);
        match (boundary, start) {
            (true, Some(s)) => {
                push(s, i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s, raw.len());
    }
    tokens
}

fn merge_phrases(words: Vec<WeightedToken>, phrases: &PhraseTable) -> Vec<WeightedToken> {
    if phrases.is_empty() {
        return words;
    }
    let mut out = Vec::with_capacity(words.len());
    let mut i = 0;
    while i < words.len() {
        match phrases.longest_match(&words[i..]) {
            Some(n) if n >= 2 => {
                let parts = &words[i..i + n];
                let first = parts[0].weight;
                let weight = if parts.iter().all(|p| p.weight == first) {
                    first
                } else {
                    parts.iter().map(|p| p.weight).sum::<f64>() / n as f64
                };
                let text = parts
                    .iter()
                    .map(|p| p.text.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                out.push(WeightedToken {
                    text,
                    weight,
                    span: parts[0].span.start..parts[n - 1].span.end,
                });
                i += n;
            }
            _ => {
                out.push(words[i].clone());
                i += 1;
            }
        }
    }
    out
}

/// Parses a raw prompt into weighted tokens.
///
/// Malformed emphasis syntax never fails the parse: the offending span is
/// read as plain text and a [`ParseWarning`] is recorded.
pub fn parse_prompt(raw: &str, phrases: &PhraseTable) -> PromptTokens {
    let mut warnings = Vec::new();
    let groups = scan_groups(raw, &mut warnings);
    let tokens = merge_phrases(split_words(raw, &groups), phrases);
    let token_set = tokens.iter().map(|t| t.text.clone()).collect();
    warnings.sort_by_key(|w| w.span.start);
    PromptTokens {
        raw: raw.to_string(),
        tokens,
        token_set,
        warnings,
    }
}

/// Set-based Jaccard similarity of two prompts; 1 when both are empty.
pub fn jaccard_similarity(a: &PromptTokens, b: &PromptTokens) -> f64 {
    let inter = a.token_set.intersection(&b.token_set).count();
    let union = a.token_set.len() + b.token_set.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pairwise Jaccard similarities, row-major `n × n`.
pub fn similarity_matrix(prompts: &[PromptTokens]) -> Vec<Vec<f64>> {
    let n = prompts.len();
    let mut m = alloc::vec![alloc::vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = jaccard_similarity(&prompts[i], &prompts[j]);
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    m
}

/// Finds word sequences that always appear together across the corpus.
///
/// A unit is a maximal run of two or more words where each word is always
/// followed by the next one and each next one is always preceded by the
/// previous, and which occurs in at least two prompts. Words only count as
/// adjacent when nothing but whitespace separates them, so units never span
/// a comma or a weight group boundary.
pub fn detect_phrases(corpus: &[PromptTokens]) -> PhraseTable {
    // (prompt, position) of every occurrence of every word.
    let mut occurrences: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for (p, prompt) in corpus.iter().enumerate() {
        for (i, token) in prompt.tokens.iter().enumerate() {
            occurrences.entry(token.text.as_str()).or_default().push((p, i));
        }
    }
    let text_at = |p: usize, i: usize| corpus[p].tokens.get(i).map(|t| t.text.as_str());
    let joined = |p: usize, i: usize| {
        let tokens = &corpus[p].tokens;
        match (tokens.get(i), tokens.get(i + 1)) {
            (Some(a), Some(b)) => corpus[p].raw[a.span.end..b.span.start].chars().all(char::is_whitespace),
            _ => false,
        }
    };

    let successor = |word: &str| -> Option<&str> {
        let occ = &occurrences[word];
        let (p0, i0) = occ[0];
        let next = text_at(p0, i0 + 1)?;
        if next == word || !occ.iter().all(|&(p, i)| text_at(p, i + 1) == Some(next) && joined(p, i)) {
            return None;
        }
        occurrences[next]
            .iter()
            .all(|&(p, i)| i > 0 && text_at(p, i - 1) == Some(word))
            .then_some(next)
    };

    let glued: BTreeMap<&str, &str> = occurrences
        .keys()
        .filter_map(|&w| successor(w).map(|n| (w, n)))
        .collect();
    let has_pred: BTreeSet<&str> = glued.values().copied().collect();

    let mut units = BTreeSet::new();
    for &head in glued.keys() {
        if has_pred.contains(head) {
            continue;
        }
        let support = occurrences[head]
            .iter()
            .map(|&(p, _)| p)
            .collect::<BTreeSet<_>>()
            .len();
        if support < 2 {
            continue;
        }
        let mut unit = alloc::vec![head.to_string()];
        let mut cur = head;
        while let Some(&next) = glued.get(cur) {
            if unit.len() > corpus.iter().map(|p| p.len()).max().unwrap_or(0) {
                break;
            }
            unit.push(next.to_string());
            cur = next;
        }
        units.insert(unit);
    }
    PhraseTable { units }
}

/// Parses every prompt, detects phrase units over the whole set, and
/// reparses with those units merged.
pub fn parse_corpus<S: AsRef<str>>(raws: &[S]) -> (Vec<PromptTokens>, PhraseTable) {
    let empty = PhraseTable::new();
    let plain: Vec<_> = raws.iter().map(|r| parse_prompt(r.as_ref(), &empty)).collect();
    let phrases = detect_phrases(&plain);
    if phrases.is_empty() {
        return (plain, phrases);
    }
    let merged = raws
        .iter()
        .map(|r| parse_prompt(r.as_ref(), &phrases))
        .collect();
    (merged, phrases)
}
