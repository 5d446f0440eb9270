//! Edge derivation for the Image Variant Graph.
//!
//! Every pair of sufficiently similar prompts contributes one edge per
//! (word modification, source image, target image), initially weighted
//! `1 / (n1 · n2 · m)`. Edges sharing a word, an action, and the clusters of
//! both endpoints are bundled; each edge then takes a share of its image
//! pair proportional to the weight of its bundle. Equal-weight edges between
//! the same two images are merged, and bundles below `w_min` are hidden.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::{diff_prompts, Action, PromptDiff};
use crate::prompt::{jaccard_similarity, PromptTokens};

/// Absolute tolerance for treating two weights as equal.
pub const WEIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    /// Prompt pairs with Jaccard similarity at or above this are compared.
    pub s_min: f64,
    /// Manual bundle threshold; `None` derives it from `n_e`.
    pub w_min: Option<f64>,
    /// Maximum number of visible bundles in automatic mode.
    pub n_e: usize,
    pub redistribution_passes: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            s_min: 0.6,
            w_min: None,
            n_e: 12,
            redistribution_passes: 1,
        }
    }
}

/// One image of one step. `temporal_order` increases with step creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageNode {
    pub step: usize,
    pub slot: usize,
    pub temporal_order: usize,
}

/// Lays out one node per image, step by step.
pub fn image_nodes(images_per_step: &[usize]) -> (Vec<ImageNode>, Vec<Vec<usize>>) {
    let mut nodes = Vec::new();
    let mut by_step = Vec::with_capacity(images_per_step.len());
    for (step, &count) in images_per_step.iter().enumerate() {
        let ids = (0..count)
            .map(|slot| {
                nodes.push(ImageNode {
                    step,
                    slot,
                    temporal_order: step,
                });
                nodes.len() - 1
            })
            .collect();
        by_step.push(ids);
    }
    (nodes, by_step)
}

/// Comparison of two similar prompts, `src` earlier than `tgt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiff {
    pub src_step: usize,
    pub tgt_step: usize,
    pub similarity: f64,
    pub diff: PromptDiff,
}

/// Diffs every prompt pair whose similarity reaches `s_min`.
pub fn compare_prompts(prompts: &[PromptTokens], s_min: f64) -> Vec<PairDiff> {
    let mut out = Vec::new();
    for i in 0..prompts.len() {
        for j in i + 1..prompts.len() {
            let similarity = jaccard_similarity(&prompts[i], &prompts[j]);
            if similarity >= s_min {
                out.push(PairDiff {
                    src_step: i,
                    tgt_step: j,
                    similarity,
                    diff: diff_prompts(&prompts[i], &prompts[j]),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub word: String,
    pub action: Action,
    pub src: usize,
    pub tgt: usize,
    pub weight: f64,
    /// `1 / (n1 · n2 · m)` before redistribution.
    pub initial_weight: f64,
}

/// One edge per (op, source image, target image) for every compared pair.
pub fn derive_edges(pairs: &[PairDiff], images_by_step: &[Vec<usize>]) -> Vec<Edge> {
    let mut edges = Vec::new();
    for pair in pairs {
        let m = pair.diff.m();
        let srcs = &images_by_step[pair.src_step];
        let tgts = &images_by_step[pair.tgt_step];
        if m == 0 || srcs.is_empty() || tgts.is_empty() {
            continue;
        }
        let w = 1.0 / (srcs.len() * tgts.len() * m) as f64;
        for op in &pair.diff.ops {
            for &src in srcs {
                for &tgt in tgts {
                    edges.push(Edge {
                        word: op.word.clone(),
                        action: op.action,
                        src,
                        tgt,
                        weight: w,
                        initial_weight: w,
                    });
                }
            }
        }
    }
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundledEdge {
    pub word: String,
    pub action: Action,
    pub src_cluster: usize,
    pub tgt_cluster: usize,
    pub weight: f64,
    /// Indices into the edge list.
    pub members: Vec<usize>,
    pub visible: bool,
}

/// Groups edges by `(word, action, C(src), C(tgt))`.
///
/// Returns the bundles in key order and, per edge, the index of its bundle.
pub fn bundle(edges: &[Edge], clusters: &[usize]) -> (Vec<BundledEdge>, Vec<usize>) {
    let mut groups: BTreeMap<(&str, Action, usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        groups
            .entry((e.word.as_str(), e.action, clusters[e.src], clusters[e.tgt]))
            .or_default()
            .push(i);
    }
    let mut edge_bundle = vec![0; edges.len()];
    let bundles = groups
        .into_iter()
        .enumerate()
        .map(|(b, ((word, action, src_cluster, tgt_cluster), members))| {
            for &m in &members {
                edge_bundle[m] = b;
            }
            BundledEdge {
                word: word.into(),
                action,
                src_cluster,
                tgt_cluster,
                weight: members.iter().map(|&m| edges[m].weight).sum(),
                members,
                visible: true,
            }
        })
        .collect();
    (bundles, edge_bundle)
}

fn resum(edges: &[Edge], bundles: &mut [BundledEdge]) {
    for b in bundles.iter_mut() {
        b.weight = b.members.iter().map(|&m| edges[m].weight).sum();
    }
}

/// Edge indices grouped by `(src, tgt)` image pair.
pub fn edges_by_pair(edges: &[Edge]) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut pairs: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        pairs.entry((e.src, e.tgt)).or_default().push(i);
    }
    pairs
}

/// Reweights each edge to `W(E) / Σ W(E')` over the edges of its image
/// pair, then recomputes the bundle sums. Runs `passes` times.
pub fn redistribute(edges: &mut [Edge], bundles: &mut [BundledEdge], edge_bundle: &[usize], passes: usize) {
    let pairs = edges_by_pair(edges);
    for _ in 0..passes {
        let mut next = vec![0.0; edges.len()];
        for members in pairs.values() {
            let total: f64 = members.iter().map(|&e| bundles[edge_bundle[e]].weight).sum();
            for &e in members {
                next[e] = bundles[edge_bundle[e]].weight / total;
            }
        }
        for (e, w) in edges.iter_mut().zip(next) {
            e.weight = w;
        }
        resum(edges, bundles);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modification {
    pub word: String,
    pub action: Action,
    pub weight_share: f64,
    /// How many merged edges carried this same modification.
    pub frequency: usize,
}

/// Several equal-weight edges between one image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedEdge {
    pub src: usize,
    pub tgt: usize,
    pub modifications: Vec<Modification>,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairEdge {
    Single { edge: usize },
    Merged(MergedEdge),
}

/// Collapses edges of equal weight (within [`WEIGHT_EPS`]) between the same
/// image pair into one [`MergedEdge`].
pub fn merge_equal(edges: &[Edge]) -> Vec<PairEdge> {
    let mut out = Vec::new();
    for members in edges_by_pair(edges).values() {
        let mut sorted = members.clone();
        sorted.sort_by(|&a, &b| edges[b].weight.total_cmp(&edges[a].weight).then(a.cmp(&b)));
        let mut start = 0;
        while start < sorted.len() {
            let head = edges[sorted[start]].weight;
            let mut end = start + 1;
            while end < sorted.len() && (head - edges[sorted[end]].weight).abs() <= WEIGHT_EPS {
                end += 1;
            }
            let mut group = sorted[start..end].to_vec();
            group.sort_unstable();
            if group.len() == 1 {
                out.push(PairEdge::Single { edge: group[0] });
            } else {
                let mut mods: Vec<Modification> = Vec::new();
                for &e in &group {
                    let edge = &edges[e];
                    match mods
                        .iter_mut()
                        .find(|m| m.word == edge.word && m.action == edge.action)
                    {
                        Some(m) => m.frequency += 1,
                        None => mods.push(Modification {
                            word: edge.word.clone(),
                            action: edge.action,
                            weight_share: edge.weight,
                            frequency: 1,
                        }),
                    }
                }
                out.push(PairEdge::Merged(MergedEdge {
                    src: edges[group[0]].src,
                    tgt: edges[group[0]].tgt,
                    modifications: mods,
                    members: group,
                }));
            }
            start = end;
        }
    }
    out
}

/// Hides low-weight bundles and returns the effective threshold.
///
/// In automatic mode the threshold is the weight of the `n_e`-th heaviest
/// bundle; when bundles tied at that weight would push the visible count
/// past `n_e`, the threshold moves above the tie.
pub fn filter(bundles: &mut [BundledEdge], params: &GraphParams) -> f64 {
    let w_min = match params.w_min {
        Some(w) => w,
        None => auto_w_min(bundles.iter().map(|b| b.weight), params.n_e),
    };
    for b in bundles.iter_mut() {
        b.visible = b.weight >= w_min;
    }
    w_min
}

fn auto_w_min(weights: impl Iterator<Item = f64>, n_e: usize) -> f64 {
    let mut sorted: Vec<f64> = weights.collect();
    if sorted.len() <= n_e {
        return 0.0;
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    if n_e == 0 {
        return next_above(sorted[0]);
    }
    let cutoff = sorted[n_e - 1];
    if sorted[n_e] < cutoff - WEIGHT_EPS {
        return cutoff;
    }
    // Ties straddle the cap: the next distinct weight above the tie, if any.
    sorted[..n_e]
        .iter()
        .rev()
        .copied()
        .find(|&w| w > cutoff + WEIGHT_EPS)
        .unwrap_or_else(|| next_above(sorted[0]))
}

fn next_above(w: f64) -> f64 {
    if w.is_finite() && w >= 0.0 {
        f64::from_bits(w.to_bits() + 1)
    } else {
        w
    }
}

/// Sum of incident edge weights per node.
pub fn node_weights(node_count: usize, edges: &[Edge]) -> Vec<f64> {
    let mut w = vec![0.0; node_count];
    for e in edges {
        w[e.src] += e.weight;
        w[e.tgt] += e.weight;
    }
    w
}

/// The whole edge pipeline, from diffs to filtered bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantGraph {
    pub edges: Vec<Edge>,
    pub edge_bundle: Vec<usize>,
    pub bundles: Vec<BundledEdge>,
    pub pair_edges: Vec<PairEdge>,
    pub node_weights: Vec<f64>,
    pub effective_w_min: f64,
}

pub fn build_graph(pairs: &[PairDiff], images_by_step: &[Vec<usize>], clusters: &[usize], params: &GraphParams) -> VariantGraph {
    let mut edges = derive_edges(pairs, images_by_step);
    let (mut bundles, edge_bundle) = bundle(&edges, clusters);
    redistribute(&mut edges, &mut bundles, &edge_bundle, params.redistribution_passes);
    let pair_edges = merge_equal(&edges);
    let effective_w_min = filter(&mut bundles, params);
    let node_weights = node_weights(clusters.len(), &edges);
    VariantGraph {
        edges,
        edge_bundle,
        bundles,
        pair_edges,
        node_weights,
        effective_w_min,
    }
}
