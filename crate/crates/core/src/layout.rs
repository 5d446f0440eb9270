//! Renderable layout: node placement, word glyphs, bubbles, exploration
//! stages, and the navigation mini-map.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::diff::Action;
use crate::embedding::{ClusterAssignment, Point};
use crate::graph::{BundledEdge, Edge, ImageNode};

pub const DEFAULT_THUMB_SIZE: f64 = 64.0;
/// Side of a hidden-image rectangle relative to the thumbnail.
pub const RECT_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
}

impl Default for Viewport {
    fn default() -> Self {
        Viewport {
            width: 1200.0,
            height: 800.0,
            margin: DEFAULT_THUMB_SIZE / 2.0 + 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeMode {
    Thumbnail,
    Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePlacement {
    pub node: usize,
    /// Center in viewport coordinates.
    pub xy: Point,
    pub mode: NodeMode,
    pub width: f64,
    pub height: f64,
    pub weight: f64,
    /// Gray level of the border or rectangle; earlier steps are lighter.
    pub order_shade: u8,
}

impl NodePlacement {
    pub fn overlaps(&self, other: &NodePlacement) -> bool {
        (self.xy[0] - other.xy[0]).abs() < (self.width + other.width) / 2.0
            && (self.xy[1] - other.xy[1]).abs() < (self.height + other.height) / 2.0
    }
}

/// Gray level for the `order`-th of `count` steps: 220 for the first step
/// down to 40 for the last.
pub fn order_shade(order: usize, count: usize) -> u8 {
    let t = if count > 1 {
        order as f64 / (count - 1) as f64
    } else {
        1.0
    };
    libm::round(220.0 - 180.0 * t.clamp(0.0, 1.0)) as u8
}

/// Uniformly scales points into the viewport, preserving aspect ratio and
/// centering the result.
pub fn fit_to_viewport(points: &[Point], viewport: &Viewport) -> Vec<Point> {
    if points.is_empty() {
        return Vec::new();
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let avail = [
        (viewport.width - 2.0 * viewport.margin).max(0.0),
        (viewport.height - 2.0 * viewport.margin).max(0.0),
    ];
    let extent = [hi[0] - lo[0], hi[1] - lo[1]];
    let scale = (0..2)
        .filter(|&d| extent[d] > 1e-12)
        .map(|d| avail[d] / extent[d])
        .fold(f64::INFINITY, f64::min);
    let scale = if scale.is_finite() { scale } else { 0.0 };
    let center = [viewport.width / 2.0, viewport.height / 2.0];
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    points
        .iter()
        .map(|p| {
            [
                center[0] + scale * (p[0] - mid[0]),
                center[1] + scale * (p[1] - mid[1]),
            ]
        })
        .collect()
}

/// Thumbnail dimensions whose longer side is `thumb_size`.
pub fn thumb_dims(aspect: f64, thumb_size: f64) -> (f64, f64) {
    if aspect >= 1.0 {
        (thumb_size, thumb_size / aspect)
    } else {
        (thumb_size * aspect, thumb_size)
    }
}

/// Places every node and decides which are drawn as thumbnails.
///
/// Nodes are visited by descending weight (earlier steps first on ties); a
/// node becomes a thumbnail when it overlaps no thumbnail placed before it,
/// otherwise it is drawn as a small rectangle.
pub fn place_nodes(
    nodes: &[ImageNode],
    positions: &[Point],
    weights: &[f64],
    aspects: &[f64],
    viewport: &Viewport,
    thumb_size: f64,
) -> Vec<NodePlacement> {
    let xy = fit_to_viewport(positions, viewport);
    let step_count = nodes.iter().map(|n| n.temporal_order + 1).max().unwrap_or(0);

    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .total_cmp(&weights[a])
            .then(nodes[a].temporal_order.cmp(&nodes[b].temporal_order))
            .then(a.cmp(&b))
    });

    let mut placed: Vec<Option<NodePlacement>> = vec![None; nodes.len()];
    let mut thumbs: Vec<usize> = Vec::new();
    for i in order {
        let (w, h) = thumb_dims(aspects.get(i).copied().unwrap_or(1.0), thumb_size);
        let mut p = NodePlacement {
            node: i,
            xy: xy[i],
            mode: NodeMode::Thumbnail,
            width: w,
            height: h,
            weight: weights[i],
            order_shade: order_shade(nodes[i].temporal_order, step_count),
        };
        let blocked = thumbs
            .iter()
            .any(|&t| placed[t].as_ref().is_some_and(|q| q.overlaps(&p)));
        if blocked {
            p.mode = NodeMode::Rect;
            p.width = w * RECT_FRACTION;
            p.height = h * RECT_FRACTION;
        } else {
            thumbs.push(i);
        }
        placed[i] = Some(p);
    }
    placed.into_iter().flatten().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphSlice {
    pub bundle: usize,
    pub word: String,
    pub action: Action,
    /// Edges carrying this modification.
    pub frequency: usize,
    pub weight: f64,
    pub angle_fraction: f64,
    pub radius_fraction: f64,
    pub low_opacity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphSpec {
    pub src_cluster: usize,
    pub tgt_cluster: usize,
    pub xy: Point,
    pub slices: Vec<GlyphSlice>,
    pub label_words: Vec<String>,
    /// Endpoint nodes whose barycenter is `xy`.
    pub endpoints: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// One glyph per cluster pair of visible bundles, placed at the barycenter
/// of the member edges' endpoints.
///
/// Slice angles are proportional to how many edges carry each modification;
/// radii are bundle weights relative to the heaviest slice, and slices
/// lighter than the glyph's median weight are drawn at low opacity.
pub fn place_glyphs(bundles: &[BundledEdge], edges: &[Edge], node_xy: &[Point]) -> Vec<GlyphSpec> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, b) in bundles.iter().enumerate().filter(|(_, b)| b.visible) {
        groups.entry((b.src_cluster, b.tgt_cluster)).or_default().push(i);
    }

    groups
        .into_iter()
        .map(|((src_cluster, tgt_cluster), members)| {
            let mut endpoints: Vec<usize> = members
                .iter()
                .flat_map(|&b| bundles[b].members.iter())
                .flat_map(|&e| [edges[e].src, edges[e].tgt])
                .collect();
            endpoints.sort_unstable();
            endpoints.dedup();
            let n = endpoints.len().max(1) as f64;
            let (sx, sy) = endpoints
                .iter()
                .fold((0.0, 0.0), |(x, y), &e| (x + node_xy[e][0], y + node_xy[e][1]));

            let total: usize = members.iter().map(|&b| bundles[b].members.len()).sum();
            let max_w = members
                .iter()
                .map(|&b| bundles[b].weight)
                .fold(0.0f64, f64::max);
            let mut ws: Vec<f64> = members.iter().map(|&b| bundles[b].weight).collect();
            let med = median(&mut ws);

            let slices: Vec<GlyphSlice> = members
                .iter()
                .map(|&b| {
                    let bundle = &bundles[b];
                    let frequency = bundle.members.len();
                    GlyphSlice {
                        bundle: b,
                        word: bundle.word.clone(),
                        action: bundle.action,
                        frequency,
                        weight: bundle.weight,
                        angle_fraction: frequency as f64 / total.max(1) as f64,
                        radius_fraction: if max_w > 0.0 { bundle.weight / max_w } else { 1.0 },
                        low_opacity: bundle.weight < med,
                    }
                })
                .collect();
            let label_words = slices.iter().map(|s| s.action.label(&s.word)).collect();
            GlyphSpec {
                src_cluster,
                tgt_cluster,
                xy: [sx / n, sy / n],
                slices,
                label_words,
                endpoints,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    Cluster,
    Stage,
}

impl core::str::FromStr for GroupingMode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "cluster" => Ok(GroupingMode::Cluster),
            "stage" => Ok(GroupingMode::Stage),
            _ => Err(()),
        }
    }
}

impl fmt::Display for GroupingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupingMode::Cluster => "cluster",
            GroupingMode::Stage => "stage",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BubbleKind {
    Cluster,
    Stage,
    SamePrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BubbleStyle {
    Filled,
    Dashed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BubbleSpec {
    pub kind: BubbleKind,
    /// Cluster id, stage index, or step index, depending on `kind`.
    pub key: usize,
    pub members: Vec<usize>,
    pub style: BubbleStyle,
}

/// Filled bubbles per cluster or per stage, plus a dashed bubble for every
/// prompt whose images landed in two or more clusters.
pub fn compute_bubbles(
    nodes: &[ImageNode],
    clusters: &ClusterAssignment,
    stages: &StageSegmentation,
    mode: GroupingMode,
) -> Vec<BubbleSpec> {
    let mut out = Vec::new();
    match mode {
        GroupingMode::Cluster => {
            for c in 0..clusters.cluster_count() {
                out.push(BubbleSpec {
                    kind: BubbleKind::Cluster,
                    key: c,
                    members: clusters.members(c).collect(),
                    style: BubbleStyle::Filled,
                });
            }
        }
        GroupingMode::Stage => {
            for (k, stage) in stages.stages.iter().enumerate() {
                let members: Vec<usize> = nodes
                    .iter()
                    .enumerate()
                    .filter(|(_, n)| stage.contains(n.step + 1))
                    .map(|(i, _)| i)
                    .collect();
                if !members.is_empty() {
                    out.push(BubbleSpec {
                        kind: BubbleKind::Stage,
                        key: k,
                        members,
                        style: BubbleStyle::Filled,
                    });
                }
            }
        }
    }

    let mut by_step: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        by_step.entry(n.step).or_default().push(i);
    }
    for (step, members) in by_step {
        let first = clusters.labels[members[0]];
        if members.iter().any(|&m| clusters.labels[m] != first) {
            out.push(BubbleSpec {
                kind: BubbleKind::SamePrompt,
                key: step,
                members,
                style: BubbleStyle::Dashed,
            });
        }
    }
    out
}

/// Inclusive range of 1-based step numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRange {
    pub start: usize,
    pub end: usize,
}

impl StageRange {
    pub fn contains(&self, step: usize) -> bool {
        self.start <= step && step <= self.end
    }
}

/// A user edit of the stage division. Both commands name the boundary
/// directly before `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum StageOverride {
    /// Start a new stage at `step`.
    Split { step: usize },
    /// Join the stage starting at `step` to the one before it.
    Merge { step: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageError {
    NoSuchBoundary(usize),
    AlreadyBoundary(usize),
    StepOutOfRange { step: usize, steps: usize },
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageError::NoSuchBoundary(s) => write!(f, "no stage boundary before step {s}"),
            StageError::AlreadyBoundary(s) => write!(f, "a stage already starts at step {s}"),
            StageError::StepOutOfRange { step, steps } => {
                write!(f, "step {step} is outside 2..={steps}")
            }
        }
    }
}

impl core::error::Error for StageError {}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageSegmentation {
    pub stages: Vec<StageRange>,
    pub overrides: Vec<StageOverride>,
    /// Stored overrides that no longer apply to the current division.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_overrides: Vec<StageOverride>,
}

impl StageSegmentation {
    /// Breaks before step `i` whenever prompts `i - 1` and `i` are less
    /// similar than `s_min`. `consecutive[k]` is the similarity of steps
    /// `k + 1` and `k + 2`.
    pub fn automatic(consecutive: &[f64], steps: usize, s_min: f64) -> Self {
        let mut starts = Vec::new();
        if steps > 0 {
            starts.push(1);
        }
        for step in 2..=steps {
            if consecutive.get(step - 2).is_none_or(|&s| s < s_min) {
                starts.push(step);
            }
        }
        let mut seg = StageSegmentation::default();
        seg.set_starts(&starts, steps);
        seg
    }

    fn steps(&self) -> usize {
        self.stages.last().map_or(0, |s| s.end)
    }

    fn starts(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.start).collect()
    }

    fn set_starts(&mut self, starts: &[usize], steps: usize) {
        self.stages = starts
            .iter()
            .enumerate()
            .map(|(k, &start)| StageRange {
                start,
                end: starts.get(k + 1).map_or(steps, |next| next - 1),
            })
            .collect();
    }

    /// Applies one edit, rejecting commands that name a nonexistent
    /// boundary (merge) or an existing one (split).
    pub fn apply(&mut self, command: StageOverride) -> Result<(), StageError> {
        let steps = self.steps();
        let mut starts = self.starts();
        match command {
            StageOverride::Split { step } | StageOverride::Merge { step } if step < 2 || step > steps => {
                return Err(StageError::StepOutOfRange { step, steps });
            }
            StageOverride::Split { step } => match starts.binary_search(&step) {
                Ok(_) => return Err(StageError::AlreadyBoundary(step)),
                Err(pos) => starts.insert(pos, step),
            },
            StageOverride::Merge { step } => match starts.binary_search(&step) {
                Ok(pos) => {
                    starts.remove(pos);
                }
                Err(_) => return Err(StageError::NoSuchBoundary(step)),
            },
        }
        self.set_starts(&starts, steps);
        self.overrides.push(command);
        Ok(())
    }

    /// Replays stored edits over an automatic division; edits that no
    /// longer apply are kept aside in `skipped_overrides`.
    pub fn replay(mut self, overrides: &[StageOverride]) -> Self {
        for &command in overrides {
            if self.apply(command).is_err() {
                self.skipped_overrides.push(command);
            }
        }
        self
    }
}

/// Automatic stages from a similarity matrix, then the overrides applied in
/// order. Fails on the first override that does not apply.
pub fn segment_stages(
    similarity: &[Vec<f64>],
    s_min: f64,
    overrides: &[StageOverride],
) -> Result<StageSegmentation, StageError> {
    let n = similarity.len();
    let consecutive: Vec<f64> = (1..n).map(|i| similarity[i - 1][i]).collect();
    let mut seg = StageSegmentation::automatic(&consecutive, n, s_min);
    for &o in overrides {
        seg.apply(o)?;
    }
    Ok(seg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniMapDot {
    pub step: usize,
    pub token_count: usize,
    /// Proportional to `token_count`.
    pub size: f64,
    pub order_shade: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniMapArc {
    pub src: usize,
    pub tgt: usize,
    pub similarity: f64,
    pub emphasized: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MiniMapModel {
    pub dots: Vec<MiniMapDot>,
    pub arcs: Vec<MiniMapArc>,
    pub stage_lines: Vec<StageRange>,
}

/// Dots per step, arcs between similar steps, and for each dot an emphasized
/// arc to its most similar earlier dot (the most recent one on ties).
pub fn minimap_model(
    token_counts: &[usize],
    similarity: &[Vec<f64>],
    stages: &StageSegmentation,
    s_min: f64,
) -> MiniMapModel {
    let n = token_counts.len();
    let dots = token_counts
        .iter()
        .enumerate()
        .map(|(step, &count)| MiniMapDot {
            step,
            token_count: count,
            size: count as f64,
            order_shade: order_shade(step, n),
        })
        .collect();

    let mut arcs = Vec::new();
    for j in 0..n {
        let mut best: Option<(usize, f64)> = None;
        let first = arcs.len();
        for i in 0..j {
            let s = similarity[i][j];
            if s >= s_min {
                arcs.push(MiniMapArc {
                    src: i,
                    tgt: j,
                    similarity: s,
                    emphasized: false,
                });
                if best.is_none_or(|(_, b)| s >= b) {
                    best = Some((arcs.len() - 1, s));
                }
            }
        }
        if let Some((k, _)) = best {
            debug_assert!(k >= first);
            arcs[k].emphasized = true;
        }
    }
    MiniMapModel {
        dots,
        arcs,
        stage_lines: stages.stages.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::image_nodes;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn nodes(n: usize) -> Vec<ImageNode> {
        image_nodes(&vec![1; n]).0
    }

    fn stage_pairs(seg: &StageSegmentation) -> Vec<(usize, usize)> {
        seg.stages.iter().map(|s| (s.start, s.end)).collect()
    }

    /// Independent re-statement of the greedy rule.
    fn greedy_thumbnails(xy: &[Point], weights: &[f64], size: f64) -> usize {
        let mut idx: Vec<usize> = (0..xy.len()).collect();
        idx.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap().then(a.cmp(&b)));
        let mut shown: Vec<Point> = Vec::new();
        for i in idx {
            let free = shown
                .iter()
                .all(|p| (p[0] - xy[i][0]).abs() >= size || (p[1] - xy[i][1]).abs() >= size);
            if free {
                shown.push(xy[i]);
            }
        }
        shown.len()
    }

    #[test]
    fn single_node_is_thumbnail() {
        let vp = Viewport::default();
        let p = place_nodes(&nodes(1), &[[3.0, 4.0]], &[0.0], &[1.0], &vp, 64.0);
        assert_eq!(p[0].mode, NodeMode::Thumbnail);
        assert_eq!(p[0].xy, [600.0, 400.0]);
    }

    #[test]
    fn heavier_coincident_node_wins() {
        let vp = Viewport::default();
        let p = place_nodes(&nodes(2), &[[1.0, 1.0], [1.0, 1.0]], &[1.0, 2.0], &[1.0, 1.0], &vp, 64.0);
        assert_eq!(p[1].mode, NodeMode::Thumbnail);
        assert_eq!(p[0].mode, NodeMode::Rect);
        assert_eq!(p[0].width, 16.0);
    }

    #[test]
    fn ties_prefer_earlier_steps() {
        let vp = Viewport::default();
        let p = place_nodes(&nodes(2), &[[1.0, 1.0], [1.0, 1.0]], &[1.0, 1.0], &[1.0, 1.0], &vp, 64.0);
        assert_eq!(p[0].mode, NodeMode::Thumbnail);
        assert_eq!(p[1].mode, NodeMode::Rect);
    }

    #[test]
    fn tight_grid_matches_greedy_simulation() {
        let vp = Viewport {
            width: 400.0,
            height: 400.0,
            margin: 0.0,
        };
        let positions: Vec<Point> = (0..10).map(|i| [(i % 4) as f64, (i / 4) as f64]).collect();
        let weights = [0.5, 2.0, 1.0, 0.1, 3.0, 0.7, 0.7, 1.2, 0.0, 2.5];
        let p = place_nodes(&nodes(10), &positions, &weights, &[1.0; 10], &vp, 200.0);
        let xy: Vec<Point> = p.iter().map(|n| n.xy).collect();
        let thumbs = p.iter().filter(|n| n.mode == NodeMode::Thumbnail).count();
        assert_eq!(thumbs, greedy_thumbnails(&xy, &weights, 200.0));
        assert!(thumbs > 1 && thumbs < 10);
    }

    #[test]
    fn aspect_ratio_is_kept() {
        assert_eq!(thumb_dims(2.0, 64.0), (64.0, 32.0));
        assert_eq!(thumb_dims(0.5, 64.0), (32.0, 64.0));
        let fitted = fit_to_viewport(&[[0.0, 0.0], [2.0, 1.0]], &Viewport { width: 100.0, height: 100.0, margin: 0.0 });
        assert_eq!(fitted, vec![[0.0, 25.0], [100.0, 75.0]]);
    }

    #[test]
    fn shades() {
        assert_eq!(order_shade(0, 5), 220);
        assert_eq!(order_shade(4, 5), 40);
        assert_eq!(order_shade(0, 1), 40);
    }

    fn bundle(word: &str, action: Action, members: Vec<usize>, weight: f64) -> BundledEdge {
        BundledEdge {
            word: word.to_string(),
            action,
            src_cluster: 0,
            tgt_cluster: 1,
            weight,
            members,
            visible: true,
        }
    }

    fn edge(src: usize, tgt: usize) -> Edge {
        Edge {
            word: String::new(),
            action: Action::Insert,
            src,
            tgt,
            weight: 1.0,
            initial_weight: 1.0,
        }
    }

    #[test]
    fn glyph_at_midpoint() {
        let edges = vec![edge(0, 1)];
        let bundles = vec![bundle("1girl", Action::Insert, vec![0], 1.0)];
        let g = place_glyphs(&bundles, &edges, &[[0.0, 0.0], [2.0, 2.0]]);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].xy, [1.0, 1.0]);
        assert_eq!(g[0].slices.len(), 1);
        assert_eq!(g[0].slices[0].angle_fraction, 1.0);
        assert_eq!(g[0].label_words, vec!["+1girl".to_string()]);
    }

    #[test]
    fn glyph_slices_by_frequency() {
        let edges = vec![edge(0, 2), edge(1, 2), edge(0, 3), edge(1, 3)];
        let bundles = vec![
            bundle("1girl", Action::Insert, vec![0, 1, 2], 1.5),
            bundle("1boy", Action::Remove, vec![3], 0.5),
        ];
        let xy = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        let g = place_glyphs(&bundles, &edges, &xy);
        let s = &g[0].slices;
        assert_eq!((s[0].angle_fraction, s[1].angle_fraction), (0.75, 0.25));
        assert_eq!((s[0].radius_fraction, s[1].radius_fraction), (1.0, 0.5 / 1.5));
        assert!(!s[0].low_opacity && s[1].low_opacity);
        assert_eq!(g[0].xy, [1.0, 1.0]);
        assert_eq!(g[0].label_words, vec!["+1girl".to_string(), "-1boy".to_string()]);
    }

    #[test]
    fn hidden_bundles_have_no_glyph() {
        let edges = vec![edge(0, 1)];
        let mut b = bundle("x", Action::Insert, vec![0], 1.0);
        b.visible = false;
        assert!(place_glyphs(&[b], &edges, &[[0.0, 0.0], [1.0, 1.0]]).is_empty());
    }

    #[test]
    fn stage_rule() {
        let sims = [
            vec![1.0, 0.9, 0.0, 0.0],
            vec![0.9, 1.0, 0.2, 0.0],
            vec![0.0, 0.2, 1.0, 0.8],
            vec![0.0, 0.0, 0.8, 1.0],
        ];
        let seg = segment_stages(&sims, 0.6, &[]).unwrap();
        assert_eq!(stage_pairs(&seg), vec![(1, 2), (3, 4)]);

        let all = StageSegmentation::automatic(&[0.9, 0.9, 0.9], 4, 0.6);
        assert_eq!(stage_pairs(&all), vec![(1, 4)]);
        let none = StageSegmentation::automatic(&[0.1, 0.1, 0.1], 4, 0.6);
        assert_eq!(none.stages.len(), 4);
        assert!(StageSegmentation::automatic(&[], 0, 0.6).stages.is_empty());
    }

    #[test]
    fn stage_overrides() {
        let base = StageSegmentation::automatic(&[0.9, 0.9, 0.9], 4, 0.6);
        let mut seg = base.clone();
        seg.apply(StageOverride::Split { step: 3 }).unwrap();
        assert_eq!(stage_pairs(&seg), vec![(1, 2), (3, 4)]);
        seg.apply(StageOverride::Merge { step: 3 }).unwrap();
        assert_eq!(seg.stages, base.stages);

        assert_eq!(
            seg.clone().apply(StageOverride::Merge { step: 2 }),
            Err(StageError::NoSuchBoundary(2))
        );
        assert_eq!(
            seg.clone().apply(StageOverride::Split { step: 9 }),
            Err(StageError::StepOutOfRange { step: 9, steps: 4 })
        );
        assert!(seg.clone().apply(StageOverride::Split { step: 1 }).is_err());

        let replayed = base.replay(&[StageOverride::Merge { step: 2 }, StageOverride::Split { step: 2 }]);
        assert_eq!(stage_pairs(&replayed), vec![(1, 1), (2, 4)]);
        assert_eq!(replayed.skipped_overrides, vec![StageOverride::Merge { step: 2 }]);
    }

    #[test]
    fn minimap_examples() {
        let seg = StageSegmentation::automatic(&[], 1, 0.6);
        let m = minimap_model(&[3], &[vec![1.0]], &seg, 0.6);
        assert_eq!(m.dots.len(), 1);
        assert!(m.arcs.is_empty());

        let sims = [vec![1.0, 0.8], vec![0.8, 1.0]];
        let seg = segment_stages(&sims, 0.6, &[]).unwrap();
        let m = minimap_model(&[2, 3], &sims, &seg, 0.6);
        assert_eq!(m.arcs.len(), 1);
        assert!(m.arcs[0].emphasized);
        assert_eq!(m.dots[1].size, 3.0);

        // Step 6 (index 5) is equally similar to steps 2 and 5.
        let mut sims = vec![vec![0.0; 6]; 6];
        for (i, row) in sims.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for (a, b, s) in [(1, 5, 0.8), (4, 5, 0.8), (0, 5, 0.7)] {
            sims[a][b] = s;
            sims[b][a] = s;
        }
        let seg = segment_stages(&sims, 0.6, &[]).unwrap();
        let m = minimap_model(&[1; 6], &sims, &seg, 0.6);
        let emph: Vec<_> = m.arcs.iter().filter(|a| a.emphasized).collect();
        assert_eq!(emph.len(), 1);
        assert_eq!((emph[0].src, emph[0].tgt), (4, 5));
        assert_eq!(m.arcs.len(), 3);
    }

    #[test]
    fn bubbles() {
        let (nodes, _) = image_nodes(&[4, 2, 1]);
        let seg = StageSegmentation::automatic(&[0.9, 0.1], 3, 0.6);

        let same = ClusterAssignment { labels: vec![0, 0, 0, 0, 1, 2, 1], cluster_distance: 1.0 };
        let b = compute_bubbles(&nodes, &same, &seg, GroupingMode::Cluster);
        assert_eq!(b.iter().filter(|b| b.kind == BubbleKind::Cluster).count(), 3);
        let dashed: Vec<_> = b.iter().filter(|b| b.style == BubbleStyle::Dashed).collect();
        assert_eq!(dashed.len(), 1);
        assert_eq!(dashed[0].kind, BubbleKind::SamePrompt);
        assert_eq!(dashed[0].members, vec![4, 5]);

        let split = ClusterAssignment { labels: vec![0, 0, 1, 1, 1, 1, 1], cluster_distance: 1.0 };
        let b = compute_bubbles(&nodes, &split, &seg, GroupingMode::Stage);
        assert_eq!(b.iter().filter(|b| b.kind == BubbleKind::Stage).count(), 2);
        assert_eq!(b.iter().filter(|b| b.kind == BubbleKind::SamePrompt).count(), 1);

        let three = StageSegmentation::automatic(&[0.1, 0.1], 3, 0.6);
        let b = compute_bubbles(&nodes, &split, &three, GroupingMode::Stage);
        assert_eq!(b.iter().filter(|b| b.style == BubbleStyle::Filled).count(), 3);
    }

    proptest! {
        #[test]
        fn thumbnails_never_overlap(
            pts in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0.0f64..3.0, 0.5f64..2.0), 1..40),
        ) {
            let positions: Vec<Point> = pts.iter().map(|p| [p.0, p.1]).collect();
            let weights: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let aspects: Vec<f64> = pts.iter().map(|p| p.3).collect();
            let placed = place_nodes(&nodes(pts.len()), &positions, &weights, &aspects, &Viewport::default(), 64.0);
            prop_assert_eq!(placed.len(), pts.len());
            let thumbs: Vec<_> = placed.iter().filter(|p| p.mode == NodeMode::Thumbnail).collect();
            prop_assert!(!thumbs.is_empty());
            for a in 0..thumbs.len() {
                for b in a + 1..thumbs.len() {
                    prop_assert!(!thumbs[a].overlaps(thumbs[b]));
                }
            }
            let again = place_nodes(&nodes(pts.len()), &positions, &weights, &aspects, &Viewport::default(), 64.0);
            prop_assert_eq!(placed, again);
        }

        #[test]
        fn stages_partition_and_round_trip(
            sims in proptest::collection::vec(0.0f64..1.0, 0..12),
            pick in 0usize..100,
        ) {
            let steps = sims.len() + 1;
            let seg = StageSegmentation::automatic(&sims, steps, 0.6);
            prop_assert_eq!(seg.stages[0].start, 1);
            prop_assert_eq!(seg.stages.last().unwrap().end, steps);
            for w in seg.stages.windows(2) {
                prop_assert_eq!(w[0].end + 1, w[1].start);
            }
            if steps >= 2 {
                let step = 2 + pick % (steps - 1);
                let starts_here = seg.stages.iter().any(|s| s.start == step);
                let (first, second) = if starts_here {
                    (StageOverride::Merge { step }, StageOverride::Split { step })
                } else {
                    (StageOverride::Split { step }, StageOverride::Merge { step })
                };
                let mut edited = seg.clone();
                edited.apply(first).unwrap();
                prop_assert_ne!(&edited.stages, &seg.stages);
                edited.apply(second).unwrap();
                prop_assert_eq!(&edited.stages, &seg.stages);
            }
        }

        #[test]
        fn emphasized_arcs_point_backwards(
            sims in proptest::collection::vec(0.0f64..1.0, 45),
        ) {
            let n = 10;
            let mut m = vec![vec![1.0; n]; n];
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    m[i][j] = sims[k];
                    m[j][i] = sims[k];
                    k += 1;
                }
            }
            let seg = segment_stages(&m, 0.5, &[]).unwrap();
            let model = minimap_model(&[1; 10], &m, &seg, 0.5);
            for j in 0..n {
                let e: Vec<_> = model.arcs.iter().filter(|a| a.tgt == j && a.emphasized).collect();
                prop_assert!(e.len() <= 1);
                for a in e {
                    prop_assert!(a.src < a.tgt);
                }
            }
        }
    }
}
