//! End-to-end build of a layout document from a session snapshot.
//!
//! The build is split in two. [`project_session`] turns embeddings into
//! aligned 2-D coordinates and depends only on the embeddings, the seed, and
//! optionally the previous projection of the same session. [`build_document`]
//! does everything downstream of that and is cheap enough to rerun on every
//! slider change.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::{
    self, cluster, combine, procrustes_align, project_with, EmbeddingError, PairEmbedding, Point,
    ProjectConfig, EMBEDDING_DIM,
};
use crate::graph::{build_graph, compare_prompts, image_nodes, BundledEdge, Edge, GraphParams, Modification, PairEdge};
use crate::layout::{
    compute_bubbles, minimap_model, place_glyphs, place_nodes, BubbleSpec, GlyphSpec, GroupingMode, MiniMapModel,
    NodeMode, StageOverride, StageSegmentation, Viewport, DEFAULT_THUMB_SIZE,
};
use crate::prompt::{parse_corpus, similarity_matrix, ParseWarning};

pub const SCHEMA_VERSION: u32 = 1;

/// Linkage cut applied to the standardized (unit RMS radius) combined
/// projection.
pub const DEFAULT_CLUSTER_DISTANCE: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
pub enum BuildError {
    Embedding(EmbeddingError),
    EmbeddingCount { expected: usize, found: usize },
    InvalidParam { name: &'static str, value: f64 },
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::Embedding(e) => write!(f, "embedding: {e}"),
            BuildError::EmbeddingCount { expected, found } => {
                write!(f, "expected {expected} embeddings, got {found}")
            }
            BuildError::InvalidParam { name, value } => write!(f, "parameter {name} = {value} is out of range"),
        }
    }
}

impl core::error::Error for BuildError {}

impl From<EmbeddingError> for BuildError {
    fn from(e: EmbeddingError) -> Self {
        BuildError::Embedding(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInput {
    pub prompt: String,
    pub image_ids: Vec<String>,
    /// Image width over height.
    #[serde(default = "one")]
    pub aspect: f64,
}

fn one() -> f64 {
    1.0
}

/// Immutable view of a session: steps in creation order and the stored
/// stage edits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionInput {
    pub steps: Vec<StepInput>,
    #[serde(default)]
    pub overrides: Vec<StageOverride>,
}

impl SessionInput {
    pub fn image_count(&self) -> usize {
        self.steps.iter().map(|s| s.image_ids.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    /// Weight of the text projection in the combined positions.
    pub alpha: f64,
    pub graph: GraphParams,
    pub cluster_distance: f64,
    pub grouping_mode: GroupingMode,
    pub seed: u64,
    pub viewport: Viewport,
    pub thumb_size: f64,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            alpha: 0.5,
            graph: GraphParams::default(),
            cluster_distance: DEFAULT_CLUSTER_DISTANCE,
            grouping_mode: GroupingMode::Cluster,
            seed: 0,
            viewport: Viewport::default(),
            thumb_size: DEFAULT_THUMB_SIZE,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<(), BuildError> {
        let bad = |name, value: f64| Err(BuildError::InvalidParam { name, value });
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", self.alpha);
        }
        if !(0.0..=1.0).contains(&self.graph.s_min) {
            return bad("s_min", self.graph.s_min);
        }
        if let Some(w) = self.graph.w_min {
            if !(w >= 0.0 && w.is_finite()) {
                return bad("w_min", w);
            }
        }
        if self.graph.n_e == 0 {
            return bad("n_e", 0.0);
        }
        if !(self.cluster_distance > 0.0 && self.cluster_distance.is_finite()) {
            return bad("cluster_distance", self.cluster_distance);
        }
        if !(self.thumb_size > 0.0 && self.thumb_size.is_finite()) {
            return bad("thumb_size", self.thumb_size);
        }
        if !(self.viewport.width > 0.0 && self.viewport.height > 0.0) {
            return bad("viewport", self.viewport.width.min(self.viewport.height));
        }
        Ok(())
    }
}

/// 2-D coordinates of every image in both spaces.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpaceProjection {
    /// Optimizer output, kept to warm-start the next projection.
    pub text_raw: Vec<Point>,
    pub image_raw: Vec<Point>,
    /// Image-space positions, aligned to the previous projection if any.
    pub image_xy: Vec<Point>,
    /// Text-space positions aligned onto `image_xy`.
    pub text_xy: Vec<Point>,
    pub disparity: f64,
}

fn align_onto(source: &[Point], target: &[Point], shared: usize) -> Option<Vec<Point>> {
    if shared < 2 {
        return None;
    }
    let fit = procrustes_align(&source[..shared], &target[..shared]).ok()?;
    Some(source.iter().map(|&p| fit.apply(p)).collect())
}

/// Projects text and image embeddings and aligns the text space onto the
/// image space.
///
/// With a previous projection of a prefix of the same images, both spaces
/// start from their previous positions and the new image space is aligned
/// to the previous one so that existing nodes move as little as possible.
pub fn project_session(
    embeddings: &[PairEmbedding],
    seed: u64,
    previous: Option<&SpaceProjection>,
) -> Result<SpaceProjection, BuildError> {
    for (i, e) in embeddings.iter().enumerate() {
        e.validate(EMBEDDING_DIM, i)?;
    }
    let n = embeddings.len();
    let text_vecs: Vec<Vec<f64>> = embeddings.iter().map(|e| e.text_vec.clone()).collect();
    let image_vecs: Vec<Vec<f64>> = embeddings.iter().map(|e| e.image_vec.clone()).collect();

    let previous = previous.filter(|p| p.image_raw.len() <= n && p.image_raw.len() == p.text_raw.len());
    let (text_raw, image_raw) = match previous {
        Some(prev) => {
            let init = |raw: &[Point]| -> Vec<Option<Point>> {
                (0..n).map(|i| raw.get(i).copied()).collect()
            };
            let config = ProjectConfig::warm(seed);
            (
                project_with(&text_vecs, &config, Some(&init(&prev.text_raw)))?,
                project_with(&image_vecs, &config, Some(&init(&prev.image_raw)))?,
            )
        }
        None => {
            let config = ProjectConfig::with_seed(seed);
            (
                project_with(&text_vecs, &config, None)?,
                project_with(&image_vecs, &config, None)?,
            )
        }
    };

    let image_xy = previous
        .and_then(|prev| align_onto(&image_raw, &prev.image_xy, prev.image_xy.len()))
        .unwrap_or_else(|| image_raw.clone());

    let (text_xy, disparity) = if n >= 2 {
        match procrustes_align(&text_raw, &image_xy) {
            Ok(fit) => (fit.transformed, fit.disparity),
            Err(EmbeddingError::DegenerateTarget) => (text_raw.clone(), 1.0),
            Err(e) => return Err(e.into()),
        }
    } else {
        (image_xy.clone(), 0.0)
    };

    Ok(SpaceProjection {
        text_raw,
        image_raw,
        image_xy,
        text_xy,
        disparity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocStep {
    pub index: usize,
    pub prompt: String,
    pub tokens: Vec<String>,
    pub image_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocNode {
    pub id: usize,
    pub step: usize,
    pub slot: usize,
    pub image_id: String,
    pub cluster: usize,
    pub weight: f64,
    pub xy: Point,
    pub mode: NodeMode,
    pub width: f64,
    pub height: f64,
    pub order_shade: u8,
    pub text_xy: Point,
    pub image_xy: Point,
    pub combined_xy: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEdge {
    #[serde(flatten)]
    pub edge: Edge,
    pub bundle: usize,
    pub visible: bool,
}

/// Edges between one image pair after equal-weight merging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocLink {
    pub src: usize,
    pub tgt: usize,
    pub merged: bool,
    pub modifications: Vec<Modification>,
    pub members: Vec<usize>,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocBundle {
    #[serde(flatten)]
    pub bundle: BundledEdge,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub glyph: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsEcho {
    pub alpha: f64,
    pub s_min: f64,
    pub w_min: Option<f64>,
    pub n_e: usize,
    pub cluster_distance: f64,
    pub grouping_mode: GroupingMode,
    pub seed: u64,
    pub redistribution_passes: usize,
    pub thumb_size: f64,
    pub viewport: Viewport,
}

impl From<&BuildParams> for ParamsEcho {
    fn from(p: &BuildParams) -> Self {
        ParamsEcho {
            alpha: p.alpha,
            s_min: p.graph.s_min,
            w_min: p.graph.w_min,
            n_e: p.graph.n_e,
            cluster_distance: p.cluster_distance,
            grouping_mode: p.grouping_mode,
            seed: p.seed,
            redistribution_passes: p.graph.redistribution_passes,
            thumb_size: p.thumb_size,
            viewport: p.viewport,
        }
    }
}

/// Everything the UI renders for one session under one set of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub schema_version: u32,
    pub params: ParamsEcho,
    pub effective_w_min: f64,
    pub cluster_count: usize,
    pub disparity: f64,
    pub phrases: Vec<String>,
    pub steps: Vec<DocStep>,
    pub nodes: Vec<DocNode>,
    pub edges: Vec<DocEdge>,
    pub links: Vec<DocLink>,
    pub bundles: Vec<DocBundle>,
    pub glyphs: Vec<GlyphSpec>,
    pub bubbles: Vec<BubbleSpec>,
    pub stages: StageSegmentation,
    pub minimap: MiniMapModel,
}

impl LayoutDocument {
    pub fn visible_bundle_count(&self) -> usize {
        self.bundles.iter().filter(|b| b.bundle.visible).count()
    }
}

/// Builds the layout document for a session from its projection.
pub fn build_document(
    input: &SessionInput,
    projection: &SpaceProjection,
    params: &BuildParams,
) -> Result<LayoutDocument, BuildError> {
    params.validate()?;
    let n = input.image_count();
    for len in [projection.text_xy.len(), projection.image_xy.len()] {
        if len != n {
            return Err(BuildError::EmbeddingCount {
                expected: n,
                found: len,
            });
        }
    }

    let raws: Vec<&str> = input.steps.iter().map(|s| s.prompt.as_str()).collect();
    let (prompts, phrases) = parse_corpus(&raws);
    let similarity = similarity_matrix(&prompts);

    let counts: Vec<usize> = input.steps.iter().map(|s| s.image_ids.len()).collect();
    let (nodes, by_step) = image_nodes(&counts);

    let combined = combine(&projection.text_xy, &projection.image_xy, params.alpha)?;
    let clusters = cluster(&embedding::standardize(&combined), params.cluster_distance);

    let pairs = compare_prompts(&prompts, params.graph.s_min);
    let graph = build_graph(&pairs, &by_step, &clusters.labels, &params.graph);

    let aspects: Vec<f64> = nodes.iter().map(|n| input.steps[n.step].aspect).collect();
    let placements = place_nodes(
        &nodes,
        &combined,
        &graph.node_weights,
        &aspects,
        &params.viewport,
        params.thumb_size,
    );
    let mut node_xy = alloc::vec![[0.0, 0.0]; n];
    for p in &placements {
        node_xy[p.node] = p.xy;
    }
    let glyphs = place_glyphs(&graph.bundles, &graph.edges, &node_xy);

    let stages = session_stages(input, params.graph.s_min);
    let bubbles = compute_bubbles(&nodes, &clusters, &stages, params.grouping_mode);
    let token_counts: Vec<usize> = prompts.iter().map(|p| p.len()).collect();
    let minimap = minimap_model(&token_counts, &similarity, &stages, params.graph.s_min);

    let steps = input
        .steps
        .iter()
        .zip(&prompts)
        .enumerate()
        .map(|(index, (s, p))| DocStep {
            index,
            prompt: s.prompt.clone(),
            tokens: p.texts().map(String::from).collect(),
            image_ids: s.image_ids.clone(),
            warnings: p.warnings.clone(),
        })
        .collect();

    let doc_nodes = placements
        .into_iter()
        .map(|p| {
            let node = &nodes[p.node];
            DocNode {
                id: p.node,
                step: node.step,
                slot: node.slot,
                image_id: input.steps[node.step].image_ids[node.slot].clone(),
                cluster: clusters.labels[p.node],
                weight: p.weight,
                xy: p.xy,
                mode: p.mode,
                width: p.width,
                height: p.height,
                order_shade: p.order_shade,
                text_xy: projection.text_xy[p.node],
                image_xy: projection.image_xy[p.node],
                combined_xy: combined[p.node],
            }
        })
        .collect();

    let bundle_visible = |e: usize| graph.bundles[graph.edge_bundle[e]].visible;
    let edges = graph
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| DocEdge {
            edge: e.clone(),
            bundle: graph.edge_bundle[i],
            visible: bundle_visible(i),
        })
        .collect();

    let links = graph
        .pair_edges
        .iter()
        .map(|pe| match pe {
            PairEdge::Single { edge } => {
                let e = &graph.edges[*edge];
                DocLink {
                    src: e.src,
                    tgt: e.tgt,
                    merged: false,
                    modifications: alloc::vec![Modification {
                        word: e.word.clone(),
                        action: e.action,
                        weight_share: e.weight,
                        frequency: 1,
                    }],
                    members: alloc::vec![*edge],
                    visible: bundle_visible(*edge),
                }
            }
            PairEdge::Merged(m) => DocLink {
                src: m.src,
                tgt: m.tgt,
                merged: true,
                modifications: m.modifications.clone(),
                members: m.members.clone(),
                visible: m.members.iter().any(|&e| bundle_visible(e)),
            },
        })
        .collect();

    let bundles = graph
        .bundles
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut sources: Vec<usize> = b.members.iter().map(|&e| graph.edges[e].src).collect();
            let mut targets: Vec<usize> = b.members.iter().map(|&e| graph.edges[e].tgt).collect();
            sources.sort_unstable();
            sources.dedup();
            targets.sort_unstable();
            targets.dedup();
            DocBundle {
                bundle: b.clone(),
                sources,
                targets,
                glyph: glyphs.iter().position(|g| g.slices.iter().any(|s| s.bundle == i)),
            }
        })
        .collect();

    Ok(LayoutDocument {
        schema_version: SCHEMA_VERSION,
        params: params.into(),
        effective_w_min: graph.effective_w_min,
        cluster_count: clusters.cluster_count(),
        disparity: projection.disparity,
        phrases: phrases.units.iter().map(|u| u.join(" ")).collect(),
        steps,
        nodes: doc_nodes,
        edges,
        links,
        bundles,
        glyphs,
        bubbles,
        stages,
        minimap,
    })
}

/// Convenience: cold projection followed by [`build_document`].
pub fn build_from_embeddings(
    input: &SessionInput,
    embeddings: &[PairEmbedding],
    params: &BuildParams,
) -> Result<LayoutDocument, BuildError> {
    if embeddings.len() != input.image_count() {
        return Err(BuildError::EmbeddingCount {
            expected: input.image_count(),
            found: embeddings.len(),
        });
    }
    let projection = project_session(embeddings, params.seed, None)?;
    build_document(input, &projection, params)
}

/// Current stage division of a session: automatic breaks at `s_min` with
/// the stored edits replayed.
pub fn session_stages(input: &SessionInput, s_min: f64) -> StageSegmentation {
    let raws: Vec<&str> = input.steps.iter().map(|s| s.prompt.as_str()).collect();
    let (prompts, _) = parse_corpus(&raws);
    let similarity = similarity_matrix(&prompts);
    let consecutive: Vec<f64> = (1..prompts.len()).map(|i| similarity[i - 1][i]).collect();
    StageSegmentation::automatic(&consecutive, prompts.len(), s_min).replay(&input.overrides)
}
