//! Core algorithms for building Image Variant Graphs out of text-to-image
//! prompting sessions.
//!
//! Everything in this crate is a pure function over in-memory data and builds
//! under `no_std` with `alloc`. Storage, model backends, HTTP, and file
//! formats live in the `ivg` companion crate.
//!
//! The pipeline, in order:
//!
//! * [`prompt`] parses weighted prompts, detects phrase units, and measures
//!   Jaccard similarity between prompts.
//! * [`diff`] finds word-level modifications between two prompts
//!   (alignment, reorder detection, weight comparison).
//! * [`embedding`] projects dual text/image embeddings into 2-D, aligns the
//!   two projections, combines them, and clusters the result.
//! * [`graph`] derives, bundles, redistributes, merges, and filters edges.
//! * [`layout`] places nodes and glyphs and computes bubbles, stages, and the
//!   navigation mini-map.
//! * [`document`] wires all of the above into one serializable
//!   [`document::LayoutDocument`].

#![no_std]
#![allow(clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diff;
pub mod document;
pub mod embedding;
pub mod graph;
pub mod layout;
mod linalg;
pub mod prompt;

pub use diff::{diff_prompts, Action, EditOp, PromptDiff};
pub use document::{
    build_document, build_from_embeddings, project_session, session_stages, BuildError, BuildParams, LayoutDocument,
    SessionInput, SpaceProjection, StepInput,
};
pub use prompt::{jaccard_similarity, parse_prompt, PhraseTable, PromptTokens, WeightedToken};
