//! Session snapshot to layout document, with the caches the service needs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ivg_core::diff::EditOp;
use ivg_core::document::session_stages;
use ivg_core::embedding::PairEmbedding;
use ivg_core::layout::StageSegmentation;
use ivg_core::prompt::{parse_corpus, similarity_matrix};
use ivg_core::{build_document, diff_prompts, project_session, BuildError, BuildParams, SpaceProjection};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbedRecord, Embedder};
use crate::store::{Snapshot, StepRecord, Store, StoreError};

const DOCUMENT_CACHE_LIMIT: usize = 256;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("build task failed: {0}")]
    Task(String),
}

type ProjectionKey = (String, u64, usize);
type DocumentKey = (String, u64, String);

pub struct Engine {
    pub store: Arc<Store>,
    pub embedder: Embedder,
    pub allow_degraded: bool,
    projections: Mutex<HashMap<ProjectionKey, Arc<SpaceProjection>>>,
    documents: Mutex<HashMap<DocumentKey, Arc<Vec<u8>>>>,
}

/// Image counts at which the projection chain is evaluated: one entry per
/// step that added images.
fn chain_sizes(snapshot: &Snapshot) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut total = 0;
    for step in &snapshot.steps {
        if !step.image_ids.is_empty() {
            total += step.image_ids.len();
            sizes.push(total);
        }
    }
    sizes
}

/// Projects every prefix of the session in turn, each warm-started from and
/// aligned to the one before, so positions depend only on the session
/// contents and the seed. `cached` supplies already computed links.
pub fn project_chain(
    embeddings: &[PairEmbedding],
    sizes: &[usize],
    seed: u64,
    mut cached: impl FnMut(usize) -> Option<Arc<SpaceProjection>>,
    mut computed: impl FnMut(usize, &Arc<SpaceProjection>),
) -> Result<Arc<SpaceProjection>, BuildError> {
    let Some(&last) = sizes.last() else {
        return Ok(Arc::new(project_session(&[], seed, None)?));
    };
    let start = sizes.iter().rposition(|&s| cached(s).is_some());
    let mut prev = start.and_then(|k| cached(sizes[k]));
    if let Some(p) = &prev {
        if sizes[start.unwrap()] == last {
            return Ok(p.clone());
        }
    }
    for &size in &sizes[start.map_or(0, |k| k + 1)..] {
        let next = Arc::new(project_session(&embeddings[..size], seed, prev.as_deref())?);
        computed(size, &next);
        prev = Some(next);
    }
    Ok(prev.expect("at least one size"))
}

impl Engine {
    pub fn new(store: Arc<Store>, embedder: Embedder, allow_degraded: bool) -> Self {
        Engine {
            store,
            embedder,
            allow_degraded,
            projections: Mutex::new(HashMap::new()),
            documents: Mutex::new(HashMap::new()),
        }
    }

    async fn embeddings(&self, snapshot: &Snapshot) -> Result<(Vec<PairEmbedding>, bool), EngineError> {
        let mut records = Vec::new();
        for step in &snapshot.steps {
            for id in &step.image_ids {
                records.push(EmbedRecord {
                    prompt: step.prompt.clone(),
                    image: Arc::new(self.store.read_asset(&snapshot.session.id, id)?),
                });
            }
        }
        let embedded = self.embedder.embed_records(&records, self.allow_degraded).await?;
        if !embedded.degraded.is_empty() {
            tracing::warn!(
                session = %snapshot.session.id,
                count = embedded.degraded.len(),
                "using stub vectors for records the provider failed on"
            );
        }
        Ok((embedded.embeddings, !embedded.degraded.is_empty()))
    }

    /// Serialized layout document for the session's current snapshot.
    /// Identical requests against an unchanged session return the same bytes.
    pub async fn document(&self, session_id: &str, params: &BuildParams) -> Result<Arc<Vec<u8>>, EngineError> {
        params.validate()?;
        let snapshot = self.store.snapshot(session_id)?;
        let key: DocumentKey = (
            session_id.to_owned(),
            snapshot.version(),
            serde_json::to_string(params).expect("params serialize"),
        );
        if let Some(bytes) = self.documents.lock().unwrap().get(&key) {
            return Ok(bytes.clone());
        }

        let (embeddings, degraded) = self.embeddings(&snapshot).await?;
        let sizes = chain_sizes(&snapshot);
        let seed = params.seed;
        let params_owned = params.clone();
        let cached: HashMap<usize, Arc<SpaceProjection>> = if degraded {
            HashMap::new()
        } else {
            let projections = self.projections.lock().unwrap();
            sizes
                .iter()
                .filter_map(|&s| {
                    projections
                        .get(&(session_id.to_owned(), seed, s))
                        .map(|p| (s, p.clone()))
                })
                .collect()
        };
        let snap = snapshot.clone();
        let (bytes, fresh) = tokio::task::spawn_blocking(move || {
            let mut fresh = Vec::new();
            let projection = project_chain(
                &embeddings,
                &sizes,
                seed,
                |s| cached.get(&s).cloned(),
                |s, p| fresh.push((s, p.clone())),
            )?;
            let doc = build_document(&snap.to_session_input(), &projection, &params_owned)?;
            let bytes = serde_json::to_vec(&doc).expect("document serializes");
            Ok::<_, BuildError>((bytes, fresh))
        })
        .await
        .map_err(|e| EngineError::Task(e.to_string()))??;

        let bytes = Arc::new(bytes);
        if !degraded {
            let mut projections = self.projections.lock().unwrap();
            for (s, p) in fresh {
                projections.insert((session_id.to_owned(), seed, s), p);
            }
            let mut documents = self.documents.lock().unwrap();
            if documents.len() >= DOCUMENT_CACHE_LIMIT {
                documents.clear();
            }
            documents.retain(|(sid, version, _), _| sid != session_id || *version == key.1);
            documents.insert(key, bytes.clone());
        }
        Ok(bytes)
    }

    pub fn stages(&self, session_id: &str, s_min: f64) -> Result<StageSegmentation, EngineError> {
        let snapshot = self.store.snapshot(session_id)?;
        Ok(session_stages(&snapshot.to_session_input(), s_min))
    }

    pub fn history(&self, session_id: &str, s_min: f64) -> Result<History, EngineError> {
        Ok(history(&*self.store.snapshot(session_id)?, s_min))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryStep {
    #[serde(flatten)]
    pub record: StepRecord,
    pub tokens: Vec<String>,
}

/// Comparison of step `from` with the next step. `ops` is present only when
/// the two prompts are similar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPair {
    pub from: usize,
    pub to: usize,
    pub similarity: f64,
    pub similar: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ops: Option<Vec<EditOp>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub session_id: String,
    pub s_min: f64,
    pub steps: Vec<HistoryStep>,
    pub pairs: Vec<HistoryPair>,
}

pub fn history(snapshot: &Snapshot, s_min: f64) -> History {
    let raws: Vec<&str> = snapshot.steps.iter().map(|s| s.prompt.as_str()).collect();
    let (prompts, _) = parse_corpus(&raws);
    let similarity = similarity_matrix(&prompts);
    let pairs = (1..prompts.len())
        .map(|i| {
            let s = similarity[i - 1][i];
            let similar = s >= s_min;
            HistoryPair {
                from: snapshot.steps[i - 1].order,
                to: snapshot.steps[i].order,
                similarity: s,
                similar,
                ops: similar.then(|| diff_prompts(&prompts[i - 1], &prompts[i]).ops),
            }
        })
        .collect();
    History {
        session_id: snapshot.session.id.clone(),
        s_min,
        steps: snapshot
            .steps
            .iter()
            .zip(&prompts)
            .map(|(r, p)| HistoryStep {
                record: r.clone(),
                tokens: p.texts().map(String::from).collect(),
            })
            .collect(),
        pairs,
    }
}
