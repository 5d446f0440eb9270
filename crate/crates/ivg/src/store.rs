//! Append-only session store.
//!
//! ```text
//! <data-dir>/sessions/<id>/session.json     title and creation time
//! <data-dir>/sessions/<id>/steps.log        one JSON step record per line
//! <data-dir>/sessions/<id>/overrides.log    one JSON stage edit per line
//! <data-dir>/sessions/<id>/assets/<sha256>.png
//! ```
//!
//! Assets are written and synced before the step line that references them,
//! so a crash can leave orphan assets or a torn last line but never a step
//! without its images. Torn lines are cut off when the session is opened.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Cursor, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use ivg_core::layout::StageOverride;
use ivg_core::{SessionInput, StepInput};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TITLE: &str = "Untitled session";
const SESSION_FILE: &str = "session.json";
const STEPS_FILE: &str = "steps.log";
const OVERRIDES_FILE: &str = "overrides.log";
const ASSETS_DIR: &str = "assets";
const STAGING_PREFIX: &str = ".staging-";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("image {index}: {reason}")]
    InvalidImage { index: usize, reason: String },
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub title: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub seed: u64,
    pub batch_size: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub id: String,
    pub session_id: String,
    /// 1-based position in the session.
    pub order: usize,
    pub prompt: String,
    pub params: GenerationParams,
    pub image_ids: Vec<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub id: String,
    pub hash: String,
    pub byte_len: u64,
    pub format: String,
    pub path: PathBuf,
}

/// A step waiting to be written.
#[derive(Debug, Clone)]
pub struct NewStep {
    pub prompt: String,
    pub seed: u64,
    pub model: String,
    pub images: Vec<Vec<u8>>,
    pub created_at: Option<DateTime<Utc>>,
}

/// Immutable view of a session at one point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub session: Session,
    pub steps: Vec<StepRecord>,
    pub overrides: Vec<StageOverride>,
}

impl Snapshot {
    /// Grows by one on every write to the session.
    pub fn version(&self) -> u64 {
        (self.steps.len() + self.overrides.len()) as u64
    }

    pub fn to_session_input(&self) -> SessionInput {
        SessionInput {
            steps: self
                .steps
                .iter()
                .map(|s| StepInput {
                    prompt: s.prompt.clone(),
                    image_ids: s.image_ids.clone(),
                    aspect: if s.params.height > 0 {
                        s.params.width as f64 / s.params.height as f64
                    } else {
                        1.0
                    },
                })
                .collect(),
            overrides: self.overrides.clone(),
        }
    }
}

struct SessionState {
    dir: PathBuf,
    write: Mutex<()>,
    current: RwLock<Arc<Snapshot>>,
}

pub struct Store {
    root: PathBuf,
    sessions: RwLock<BTreeMap<String, Arc<SessionState>>>,
}

pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Width and height from a PNG header, or why the bytes are not a PNG.
pub fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32), String> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let reader = decoder.read_info().map_err(|e| e.to_string())?;
    let info = reader.info();
    Ok((info.width, info.height))
}

fn is_asset_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

fn is_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn append_line<T: Serialize>(path: &Path, record: &T) -> Result<(), StoreError> {
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.sync_data()?;
    Ok(())
}

/// Reads a JSON-lines file, truncating a torn final line in place.
fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    if complete < bytes.len() {
        tracing::warn!(path = %path.display(), dropped = bytes.len() - complete, "truncating torn record");
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(complete as u64)?;
        f.sync_all()?;
    }
    let mut out = Vec::new();
    for (k, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        out.push(serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
            path: path.to_owned(),
            line: k + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SessionMeta {
    id: String,
    title: String,
    created_at: DateTime<Utc>,
}

fn load_session(dir: &Path) -> Result<Snapshot, StoreError> {
    let meta: SessionMeta = serde_json::from_slice(&fs::read(dir.join(SESSION_FILE))?)?;
    let steps: Vec<StepRecord> = read_log(&dir.join(STEPS_FILE))?;
    let overrides: Vec<StageOverride> = read_log(&dir.join(OVERRIDES_FILE))?;
    for (k, step) in steps.iter().enumerate() {
        let bad = |reason: String| StoreError::Corrupt {
            path: dir.join(STEPS_FILE),
            line: k + 1,
            reason,
        };
        if step.order != k + 1 {
            return Err(bad(format!("order {} out of sequence", step.order)));
        }
        for id in &step.image_ids {
            if !is_asset_id(id) || !asset_path(dir, id).is_file() {
                return Err(bad(format!("missing asset {id}")));
            }
        }
    }
    Ok(Snapshot {
        session: Session {
            id: meta.id,
            title: meta.title,
            created_at: meta.created_at,
            step_count: steps.len(),
        },
        steps,
        overrides,
    })
}

fn asset_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(ASSETS_DIR).join(format!("{id}.png"))
}

/// Validates every image, then writes the missing ones. Returns asset ids
/// and the dimensions of the first image.
fn write_assets(dir: &Path, images: &[Vec<u8>]) -> Result<(Vec<String>, (u32, u32)), StoreError> {
    let mut dims = None;
    for (index, bytes) in images.iter().enumerate() {
        let d = png_dimensions(bytes).map_err(|reason| StoreError::InvalidImage { index, reason })?;
        dims.get_or_insert(d);
    }
    let assets = dir.join(ASSETS_DIR);
    fs::create_dir_all(&assets)?;
    let mut ids = Vec::with_capacity(images.len());
    for bytes in images {
        let id = content_hash(bytes);
        let path = asset_path(dir, &id);
        if !path.is_file() {
            let tmp = assets.join(format!(".tmp-{}", uuid::Uuid::new_v4()));
            write_synced(&tmp, bytes)?;
            fs::rename(&tmp, &path)?;
        }
        ids.push(id);
    }
    if !images.is_empty() {
        File::open(&assets)?.sync_all()?;
    }
    Ok((ids, dims.unwrap_or((0, 0))))
}

fn step_record(session_id: &str, order: usize, step: &NewStep, image_ids: Vec<String>, dims: (u32, u32)) -> StepRecord {
    StepRecord {
        id: uuid::Uuid::new_v4().to_string(),
        session_id: session_id.to_owned(),
        order,
        prompt: step.prompt.clone(),
        params: GenerationParams {
            seed: step.seed,
            batch_size: image_ids.len(),
            width: dims.0,
            height: dims.1,
            model: step.model.clone(),
        },
        image_ids,
        created_at: step.created_at.unwrap_or_else(Utc::now),
    }
}

impl Store {
    /// Opens (creating if needed) the store under `root` and loads every
    /// session. Leftovers of interrupted imports are removed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let sessions_dir = root.join("sessions");
        fs::create_dir_all(&sessions_dir)?;
        let mut sessions = BTreeMap::new();
        for entry in fs::read_dir(&sessions_dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with(STAGING_PREFIX) {
                fs::remove_dir_all(entry.path())?;
                continue;
            }
            if !entry.file_type()?.is_dir() || !is_session_id(&name) {
                continue;
            }
            let dir = entry.path();
            let snapshot = load_session(&dir)?;
            sessions.insert(
                name,
                Arc::new(SessionState {
                    dir,
                    write: Mutex::new(()),
                    current: RwLock::new(Arc::new(snapshot)),
                }),
            );
        }
        Ok(Store {
            root,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn state(&self, id: &str) -> Result<Arc<SessionState>, StoreError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(id.to_owned()))
    }

    pub fn list_sessions(&self) -> Vec<Session> {
        let mut out: Vec<Session> = self
            .sessions
            .read()
            .unwrap()
            .values()
            .map(|s| s.current.read().unwrap().session.clone())
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn session(&self, id: &str) -> Result<Session, StoreError> {
        Ok(self.snapshot(id)?.session.clone())
    }

    pub fn create_session(&self, title: &str) -> Result<Session, StoreError> {
        Ok(self.import_session(title, &[])?.session.clone())
    }

    /// Creates a session holding `steps`. Nothing becomes visible unless
    /// every step and asset is written.
    pub fn import_session(&self, title: &str, steps: &[NewStep]) -> Result<Arc<Snapshot>, StoreError> {
        let title = match title.trim() {
            "" => DEFAULT_TITLE,
            t => t,
        };
        let id = uuid::Uuid::new_v4().to_string();
        let sessions_dir = self.root.join("sessions");
        let staging = sessions_dir.join(format!("{STAGING_PREFIX}{id}"));
        let result = (|| {
            fs::create_dir_all(staging.join(ASSETS_DIR))?;
            let meta = SessionMeta {
                id: id.clone(),
                title: title.to_owned(),
                created_at: Utc::now(),
            };
            write_synced(&staging.join(SESSION_FILE), &serde_json::to_vec_pretty(&meta)?)?;
            let mut records = Vec::with_capacity(steps.len());
            let mut log = Vec::new();
            for (k, step) in steps.iter().enumerate() {
                let (ids, dims) = write_assets(&staging, &step.images)?;
                let record = step_record(&id, k + 1, step, ids, dims);
                serde_json::to_writer(&mut log, &record)?;
                log.push(b'\n');
                records.push(record);
            }
            write_synced(&staging.join(STEPS_FILE), &log)?;
            let final_dir = sessions_dir.join(&id);
            fs::rename(&staging, &final_dir)?;
            File::open(&sessions_dir)?.sync_all()?;
            Ok::<_, StoreError>((final_dir, meta, records))
        })();
        let (dir, meta, records) = match result {
            Ok(r) => r,
            Err(e) => {
                let _ = fs::remove_dir_all(&staging);
                return Err(e);
            }
        };
        let snapshot = Arc::new(Snapshot {
            session: Session {
                id: id.clone(),
                title: meta.title,
                created_at: meta.created_at,
                step_count: records.len(),
            },
            steps: records,
            overrides: Vec::new(),
        });
        self.sessions.write().unwrap().insert(
            id,
            Arc::new(SessionState {
                dir,
                write: Mutex::new(()),
                current: RwLock::new(snapshot.clone()),
            }),
        );
        Ok(snapshot)
    }

    /// Appends a step. Writes to one session are serialized, so concurrent
    /// appends get consecutive orders.
    pub fn append_step(&self, session_id: &str, step: NewStep) -> Result<StepRecord, StoreError> {
        let state = self.state(session_id)?;
        let _guard = state.write.lock().unwrap();
        let (ids, dims) = write_assets(&state.dir, &step.images)?;
        let order = state.current.read().unwrap().steps.len() + 1;
        let record = step_record(session_id, order, &step, ids, dims);
        append_line(&state.dir.join(STEPS_FILE), &record)?;
        let mut current = state.current.write().unwrap();
        let mut next = Snapshot::clone(&current);
        next.steps.push(record.clone());
        next.session.step_count = next.steps.len();
        *current = Arc::new(next);
        Ok(record)
    }

    /// Appends a stage edit after checking it with `validate` against the
    /// current snapshot, under the session's write lock.
    pub fn append_override<E>(
        &self,
        session_id: &str,
        command: StageOverride,
        validate: impl FnOnce(&Snapshot) -> Result<(), E>,
    ) -> Result<Result<Arc<Snapshot>, E>, StoreError> {
        let state = self.state(session_id)?;
        let _guard = state.write.lock().unwrap();
        let snapshot = state.current.read().unwrap().clone();
        if let Err(e) = validate(&snapshot) {
            return Ok(Err(e));
        }
        append_line(&state.dir.join(OVERRIDES_FILE), &command)?;
        let mut next = Snapshot::clone(&snapshot);
        next.overrides.push(command);
        let next = Arc::new(next);
        *state.current.write().unwrap() = next.clone();
        Ok(Ok(next))
    }

    pub fn snapshot(&self, session_id: &str) -> Result<Arc<Snapshot>, StoreError> {
        Ok(self.state(session_id)?.current.read().unwrap().clone())
    }

    pub fn asset(&self, session_id: &str, asset_id: &str) -> Result<ImageAsset, StoreError> {
        let state = self.state(session_id)?;
        if !is_asset_id(asset_id) {
            return Err(StoreError::UnknownAsset(asset_id.to_owned()));
        }
        let path = asset_path(&state.dir, asset_id);
        let meta = fs::metadata(&path).map_err(|_| StoreError::UnknownAsset(asset_id.to_owned()))?;
        Ok(ImageAsset {
            id: asset_id.to_owned(),
            hash: asset_id.to_owned(),
            byte_len: meta.len(),
            format: "png".into(),
            path,
        })
    }

    pub fn read_asset(&self, session_id: &str, asset_id: &str) -> Result<Vec<u8>, StoreError> {
        Ok(fs::read(self.asset(session_id, asset_id)?.path)?)
    }
}
