//! Service configuration: TOML file, then `IVG_*` environment variables,
//! then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::embed::{Embedder, HttpProvider, Provider};
use crate::gateway::{Backend, Gateway, HttpBackend, DEFAULT_MAX_BATCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Stub,
    Real,
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stub" => Ok(Mode::Stub),
            "real" => Ok(Mode::Real),
            other => bail!("unknown mode {other:?} (expected stub or real)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub mode: Mode,
    pub url: Option<String>,
    pub timeout_secs: u64,
    pub max_batch: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: Mode::Stub,
            url: None,
            timeout_secs: 120,
            max_batch: DEFAULT_MAX_BATCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub mode: Mode,
    pub url: Option<String>,
    pub timeout_secs: u64,
    /// Build with stub vectors for records the provider fails on.
    pub allow_degraded: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            mode: Mode::Stub,
            url: None,
            timeout_secs: 60,
            allow_degraded: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub port: u16,
    pub data_dir: PathBuf,
    pub seed: u64,
    pub backend: BackendConfig,
    pub embed: EmbedConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            port: 8750,
            data_dir: PathBuf::from("data"),
            seed: 0,
            backend: BackendConfig::default(),
            embed: EmbedConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("{key}={value:?}: {e}"))
}

impl Config {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies `IVG_PORT`, `IVG_DATA_DIR`, `IVG_SEED`, `IVG_BACKEND_MODE`,
    /// `IVG_BACKEND_URL`, `IVG_BACKEND_TIMEOUT`, `IVG_EMBED_MODE`,
    /// `IVG_EMBED_URL` and `IVG_EMBED_TIMEOUT` as read through `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        if let Some(v) = get("IVG_PORT") {
            self.port = parse("IVG_PORT", &v)?;
        }
        if let Some(v) = get("IVG_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("IVG_SEED") {
            self.seed = parse("IVG_SEED", &v)?;
        }
        if let Some(v) = get("IVG_BACKEND_MODE") {
            self.backend.mode = v.parse()?;
        }
        if let Some(v) = get("IVG_BACKEND_URL") {
            self.backend.url = Some(v);
        }
        if let Some(v) = get("IVG_BACKEND_TIMEOUT") {
            self.backend.timeout_secs = parse("IVG_BACKEND_TIMEOUT", &v)?;
        }
        if let Some(v) = get("IVG_EMBED_MODE") {
            self.embed.mode = v.parse()?;
        }
        if let Some(v) = get("IVG_EMBED_URL") {
            self.embed.url = Some(v);
        }
        if let Some(v) = get("IVG_EMBED_TIMEOUT") {
            self.embed.timeout_secs = parse("IVG_EMBED_TIMEOUT", &v)?;
        }
        Ok(())
    }

    pub fn gateway(&self) -> anyhow::Result<Gateway> {
        let backend = match self.backend.mode {
            Mode::Stub => Backend::Stub,
            Mode::Real => {
                let Some(url) = &self.backend.url else {
                    bail!("backend mode is real but no backend url is configured");
                };
                Backend::Http(HttpBackend::new(url.clone(), Duration::from_secs(self.backend.timeout_secs)))
            }
        };
        Ok(Gateway {
            backend,
            max_batch: self.backend.max_batch,
        })
    }

    pub fn embedder(&self) -> anyhow::Result<Embedder> {
        let provider = match self.embed.mode {
            Mode::Stub => Provider::Stub,
            Mode::Real => {
                let Some(url) = &self.embed.url else {
                    bail!("embedding mode is real but no embedding url is configured");
                };
                Provider::Http(HttpProvider::new(url.clone(), Duration::from_secs(self.embed.timeout_secs)))
            }
        };
        Ok(Embedder::new(provider))
    }
}
