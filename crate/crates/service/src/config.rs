//! TOML service configuration.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use blobspace_core::atlas::{read_corpus, Atlas, AtlasConfig, AtlasError};
use blobspace_core::blobshape::{
    DEFAULT_ISO_LEVEL, DEFAULT_MESH_RESOLUTION, PREVIEW_MESH_RESOLUTION,
};
use blobspace_core::embedding::EmbeddingArtifact;
use blobspace_core::genprovider::{LatentProvider, MockProvider, RemoteConfig, RemoteProvider};

use crate::session::{Engine, DEFAULT_FIELD_RESOLUTION};

/// Environment variable consulted when the provider section has no key.
pub const API_KEY_ENV: &str = "BLOBSPACE_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// JSON Lines corpus; generated from `atlas` when absent.
    pub corpus_path: Option<PathBuf>,
    /// Embedding artifact fit on `corpus_path`; refit when absent.
    pub embedding_path: Option<PathBuf>,
    /// Directory for per-session event logs.
    pub data_dir: Option<PathBuf>,
    pub field_resolution: [usize; 2],
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
    pub atlas: AtlasConfig,
    pub mesh: MeshConfig,
    pub provider: ProviderConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            corpus_path: None,
            embedding_path: None,
            data_dir: None,
            field_resolution: DEFAULT_FIELD_RESOLUTION,
            cors_origins: Vec::new(),
            atlas: AtlasConfig::default(),
            mesh: MeshConfig::default(),
            provider: ProviderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    pub resolution: usize,
    pub preview_resolution: usize,
    pub max_resolution: usize,
    pub iso_level: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            resolution: DEFAULT_MESH_RESOLUTION,
            preview_resolution: PREVIEW_MESH_RESOLUTION,
            max_resolution: 128,
            iso_level: DEFAULT_ISO_LEVEL,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    #[default]
    Mock,
    Remote(RemoteConfig),
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("embedding artifact {path}: {source}")]
    Artifact {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Atlas(#[from] AtlasError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn open(path: &Path) -> Result<BufReader<File>, ConfigError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ServiceConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.field_resolution.iter().any(|&n| n < 2) {
            return Err(ConfigError::Invalid(
                "field_resolution needs at least 2 nodes per axis".into(),
            ));
        }
        let m = &self.mesh;
        if m.resolution > m.max_resolution || m.preview_resolution > m.max_resolution {
            return Err(ConfigError::Invalid(
                "mesh resolutions exceed max_resolution".into(),
            ));
        }
        if self.embedding_path.is_some() && self.corpus_path.is_none() {
            return Err(ConfigError::Invalid(
                "embedding_path requires corpus_path".into(),
            ));
        }
        Ok(())
    }

    /// Load or build the corpus and map.
    pub fn build_atlas(&self) -> Result<Atlas, ConfigError> {
        let Some(corpus_path) = &self.corpus_path else {
            return Ok(Atlas::generate(&self.atlas)?);
        };
        let shapes = read_corpus(open(corpus_path)?)?;
        match &self.embedding_path {
            Some(path) => {
                let artifact: EmbeddingArtifact =
                    serde_json::from_reader(open(path)?).map_err(|source| {
                        ConfigError::Artifact {
                            path: path.clone(),
                            source,
                        }
                    })?;
                Ok(Atlas::from_artifact(shapes, artifact, &self.atlas)?)
            }
            None => Ok(Atlas::fit(shapes, &self.atlas)?),
        }
    }

    pub fn build_provider(&self) -> Arc<dyn LatentProvider> {
        match &self.provider {
            ProviderConfig::Mock => Arc::new(MockProvider),
            ProviderConfig::Remote(remote) => {
                let mut remote = remote.clone();
                if remote.api_key.is_none() {
                    remote.api_key = std::env::var(API_KEY_ENV).ok();
                }
                Arc::new(RemoteProvider::new(remote))
            }
        }
    }

    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        Ok(Engine {
            atlas: Arc::new(self.build_atlas()?),
            provider: self.build_provider(),
            field_resolution: self.field_resolution,
        })
    }
}
