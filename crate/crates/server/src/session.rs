//! Query sessions: immutable once created, persisted under the data root.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use matchscope_core::features::MaskSpec;
use matchscope_core::index::SearchFilters;
use matchscope_core::store::{read_spatial_tensor, write_spatial_tensor, SpatialFeatureMap};

use crate::data::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    Tensor,
    Image,
}

/// What was submitted and what was derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySession {
    pub query_id: String,
    pub source: QuerySource,
    pub mask: MaskSpec,
    pub filters: SearchFilters,
    /// Masked, pooled and normalized query embedding.
    pub embedding: Vec<f32>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct LoadedSession {
    pub session: QuerySession,
    pub features: SpatialFeatureMap,
}

#[derive(Debug)]
pub struct SessionStore {
    dir: PathBuf,
    cache: RwLock<HashMap<String, Arc<LoadedSession>>>,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

impl SessionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), cache: RwLock::new(HashMap::new()) }
    }

    fn session_dir(&self, query_id: &str) -> Option<PathBuf> {
        let id = uuid::Uuid::parse_str(query_id).ok()?;
        Some(self.dir.join(id.hyphenated().to_string()))
    }

    /// Persists a new session; `image` keeps the uploaded photo, if any.
    pub fn create(
        &self,
        session: QuerySession,
        features: SpatialFeatureMap,
        image: Option<&[u8]>,
    ) -> Result<Arc<LoadedSession>, DataError> {
        let dir = self.session_dir(&session.query_id).expect("session ids are uuids");
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        write_spatial_tensor(&features, &dir.join("query.sfm"))?;
        if let Some(bytes) = image {
            let path = dir.join("query.image");
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        }
        let path = dir.join("session.json");
        let json = serde_json::to_vec_pretty(&session).expect("session serializes");
        fs::write(&path, json).map_err(|e| io_err(&path, e))?;
        let loaded = Arc::new(LoadedSession { session, features });
        self.cache
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(loaded.session.query_id.clone(), loaded.clone());
        Ok(loaded)
    }

    /// `Ok(None)` for ids that name no session.
    pub fn get(&self, query_id: &str) -> Result<Option<Arc<LoadedSession>>, DataError> {
        if let Some(s) = self.cache.read().unwrap_or_else(|e| e.into_inner()).get(query_id) {
            return Ok(Some(s.clone()));
        }
        let Some(dir) = self.session_dir(query_id) else { return Ok(None) };
        let path = dir.join("session.json");
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let session: QuerySession = serde_json::from_slice(&bytes)
            .map_err(|e| io_err(&path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
        let features = read_spatial_tensor(&dir.join("query.sfm"))?;
        let loaded = Arc::new(LoadedSession { session, features });
        self.cache
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(query_id.to_string(), loaded.clone());
        Ok(Some(loaded))
    }
}
