//! HTTP service for matchscope.
//!
//! Everything lives under `/api/v1`. Errors are JSON `{code, message}`.
//! Uploaded query imagery and sessions are retained on disk indefinitely;
//! purge `sessions/` under the data root to apply any other policy.

pub mod config;
pub mod data;
mod error;
mod extractor;
mod routes;
pub mod session;

use std::sync::{Arc, RwLock};

use axum::Router;

use matchscope_core::features::{query_embedding, FeatureError, MaskSpec};
use matchscope_core::index::{search, IndexError, QuerySpec, SearchFilters, SearchIndex, SearchResult};
use matchscope_core::report::ReportStore;
use matchscope_core::store::{Catalog, SpatialFeatureMap};

pub use config::ServerConfig;
pub use data::{DataError, DataRoot, IngestReport};
pub use error::{ApiError, ErrorBody};
pub use extractor::{ExtractorClient, ExtractorError};

/// Results per query when the request does not say.
pub const DEFAULT_K: usize = 20;
/// Pixel size of each explanation panel.
pub const PANEL_SIZE: u32 = 224;

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Report(#[from] matchscope_core::report::ReportError),
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

/// Shared service state. The catalog and index are swapped as a pair of
/// whole generations; readers clone the `Arc` and never see a mix.
#[derive(Debug)]
pub struct AppState {
    pub config: ServerConfig,
    pub data: DataRoot,
    generation: RwLock<(Arc<Catalog>, Arc<SearchIndex>)>,
    pub sessions: session::SessionStore,
    pub reports: ReportStore,
    pub extractor: Option<ExtractorClient>,
}

impl AppState {
    /// Loads the catalog and the current index from the data root.
    pub fn load(config: ServerConfig) -> Result<Arc<Self>, StartupError> {
        let data = DataRoot::new(&config.data_root);
        let catalog = data.load_catalog()?;
        let index = data.load_index(&catalog)?;
        let extractor = match &config.extractor_url {
            Some(url) => Some(ExtractorClient::new(url.clone(), config.extractor_timeout(), config.extractor_retries)?),
            None => None,
        };
        Ok(Arc::new(Self {
            sessions: session::SessionStore::new(data.sessions_dir()),
            reports: ReportStore::open(data.reports_dir())?,
            generation: RwLock::new((Arc::new(catalog), Arc::new(index))),
            data,
            config,
            extractor,
        }))
    }

    pub fn catalog(&self) -> Arc<Catalog> {
        self.generation.read().unwrap_or_else(|e| e.into_inner()).0.clone()
    }

    pub fn index(&self) -> Arc<SearchIndex> {
        self.generation.read().unwrap_or_else(|e| e.into_inner()).1.clone()
    }

    /// Publishes a new catalog and index generation atomically.
    pub fn install(&self, catalog: Catalog, index: SearchIndex) {
        *self.generation.write().unwrap_or_else(|e| e.into_inner()) = (Arc::new(catalog), Arc::new(index));
    }

    /// Re-reads the data root and publishes what it holds.
    pub fn reload(&self) -> Result<(), DataError> {
        let catalog = self.data.load_catalog()?;
        let index = self.data.load_index(&catalog)?;
        self.install(catalog, index);
        Ok(())
    }
}

/// Embeds a query tensor under a mask and runs the search: the one path
/// shared by the HTTP API and the command line.
pub fn search_tensor(
    index: &SearchIndex,
    features: &SpatialFeatureMap,
    mask: &MaskSpec,
    k: usize,
    filters: SearchFilters,
) -> Result<SearchResult, QueryError> {
    let embedding = query_embedding(features, mask)?;
    Ok(search(index, &QuerySpec { embedding: embedding.values, k, filters })?)
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub fn router(state: Arc<AppState>) -> Router {
    routes::router(state)
}

/// Binds `host:port` from the configuration and serves until the process
/// ends.
pub async fn serve(config: ServerConfig) -> Result<(), StartupError> {
    let addr = format!("{}:{}", config.host, config.port);
    let state = AppState::load(config)?;
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| StartupError::Bind { addr: addr.clone(), source })?;
    eprintln!("matchscope listening on {addr}");
    axum::serve(listener, router(state))
        .await
        .map_err(|source| StartupError::Bind { addr, source })
}
