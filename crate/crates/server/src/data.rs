//! On-disk layout of a data root.
//!
//! ```text
//! catalog.jsonl          image records
//! features/{id}.sfm      SFM1 tensor per image
//! index.emb1             embeddings of the current index generation
//! sessions/{query_id}/   query sessions
//! reports/{id}.json      curated reports
//! ```

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

use matchscope_core::features::{image_embedding, FeatureError};
use matchscope_core::index::{
    build_index, read_embedding_table, write_embedding_table, EmbeddingTable, IndexError, SearchIndex,
};
use matchscope_core::store::{read_spatial_tensor, Catalog, IngestOutcome, SpatialFeatureMap, StoreError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("features of image {image_id}: {source}")]
    Feature {
        image_id: u64,
        #[source]
        source: FeatureError,
    },
    #[error("{path}: file name must be <image_id>.sfm")]
    BadFeatureName { path: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    /// True when the failure is the filesystem's rather than the data's.
    pub fn is_io(&self) -> bool {
        matches!(self, DataError::Io { .. } | DataError::Store(StoreError::Io { .. }) | DataError::Index(IndexError::Io { .. }))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataRoot {
    root: PathBuf,
}

impl DataRoot {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.root.join("catalog.jsonl")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn feature_path(&self, image_id: u64) -> PathBuf {
        self.features_dir().join(format!("{image_id}.sfm"))
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("index.emb1")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// Empty when the catalog file does not exist yet.
    pub fn load_catalog(&self) -> Result<Catalog, DataError> {
        let path = self.catalog_path();
        if !path.exists() {
            return Ok(Catalog::new());
        }
        Ok(Catalog::load_jsonl(&path)?)
    }

    /// `None` when the image has no stored tensor.
    pub fn read_features(&self, image_id: u64) -> Result<Option<SpatialFeatureMap>, DataError> {
        let path = self.feature_path(image_id);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(read_spatial_tensor(&path)?))
    }

    /// Tensor files in a directory, sorted by image id.
    pub fn list_feature_files(dir: &Path) -> Result<Vec<(u64, PathBuf)>, DataError> {
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
            let path = entry.map_err(|e| io_err(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("sfm") {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| DataError::BadFeatureName { path: path.display().to_string() })?;
            files.push((id, path));
        }
        files.sort();
        Ok(files)
    }

    /// Pooled, normalized embedding of every stored tensor.
    pub fn compute_embeddings(&self) -> Result<EmbeddingTable, DataError> {
        let dir = self.features_dir();
        let mut table = EmbeddingTable::new(0);
        if !dir.exists() {
            return Ok(table);
        }
        for (id, path) in Self::list_feature_files(&dir)? {
            let map = read_spatial_tensor(&path)?;
            let e = image_embedding(&map).map_err(|source| DataError::Feature { image_id: id, source })?;
            table.push(id, &e.values)?;
        }
        Ok(table)
    }

    /// Builds a generation from the stored tensors and writes its table to
    /// `out` (the data root's index file by default).
    pub fn build_index(&self, catalog: &Catalog, out: Option<&Path>) -> Result<SearchIndex, DataError> {
        let table = self.compute_embeddings()?;
        let index = build_index(catalog, &table)?;
        let out = out.map(Path::to_path_buf).unwrap_or_else(|| self.index_path());
        write_embedding_table(&index.to_table(), &out)?;
        Ok(index)
    }

    /// The persisted generation if there is one, otherwise one built from the
    /// stored tensors without writing it.
    pub fn load_index(&self, catalog: &Catalog) -> Result<SearchIndex, DataError> {
        let path = self.index_path();
        if path.exists() {
            return Ok(build_index(catalog, &read_embedding_table(&path)?)?);
        }
        Ok(build_index(catalog, &self.compute_embeddings()?)?)
    }

    /// Adds catalog lines and copies tensor files into the data root.
    ///
    /// Rejected catalog lines are returned, not fatal. Every tensor is
    /// decoded before anything is written; tensors whose id is already
    /// stored are left untouched.
    pub fn ingest(&self, catalog_file: &Path, features_dir: Option<&Path>) -> Result<IngestReport, DataError> {
        let mut catalog = self.load_catalog()?;
        let file = fs::File::open(catalog_file).map_err(|e| io_err(catalog_file, e))?;
        let outcome = catalog.ingest(BufReader::new(file))?;

        let mut pending = Vec::new();
        if let Some(dir) = features_dir {
            for (id, path) in Self::list_feature_files(dir)? {
                read_spatial_tensor(&path)?;
                pending.push((id, path));
            }
        }
        fs::create_dir_all(&self.root).map_err(|e| io_err(&self.root, e))?;
        catalog.save_jsonl(&self.catalog_path())?;
        let features = self.features_dir();
        fs::create_dir_all(&features).map_err(|e| io_err(&features, e))?;
        let mut copied = Vec::new();
        let mut skipped = Vec::new();
        for (id, path) in pending {
            let dest = self.feature_path(id);
            if dest.exists() {
                skipped.push(id);
                continue;
            }
            fs::copy(&path, &dest).map_err(|e| io_err(&dest, e))?;
            copied.push(id);
        }
        Ok(IngestReport { catalog: outcome, tensors_copied: copied, tensors_skipped: skipped })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IngestReport {
    pub catalog: IngestOutcome,
    pub tensors_copied: Vec<u64>,
    pub tensors_skipped: Vec<u64>,
}
