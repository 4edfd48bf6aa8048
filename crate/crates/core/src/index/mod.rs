//! Exact filtered k-nearest-neighbor search over unit-norm embeddings,
//! with hotel-level aggregation of the ranked images.
//!
//! An index generation is immutable. Rows are held in ascending image id
//! order; a search scans every row, applies the filters and keeps the best
//! `k` by dot product with ties broken by ascending image id.

mod geo;
mod table;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::io;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::dot_f32;
use crate::store::Catalog;

pub use geo::{haversine_km, GeoFilter, GeoPoint, EARTH_RADIUS_KM};
pub use table::{read_embedding_table, write_embedding_table, EmbeddingTable, EMB1_MAGIC};

/// Stored embeddings are f32; unit norm is checked at this tolerance.
const UNIT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("embedding for image {0} has no catalog record")]
    OrphanEmbedding(u64),
    #[error("image {0} has more than one embedding")]
    DuplicateEmbedding(u64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding for image {image_id} is not unit-norm (norm {norm})")]
    NotNormalized { image_id: u64, norm: f64 },
    #[error("embedding for image {0} contains non-finite values")]
    NonFinite(u64),
    #[error("coordinate ({lat}, {lon}) out of range")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("bad magic {found:?}, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated table: expected {expected} payload bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Optional restrictions applied before ranking.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchFilters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_id: Option<u64>,
    /// All listed lowercase tokens must be present on the image.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<String>,
}

impl SearchFilters {
    pub fn validate(&self) -> Result<(), IndexError> {
        if let Some(geo) = &self.geo {
            geo.validate()?;
        }
        if let Some(bad) = self.terms.iter().find(|t| t.is_empty() || t.chars().any(char::is_uppercase)) {
            return Err(IndexError::InvalidQuery(format!("term {bad:?} must be non-empty lowercase")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.geo.is_none() && self.chain_id.is_none() && self.terms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub embedding: Vec<f32>,
    pub k: usize,
    #[serde(default)]
    pub filters: SearchFilters,
}

impl QuerySpec {
    pub fn new(embedding: Vec<f32>, k: usize) -> Self {
        Self { embedding, k, filters: SearchFilters::default() }
    }

    pub fn with_filters(mut self, filters: SearchFilters) -> Self {
        self.filters = filters;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub image_id: u64,
    pub hotel_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotelGroup {
    pub hotel_id: u64,
    pub best_score: f64,
    pub image_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub generation: String,
    pub hits: Vec<SearchHit>,
    pub hotel_groups: Vec<HotelGroup>,
}

#[derive(Debug, Clone)]
struct RowAttributes {
    hotel_id: u64,
    chain_id: u64,
    lat: f64,
    lon: f64,
    terms: Vec<String>,
}

impl RowAttributes {
    fn passes(&self, filters: &SearchFilters) -> bool {
        if let Some(chain) = filters.chain_id {
            if self.chain_id != chain {
                return false;
            }
        }
        if let Some(geo) = &filters.geo {
            if !geo.contains(self.lat, self.lon) {
                return false;
            }
        }
        filters.terms.iter().all(|t| self.terms.iter().any(|have| have == t))
    }
}

/// One immutable index generation.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    generation: String,
    dim: usize,
    ids: Vec<u64>,
    attributes: Vec<RowAttributes>,
    vectors: Vec<f32>,
}

impl SearchIndex {
    pub fn generation(&self) -> &str {
        &self.generation
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Indexed image ids, ascending.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn embedding(&self, image_id: u64) -> Option<&[f32]> {
        let row = self.ids.binary_search(&image_id).ok()?;
        Some(self.row(row))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_table(&self) -> EmbeddingTable {
        let mut table = EmbeddingTable::new(self.dim);
        for (i, &id) in self.ids.iter().enumerate() {
            table.push(id, self.row(i)).expect("index rows are valid");
        }
        table
    }
}

/// Builds a generation from the catalog and a table of unit-norm embeddings.
/// Catalog records without an embedding are not indexed.
pub fn build_index(catalog: &Catalog, embeddings: &EmbeddingTable) -> Result<SearchIndex, IndexError> {
    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    order.sort_by_key(|&i| embeddings.ids()[i]);
    let dim = embeddings.dim();

    let mut seen = HashSet::with_capacity(order.len());
    let mut ids = Vec::with_capacity(order.len());
    let mut attributes = Vec::with_capacity(order.len());
    let mut vectors = Vec::with_capacity(order.len() * dim);
    let mut hasher = Sha256::new();
    hasher.update((dim as u64).to_le_bytes());
    for i in order {
        let image_id = embeddings.ids()[i];
        let row = embeddings.row(i);
        let record = catalog.get(image_id).ok_or(IndexError::OrphanEmbedding(image_id))?;
        if !seen.insert(image_id) {
            return Err(IndexError::DuplicateEmbedding(image_id));
        }
        let norm = dot_f32(row, row).sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(IndexError::NotNormalized { image_id, norm });
        }
        hasher.update(image_id.to_le_bytes());
        for v in row {
            hasher.update(v.to_le_bytes());
        }
        ids.push(image_id);
        attributes.push(RowAttributes {
            hotel_id: record.hotel_id,
            chain_id: record.chain_id,
            lat: record.latitude,
            lon: record.longitude,
            terms: record.terms.clone(),
        });
        vectors.extend_from_slice(row);
    }
    let digest = hasher.finalize();
    let generation = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    Ok(SearchIndex { generation, dim, ids, attributes, vectors })
}

/// Ranking key: higher score first, then lower image id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ranked {
    score: f64,
    image_id: u64,
    row: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    /// `Greater` means ranked earlier.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.image_id.cmp(&self.image_id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn search(index: &SearchIndex, query: &QuerySpec) -> Result<SearchResult, IndexError> {
    if query.k == 0 {
        return Err(IndexError::InvalidQuery("k must be at least 1".into()));
    }
    query.filters.validate()?;
    if !index.is_empty() && query.embedding.len() != index.dim {
        return Err(IndexError::DimensionMismatch { expected: index.dim, actual: query.embedding.len() });
    }

    // min-heap of the current best k; its top is the weakest kept entry
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(query.k + 1);
    for (row, attrs) in index.attributes.iter().enumerate() {
        if !attrs.passes(&query.filters) {
            continue;
        }
        let candidate = Ranked {
            score: dot_f32(&query.embedding, index.row(row)),
            image_id: index.ids[row],
            row,
        };
        if heap.len() < query.k {
            heap.push(Reverse(candidate));
        } else if let Some(Reverse(weakest)) = heap.peek() {
            if candidate > *weakest {
                heap.pop();
                heap.push(Reverse(candidate));
            }
        }
    }
    let mut ranked: Vec<Ranked> = heap.into_iter().map(|Reverse(r)| r).collect();
    ranked.sort_unstable_by(|a, b| b.cmp(a));

    let hits: Vec<SearchHit> = ranked
        .iter()
        .map(|r| SearchHit {
            image_id: r.image_id,
            hotel_id: index.attributes[r.row].hotel_id,
            score: r.score,
        })
        .collect();
    let hotel_groups = aggregate_hotels(&hits);
    Ok(SearchResult { generation: index.generation.clone(), hits, hotel_groups })
}

/// One group per hotel scored by its best member, ordered by score
/// descending then hotel id ascending.
pub fn aggregate_hotels(hits: &[SearchHit]) -> Vec<HotelGroup> {
    let mut groups: BTreeMap<u64, HotelGroup> = BTreeMap::new();
    for hit in hits {
        groups
            .entry(hit.hotel_id)
            .and_modify(|g| {
                g.image_count += 1;
                if hit.score > g.best_score {
                    g.best_score = hit.score;
                }
            })
            .or_insert(HotelGroup { hotel_id: hit.hotel_id, best_score: hit.score, image_count: 1 });
    }
    let mut groups: Vec<HotelGroup> = groups.into_values().collect();
    groups.sort_by(|a, b| b.best_score.total_cmp(&a.best_score).then(a.hotel_id.cmp(&b.hotel_id)));
    groups
}
