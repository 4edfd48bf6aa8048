//! In-memory image catalog loaded from newline-delimited JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Crowdsourced,
    TravelSite,
    Other,
}

/// One catalog entry. JSON keys are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: u64,
    pub hotel_id: u64,
    /// 0 = independent or unknown chain.
    pub chain_id: u64,
    pub latitude: f64,
    pub longitude: f64,
    pub source: ImageSource,
    /// RFC 3339 UTC timestamp.
    pub captured_at: String,
    #[serde(default)]
    pub terms: Vec<String>,
}

impl ImageRecord {
    /// Checks everything except catalog-wide uniqueness.
    pub fn validate(&self) -> Result<(), String> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(format!("latitude {} outside [-90, 90]", self.latitude));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(format!("longitude {} outside [-180, 180]", self.longitude));
        }
        chrono::DateTime::parse_from_rfc3339(&self.captured_at)
            .map_err(|e| format!("captured_at {:?} is not RFC 3339: {e}", self.captured_at))?;
        for term in &self.terms {
            if term.is_empty() {
                return Err("empty search term".to_string());
            }
            if term.chars().any(char::is_uppercase) {
                return Err(format!("search term {term:?} is not lowercase"));
            }
        }
        Ok(())
    }

    pub fn has_all_terms(&self, required: &[String]) -> bool {
        required.iter().all(|t| self.terms.iter().any(|have| have == t))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogStats {
    pub image_count: usize,
    pub hotel_count: usize,
    /// Distinct non-zero chain ids.
    pub chain_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRejection {
    /// 1-based line number in the ingested stream.
    pub line: usize,
    pub image_id: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub accepted: usize,
    pub rejected: Vec<LineRejection>,
    /// Statistics of the whole catalog after ingestion.
    pub stats: CatalogStats,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    records: BTreeMap<u64, ImageRecord>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: u64) -> Option<&ImageRecord> {
        self.records.get(&image_id)
    }

    /// Records in ascending `image_id` order.
    pub fn records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.values()
    }

    pub fn insert(&mut self, record: ImageRecord) -> Result<(), String> {
        record.validate()?;
        if self.records.contains_key(&record.image_id) {
            return Err(format!("duplicate image_id {}", record.image_id));
        }
        self.records.insert(record.image_id, record);
        Ok(())
    }

    /// Ingests one JSON object per line. Each line is applied on its own:
    /// valid lines are inserted, invalid ones are reported with their line
    /// number. Blank lines are ignored.
    pub fn ingest<R: BufRead>(&mut self, source: R) -> Result<IngestOutcome, StoreError> {
        let mut accepted = 0;
        let mut rejected = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| StoreError::Io {
                path: format!("<catalog stream line {line_no}>"),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ImageRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    let image_id = serde_json::from_str::<serde_json::Value>(&line)
                        .ok()
                        .and_then(|v| v.get("image_id").and_then(|id| id.as_u64()));
                    rejected.push(LineRejection {
                        line: line_no,
                        image_id,
                        reason: format!("malformed record: {e}"),
                    });
                    continue;
                }
            };
            let image_id = record.image_id;
            match self.insert(record) {
                Ok(()) => accepted += 1,
                Err(reason) => rejected.push(LineRejection {
                    line: line_no,
                    image_id: Some(image_id),
                    reason,
                }),
            }
        }
        Ok(IngestOutcome { accepted, rejected, stats: self.stats() })
    }

    pub fn stats(&self) -> CatalogStats {
        let hotels: BTreeSet<u64> = self.records.values().map(|r| r.hotel_id).collect();
        let chains: BTreeSet<u64> = self
            .records
            .values()
            .map(|r| r.chain_id)
            .filter(|&c| c != 0)
            .collect();
        CatalogStats {
            image_count: self.records.len(),
            hotel_count: hotels.len(),
            chain_count: chains.len(),
        }
    }

    /// All records of one hotel, ascending by `image_id`. Unknown hotels
    /// yield an empty list.
    pub fn get_hotel_images(&self, hotel_id: u64) -> Vec<ImageRecord> {
        self.records
            .values()
            .filter(|r| r.hotel_id == hotel_id)
            .cloned()
            .collect()
    }

    /// Loads a catalog file, failing on the first rejected line.
    pub fn load_jsonl(path: &Path) -> Result<Self, StoreError> {
        let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
        let mut catalog = Self::new();
        let outcome = catalog.ingest(BufReader::new(file))?;
        if let Some(first) = outcome.rejected.into_iter().next() {
            return Err(StoreError::CatalogLine {
                line: first.line,
                reason: first.reason,
            });
        }
        Ok(catalog)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), StoreError> {
        let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
        let mut writer = BufWriter::new(file);
        for record in self.records.values() {
            let line = serde_json::to_string(record).expect("records serialize");
            writeln!(writer, "{line}").map_err(|e| StoreError::io(path, e))?;
        }
        writer.flush().map_err(|e| StoreError::io(path, e))
    }
}
