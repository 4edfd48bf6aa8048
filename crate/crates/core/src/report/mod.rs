//! Curated investigation reports.
//!
//! A report holds the masked query, the search criteria, free-text notes
//! and an explicitly ordered list of selected results. It renders to JSON
//! (lossless) or to a single self-contained HTML page.

mod html;
mod store;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::SearchFilters;

pub use html::{neutralize_text, render_html, HtmlOptions, HtmlRender, MissingThumbnail};
pub use store::ReportStore;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("duplicate entry for image {0}")]
    DuplicateEntry(u64),
    #[error("unknown report {0}")]
    UnknownReport(String),
    #[error("report has no entry for image {0}")]
    UnknownEntry(u64),
    #[error("position {position} out of range for {len} entries")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("malformed report json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The search that produced the report, minus the raw embedding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchCriteria {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    pub k: usize,
    #[serde(default)]
    pub filters: SearchFilters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportEntry {
    pub image_id: u64,
    pub hotel_id: u64,
    pub similarity: f64,
    /// Image file, relative to the asset root used at render time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnail: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explanations: Vec<String>,
}

impl ReportEntry {
    pub fn new(image_id: u64, hotel_id: u64, similarity: f64) -> Self {
        Self { image_id, hotel_id, similarity, thumbnail: None, explanations: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub report_id: String,
    /// Masked query image, relative to the asset root.
    pub query_ref: String,
    pub criteria: SearchCriteria,
    pub notes: String,
    pub entries: Vec<ReportEntry>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// One curation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurateEdit {
    /// Insert before `position`; `None` appends.
    Add {
        entry: ReportEntry,
        #[serde(default)]
        position: Option<usize>,
    },
    Remove { image_id: u64 },
    Move { image_id: u64, position: usize },
    SetNotes { notes: String },
}

fn check_unique(entries: &[ReportEntry]) -> Result<(), ReportError> {
    let mut seen = std::collections::HashSet::new();
    for e in entries {
        if !seen.insert(e.image_id) {
            return Err(ReportError::DuplicateEntry(e.image_id));
        }
    }
    Ok(())
}

impl Report {
    pub fn new(
        report_id: String,
        query_ref: String,
        criteria: SearchCriteria,
        entries: Vec<ReportEntry>,
        now: DateTime<Utc>,
    ) -> Result<Self, ReportError> {
        check_unique(&entries)?;
        Ok(Self { report_id, query_ref, criteria, notes: String::new(), entries, created_at: now, updated_at: now })
    }

    pub fn position_of(&self, image_id: u64) -> Option<usize> {
        self.entries.iter().position(|e| e.image_id == image_id)
    }

    /// Applies one edit. On error the report is left untouched. On success
    /// `updated_at` moves to `now`, or just past its old value if the clock
    /// has not advanced.
    pub fn apply(&mut self, edit: CurateEdit, now: DateTime<Utc>) -> Result<(), ReportError> {
        let len = self.entries.len();
        match edit {
            CurateEdit::Add { entry, position } => {
                if self.position_of(entry.image_id).is_some() {
                    return Err(ReportError::DuplicateEntry(entry.image_id));
                }
                let position = position.unwrap_or(len);
                if position > len {
                    return Err(ReportError::PositionOutOfRange { position, len });
                }
                self.entries.insert(position, entry);
            }
            CurateEdit::Remove { image_id } => {
                let at = self.position_of(image_id).ok_or(ReportError::UnknownEntry(image_id))?;
                self.entries.remove(at);
            }
            CurateEdit::Move { image_id, position } => {
                let at = self.position_of(image_id).ok_or(ReportError::UnknownEntry(image_id))?;
                if position >= len {
                    return Err(ReportError::PositionOutOfRange { position, len });
                }
                let entry = self.entries.remove(at);
                self.entries.insert(position, entry);
            }
            CurateEdit::SetNotes { notes } => self.notes = notes,
        }
        self.updated_at = now.max(self.updated_at + Duration::nanoseconds(1));
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("report serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ReportError> {
        let report: Report = serde_json::from_slice(bytes)?;
        check_unique(&report.entries)?;
        Ok(report)
    }
}
