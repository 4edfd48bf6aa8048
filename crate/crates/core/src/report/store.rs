//! One JSON file per report under a directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::Utc;

use super::{CurateEdit, Report, ReportEntry, ReportError, SearchCriteria};

#[derive(Debug)]
pub struct ReportStore {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn io_err(path: &Path, source: std::io::Error) -> ReportError {
    ReportError::Io { path: path.display().to_string(), source }
}

impl ReportStore {
    /// Opens (creating if needed) a report directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ReportError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir, locks: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Report ids are UUIDs; anything else cannot name a file here.
    fn path_for(&self, report_id: &str) -> Result<PathBuf, ReportError> {
        let id = uuid::Uuid::parse_str(report_id).map_err(|_| ReportError::UnknownReport(report_id.to_string()))?;
        Ok(self.dir.join(format!("{}.json", id.hyphenated())))
    }

    fn lock_for(&self, report_id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(report_id.to_string()).or_default().clone()
    }

    fn write(&self, report: &Report) -> Result<(), ReportError> {
        let path = self.path_for(&report.report_id)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, report.to_json()).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }

    pub fn create(
        &self,
        query_ref: String,
        criteria: SearchCriteria,
        entries: Vec<ReportEntry>,
    ) -> Result<Report, ReportError> {
        let id = uuid::Uuid::new_v4().hyphenated().to_string();
        let report = Report::new(id, query_ref, criteria, entries, Utc::now())?;
        self.write(&report)?;
        Ok(report)
    }

    pub fn get(&self, report_id: &str) -> Result<Report, ReportError> {
        let path = self.path_for(report_id)?;
        match fs::read(&path) {
            Ok(bytes) => Report::from_json(&bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(ReportError::UnknownReport(report_id.to_string()))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }

    /// Applies one edit under the report's write lock and persists it.
    pub fn curate(&self, report_id: &str, edit: CurateEdit) -> Result<Report, ReportError> {
        let lock = self.lock_for(report_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut report = self.get(report_id)?;
        report.apply(edit, Utc::now())?;
        self.write(&report)?;
        Ok(report)
    }
}
