//! Append-only study memory with a regenerated plain-text ledger.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, SecondsFormat, Utc};
use cia_grid::{BusId, ConnectionType};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::CapacityResult;
use crate::pipeline::{CiaReport, Decision};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Cia,
    MaxCapacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub id: u64,
    pub timestamp: DateTime<Utc>,
    pub session_id: String,
    pub case_name: String,
    pub bus: BusId,
    pub p_mw: f64,
    pub ctype: ConnectionType,
    pub status: Decision,
    pub hard_count: usize,
    pub borderline_count: usize,
    pub kind: StudyKind,
    #[serde(default)]
    pub max_mw: Option<f64>,
    pub summary: String,
}

/// Everything but the id, which the store assigns.
#[derive(Debug, Clone, PartialEq)]
pub struct NewStudy {
    pub timestamp: DateTime<Utc>,
    pub session_id: String,
    pub case_name: String,
    pub bus: BusId,
    pub p_mw: f64,
    pub ctype: ConnectionType,
    pub status: Decision,
    pub hard_count: usize,
    pub borderline_count: usize,
    pub kind: StudyKind,
    pub max_mw: Option<f64>,
    pub summary: String,
}

impl NewStudy {
    pub fn from_report(session_id: &str, report: &CiaReport) -> Self {
        let (hard, borderline) = report.violation_counts();
        Self {
            timestamp: report.timestamp,
            session_id: session_id.to_string(),
            case_name: report.case_name.clone(),
            bus: report.connection.bus,
            p_mw: report.connection.p_mw,
            ctype: report.connection.ctype,
            status: report.decision,
            hard_count: hard,
            borderline_count: borderline,
            kind: StudyKind::Cia,
            max_mw: None,
            summary: report.summary_line(),
        }
    }

    pub fn from_capacity(session_id: &str, r: &CapacityResult) -> Self {
        let status = if r.max_approved_mw > 0.0 { Decision::Approve } else { Decision::Reject };
        let (hard, borderline) = r.boundary_reject.as_ref().map_or((0, 0), |b| b.violation_counts());
        let limit = r
            .limiting_factor()
            .map(|f| format!(", limited by {}", f.as_str()))
            .unwrap_or_default();
        Self {
            timestamp: Utc::now(),
            session_id: session_id.to_string(),
            case_name: r.case_name.clone(),
            bus: r.bus,
            p_mw: r.max_approved_mw,
            ctype: r.ctype,
            status,
            hard_count: hard,
            borderline_count: borderline,
            kind: StudyKind::MaxCapacity,
            max_mw: Some(r.max_approved_mw),
            summary: format!(
                "max {} at bus {} on {}: {:.2} MW after {} evaluations{limit}",
                r.ctype, r.bus, r.case_name, r.max_approved_mw, r.iterations
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Recall {
    ByBus { case: String, bus: BusId },
    ByCase { case: String },
    Keyword { keyword: String },
    MaxCapacity { case: String, bus: BusId },
}

impl Recall {
    pub fn matches(&self, r: &StudyRecord) -> bool {
        match self {
            Recall::ByBus { case, bus } => r.case_name == *case && r.bus == *bus,
            Recall::ByCase { case } => r.case_name == *case,
            Recall::Keyword { keyword } => r.summary.to_lowercase().contains(&keyword.to_lowercase()),
            Recall::MaxCapacity { case, bus } => {
                r.kind == StudyKind::MaxCapacity && r.case_name == *case && r.bus == *bus
            }
        }
    }
}

struct Inner {
    records: Vec<StudyRecord>,
}

/// The store. Appends are serialized by an internal lock; the memory file
/// only ever grows.
pub struct StudyMemory {
    path: Option<PathBuf>,
    ledger_path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MemoryError + '_ {
    move |source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl StudyMemory {
    /// Not backed by a file. Used for scripted runs and tests.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            ledger_path: None,
            inner: Mutex::new(Inner { records: vec![] }),
        }
    }

    /// Opens (or creates) `path`; the ledger sits next to it as `ledger.txt`
    /// unless `ledger_path` is given.
    pub fn open(path: impl Into<PathBuf>, ledger_path: Option<PathBuf>) -> Result<Self, MemoryError> {
        let path = path.into();
        let ledger_path = ledger_path.unwrap_or_else(|| path.with_file_name("ledger.txt"));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut records = Vec::new();
        if path.exists() {
            let f = File::open(&path).map_err(io_err(&path))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io_err(&path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: StudyRecord = serde_json::from_str(&line).map_err(|e| MemoryError::Corrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                records.push(rec);
            }
        }
        let mem = Self {
            path: Some(path),
            ledger_path: Some(ledger_path),
            inner: Mutex::new(Inner { records }),
        };
        mem.write_ledger(&mem.lock())?;
        Ok(mem)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Checks that the backing file could take another append, without
    /// writing anything.
    pub fn check_storage(&self) -> Result<(), MemoryError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if path.exists() {
            return OpenOptions::new().append(true).open(path).map(|_| ()).map_err(io_err(path));
        }
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let meta = fs::metadata(dir).map_err(io_err(dir))?;
        if meta.is_dir() && !meta.permissions().readonly() {
            Ok(())
        } else {
            Err(io_err(dir)(std::io::Error::new(std::io::ErrorKind::PermissionDenied, "not a writable directory")))
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn ledger_path(&self) -> Option<&Path> {
        self.ledger_path.as_deref()
    }

    pub fn append(&self, study: NewStudy) -> Result<u64, MemoryError> {
        let mut inner = self.lock();
        let id = inner.records.last().map_or(1, |r| r.id + 1);
        let rec = StudyRecord {
            id,
            timestamp: study.timestamp,
            session_id: study.session_id,
            case_name: study.case_name,
            bus: study.bus,
            p_mw: study.p_mw,
            ctype: study.ctype,
            status: study.status,
            hard_count: study.hard_count,
            borderline_count: study.borderline_count,
            kind: study.kind,
            max_mw: study.max_mw,
            summary: study.summary.replace('\n', " "),
        };
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
            f.write_all(line.as_bytes()).map_err(io_err(path))?;
            f.sync_data().map_err(io_err(path))?;
        }
        inner.records.push(rec);
        self.write_ledger(&inner)?;
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> Vec<StudyRecord> {
        self.lock().records.clone()
    }

    /// Matching records, newest first. MaxCapacity returns at most one.
    pub fn recall(&self, query: &Recall) -> Vec<StudyRecord> {
        let inner = self.lock();
        let mut hits: Vec<StudyRecord> = inner.records.iter().rev().filter(|r| query.matches(r)).cloned().collect();
        if matches!(query, Recall::MaxCapacity { .. }) {
            hits.truncate(1);
        }
        hits
    }

    /// Entries worth showing the model: same session first, then exact
    /// case and bus, then same case, then recency.
    pub fn relevant(&self, session_id: &str, case: Option<&str>, bus: Option<BusId>, limit: usize) -> Vec<StudyRecord> {
        let inner = self.lock();
        let mut recs: Vec<&StudyRecord> = inner.records.iter().collect();
        recs.sort_by_key(|r| {
            let same_case = case.is_some_and(|c| c == r.case_name);
            let exact = same_case && bus.is_some_and(|b| b == r.bus);
            std::cmp::Reverse((r.session_id == session_id, exact, same_case, r.id))
        });
        recs.into_iter().take(limit).cloned().collect()
    }

    pub fn ledger_text(&self) -> String {
        render_ledger(&self.lock().records)
    }

    /// Rewrites the ledger file from the records and returns its text.
    pub fn regenerate_ledger(&self) -> Result<String, MemoryError> {
        let inner = self.lock();
        self.write_ledger(&inner)?;
        Ok(render_ledger(&inner.records))
    }

    fn write_ledger(&self, inner: &Inner) -> Result<(), MemoryError> {
        if let Some(p) = &self.ledger_path {
            fs::write(p, render_ledger(&inner.records)).map_err(io_err(p))?;
        }
        Ok(())
    }
}

pub const LEDGER_COLUMNS: [&str; 12] = [
    "id", "timestamp", "session", "case", "bus", "type", "mw", "kind", "status", "hard", "borderline", "summary",
];

pub fn render_ledger(records: &[StudyRecord]) -> String {
    let mut out = String::from("STUDY LEDGER\n");
    out.push_str(&LEDGER_COLUMNS.join(" | "));
    out.push('\n');
    for r in records {
        let kind = match r.kind {
            StudyKind::Cia => "cia",
            StudyKind::MaxCapacity => "max_capacity",
        };
        let row = [
            r.id.to_string(),
            r.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            r.session_id.clone(),
            r.case_name.clone(),
            r.bus.to_string(),
            r.ctype.to_string(),
            format!("{:.2}", r.p_mw),
            kind.to_string(),
            r.status.to_string(),
            r.hard_count.to_string(),
            r.borderline_count.to_string(),
            r.summary.replace('|', "/"),
        ];
        out.push_str(&row.join(" | "));
        out.push('\n');
    }
    out
}

/// Data rows in a ledger produced by [`render_ledger`].
pub fn ledger_row_count(text: &str) -> usize {
    text.lines().skip(2).filter(|l| !l.trim().is_empty()).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(bus: u32, status: Decision) -> NewStudy {
        NewStudy {
            timestamp: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
            session_id: "s".into(),
            case_name: "ieee14".into(),
            bus: BusId(bus),
            p_mw: 10.0,
            ctype: ConnectionType::Load,
            status,
            hard_count: 0,
            borderline_count: 0,
            kind: StudyKind::Cia,
            max_mw: None,
            summary: format!("10 MW load at bus {bus} on ieee14: {status}"),
        }
    }

    #[test]
    fn ids_are_sequential() {
        let m = StudyMemory::in_memory();
        assert_eq!(m.append(study(1, Decision::Approve)).unwrap(), 1);
        assert_eq!(m.append(study(2, Decision::Reject)).unwrap(), 2);
    }

    #[test]
    fn empty_ledger_is_header_only() {
        let m = StudyMemory::in_memory();
        assert_eq!(ledger_row_count(&m.ledger_text()), 0);
        assert_eq!(m.ledger_text().lines().count(), 2);
    }

    #[test]
    fn relevance_prefers_session_then_bus() {
        let m = StudyMemory::in_memory();
        let mut other = study(5, Decision::Approve);
        other.session_id = "other".into();
        m.append(other).unwrap();
        m.append(study(3, Decision::Approve)).unwrap();
        m.append(study(5, Decision::Approve)).unwrap();
        let r = m.relevant("s", Some("ieee14"), Some(BusId(5)), 5);
        assert_eq!(r.iter().map(|r| r.id).collect::<Vec<_>>(), vec![3, 2, 1]);
    }
}
