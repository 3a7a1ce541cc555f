//! Persistent store of prompt lessons (JSON lines).

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::memory::MemoryError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesson {
    pub id: u64,
    pub text: String,
    #[serde(default)]
    pub source_scenario_ids: Vec<String>,
    pub created_at: DateTime<Utc>,
}

/// Collapses whitespace so a lesson is one paragraph. Returns None if empty.
pub fn normalize_lesson(text: &str) -> Option<String> {
    let t = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let t = t.trim_start_matches(['-', '*', ' ']).trim().to_string();
    (!t.is_empty()).then_some(t)
}

pub struct LessonStore {
    path: Option<PathBuf>,
    lessons: Mutex<Vec<Lesson>>,
}

impl LessonStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            lessons: Mutex::new(vec![]),
        }
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, MemoryError> {
        let path = path.into();
        let io = |source| MemoryError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut lessons = Vec::new();
        if path.exists() {
            let f = File::open(&path).map_err(io)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                lessons.push(serde_json::from_str(&line).map_err(|e| MemoryError::Corrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?);
            }
        }
        Ok(Self {
            path: Some(path),
            lessons: Mutex::new(lessons),
        })
    }

    /// Appends a lesson unless its text is empty or already stored.
    pub fn append(&self, text: &str, sources: Vec<String>) -> Result<Option<Lesson>, MemoryError> {
        let Some(text) = normalize_lesson(text) else {
            return Ok(None);
        };
        let mut lessons = self.lessons.lock().unwrap_or_else(|e| e.into_inner());
        if lessons.iter().any(|l| l.text == text) {
            return Ok(None);
        }
        let lesson = Lesson {
            id: lessons.last().map_or(1, |l| l.id + 1),
            text,
            source_scenario_ids: sources,
            created_at: Utc::now(),
        };
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| MemoryError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            writeln!(f, "{}", serde_json::to_string(&lesson).expect("lesson serializes")).map_err(|source| {
                MemoryError::Io {
                    path: path.display().to_string(),
                    source,
                }
            })?;
        }
        lessons.push(lesson.clone());
        Ok(Some(lesson))
    }

    pub fn all(&self) -> Vec<Lesson> {
        self.lessons.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn texts(&self) -> Vec<String> {
        self.all().into_iter().map(|l| l.text).collect()
    }

    pub fn len(&self) -> usize {
        self.lessons.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
