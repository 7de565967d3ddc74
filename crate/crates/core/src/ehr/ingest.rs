//! Reads per-table newline-delimited JSON files described by a manifest and
//! groups rows into raw events per subject.
//!
//! Rows of one table sharing subject, timestamp string and link values form a
//! single event, in order of first appearance.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::event::RawEvent;
use super::EhrError;

fn default_subject_column() -> String {
    "subject_id".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub category: String,
    pub file: String,
    #[serde(default = "default_subject_column")]
    pub subject_column: String,
    #[serde(default)]
    pub timestamp_column: Option<String>,
    /// Rendered columns, in display order.
    pub columns: Vec<String>,
    /// Identifier columns kept as event links (e.g. `hadm_id`).
    #[serde(default)]
    pub link_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestManifest {
    pub tables: Vec<TableSpec>,
}

impl IngestManifest {
    pub fn load(path: &Path) -> Result<Self, EhrError> {
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|e| EhrError::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

fn read(path: &Path) -> Result<String, EhrError> {
    std::fs::read_to_string(path).map_err(|e| EhrError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn cell(value: Option<&Value>) -> Option<String> {
    match value? {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

/// Events grouped by subject id.
pub type SubjectEvents = BTreeMap<String, Vec<RawEvent>>;

type GroupKey = (String, Option<String>, Vec<Option<String>>);

/// Groups the rows of one table's JSONL text into raw events.
pub fn ingest_table(spec: &TableSpec, text: &str, out: &mut SubjectEvents) -> Result<(), EhrError> {
    // (subject, timestamp, links) -> position in out[subject]
    let mut groups: HashMap<GroupKey, usize> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: serde_json::Map<String, Value> = serde_json::from_str(line).map_err(|e| EhrError::Parse {
            location: format!("{}:{}", spec.file, n + 1),
            message: e.to_string(),
        })?;
        let subject = cell(row.get(&spec.subject_column)).ok_or_else(|| EhrError::Parse {
            location: format!("{}:{}", spec.file, n + 1),
            message: format!("missing subject column {:?}", spec.subject_column),
        })?;
        let timestamp = spec.timestamp_column.as_ref().and_then(|c| cell(row.get(c)));
        let links: Vec<Option<String>> = spec.link_columns.iter().map(|c| cell(row.get(c))).collect();
        let values: Vec<Option<String>> = spec.columns.iter().map(|c| cell(row.get(c))).collect();

        let events = out.entry(subject.clone()).or_default();
        let key = (subject, timestamp.clone(), links.clone());
        let idx = *groups.entry(key).or_insert_with(|| {
            let link_map = spec
                .link_columns
                .iter()
                .zip(&links)
                .filter_map(|(k, v)| v.as_ref().map(|v| (k.clone(), v.clone())))
                .collect();
            events.push(RawEvent {
                category: spec.category.clone(),
                timestamp,
                columns: spec.columns.clone(),
                records: Vec::new(),
                links: link_map,
            });
            events.len() - 1
        });
        events[idx].records.push(values);
    }
    Ok(())
}

/// Loads every table listed in `manifest.json` under `dir`.
pub fn ingest_dir(dir: &Path, manifest: &IngestManifest) -> Result<SubjectEvents, EhrError> {
    let mut out = SubjectEvents::new();
    for table in &manifest.tables {
        let text = read(&dir.join(&table.file))?;
        ingest_table(table, &text, &mut out)?;
    }
    Ok(out)
}
