use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::event::PatientTimeline;
use super::EhrError;

/// Value written when a code has no entry in its map.
pub const UNMAPPED: &str = "unmapped";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeMapKind {
    IcdToCcs,
    NdcToAtc,
}

impl CodeMapKind {
    /// Column holding the source code.
    pub fn code_column(self) -> &'static str {
        match self {
            CodeMapKind::IcdToCcs => "icd_code",
            CodeMapKind::NdcToAtc => "ndc",
        }
    }

    /// Column appended with the mapped category name.
    pub fn derived_column(self) -> &'static str {
        match self {
            CodeMapKind::IcdToCcs => "ccs type",
            CodeMapKind::NdcToAtc => "atc type",
        }
    }

    pub fn categories(self) -> &'static [&'static str] {
        match self {
            CodeMapKind::IcdToCcs => &["diagnoses_icd", "procedures_icd", "diagnosis"],
            CodeMapKind::NdcToAtc => &["prescriptions", "pharmacy", "medrecon"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMap {
    pub kind: CodeMapKind,
    entries: HashMap<String, String>,
}

impl CodeMap {
    pub fn from_entries<I, K, V>(kind: CodeMapKind, entries: I) -> Result<Self, EhrError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut map = HashMap::new();
        for (k, v) in entries {
            let (k, v) = (k.into().trim().to_string(), v.into().trim().to_string());
            if let Some(prev) = map.get(&k) {
                if prev != &v {
                    return Err(EhrError::CodeMap(format!("code {k:?} maps to both {prev:?} and {v:?}")));
                }
            }
            map.insert(k, v);
        }
        Ok(Self { kind, entries: map })
    }

    /// Parses `source_code TAB target_name` lines. Blank lines are skipped.
    pub fn parse_tsv(kind: CodeMapKind, text: &str) -> Result<Self, EhrError> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            match (parts.next(), parts.next()) {
                (Some(code), Some(name)) if !code.trim().is_empty() && !name.trim().is_empty() => {
                    pairs.push((code, name))
                }
                _ => return Err(EhrError::CodeMap(format!("line {}: expected `code<TAB>name`", n + 1))),
            }
        }
        Self::from_entries(kind, pairs)
    }

    pub fn load(kind: CodeMapKind, path: &Path) -> Result<Self, EhrError> {
        let text = std::fs::read_to_string(path).map_err(|e| EhrError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse_tsv(kind, &text)
    }

    pub fn get(&self, code: &str) -> Option<&str> {
        self.entries.get(code.trim()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Appends the derived category column to every coded row. Events that
/// already carry the derived column are left alone, so the step is
/// idempotent and never rewrites an existing value.
pub fn apply_code_maps(mut timeline: PatientTimeline, maps: &[CodeMap]) -> PatientTimeline {
    for map in maps {
        let derived = map.kind.derived_column();
        for event in timeline
            .events
            .iter_mut()
            .filter(|e| map.kind.categories().contains(&e.category.as_str()))
        {
            if event.column_index(derived).is_some() {
                continue;
            }
            let code_col = event.column_index(map.kind.code_column());
            event.columns.push(derived.to_string());
            for row in &mut event.records {
                let mapped = code_col
                    .and_then(|i| row[i].as_deref())
                    .and_then(|code| map.get(code))
                    .unwrap_or(UNMAPPED);
                row.push(Some(mapped.to_string()));
            }
        }
    }
    timeline
}
