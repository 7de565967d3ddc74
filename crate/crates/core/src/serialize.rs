//! Markdown rendering of clinical events.
//!
//! An event renders as a title line `## {Name} [{time}]` followed by either
//! `- {Key}: {Value}` bullets (one record) or a pipe table (several records).
//! Demographic header events use a level-one title. Missing cells render as
//! `nan`.

use std::collections::HashMap;

use thiserror::Error;

use crate::ehr::ClinicalEvent;

pub const MISSING_VALUE: &str = "nan";
const SEPARATOR_CELL: &str = "------";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SerializeError {
    #[error("sample instruction is empty")]
    EmptyInstruction,
}

/// Capitalizes the first letter of every `_`- or space-separated token,
/// keeping the separators: `curr_service` becomes `Curr_Service`.
pub fn display_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    let mut at_start = true;
    for c in key.chars() {
        if at_start {
            out.extend(c.to_uppercase());
        } else {
            out.push(c);
        }
        at_start = c == '_' || c == ' ';
    }
    out
}

/// Category titles. Unknown categories fall back to [`display_key`].
#[derive(Debug, Clone)]
pub struct DisplayNames {
    names: HashMap<String, String>,
}

impl Default for DisplayNames {
    fn default() -> Self {
        let names = [
            ("patients", "Patient Demographics"),
            ("demographics", "Patient Demographics"),
            ("poe", "Provider Order Entry"),
            // spelling kept for compatibility with existing corpora
            ("labevents", "Labotary Test Events"),
            ("microbiologyevents", "Microbiology Test Events"),
            ("radiology", "Radiology Examinations"),
        ];
        Self {
            names: names.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl DisplayNames {
    pub fn with(mut self, category: &str, title: &str) -> Self {
        self.names.insert(category.to_string(), title.to_string());
        self
    }

    pub fn title(&self, category: &str) -> String {
        self.names
            .get(category)
            .cloned()
            .unwrap_or_else(|| display_key(category))
    }
}

/// Tabs become spaces and trailing whitespace is cut from every line.
fn clean(value: &str) -> String {
    let value = value.replace('\t', " ").replace('\r', "");
    value.split('\n').map(str::trim_end).collect::<Vec<_>>().join("\n")
}

fn cell(value: &Option<String>) -> String {
    match value {
        Some(v) => clean(v),
        None => MISSING_VALUE.to_string(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct MarkdownSerializer {
    pub names: DisplayNames,
}

impl MarkdownSerializer {
    pub fn new(names: DisplayNames) -> Self {
        Self { names }
    }

    pub fn render_event(&self, event: &ClinicalEvent) -> String {
        let level = if event.is_header() { "#" } else { "##" };
        let time = event
            .timestamp
            .map(|t| super::ehr::format_instant(&t.instant))
            .unwrap_or_else(|| "None".to_string());
        let mut lines = vec![format!("{level} {} [{time}]", self.names.title(&event.category))];

        match event.records.as_slice() {
            [] => {}
            [row] => {
                for (key, value) in event.columns.iter().zip(row) {
                    let value = cell(value);
                    if value.is_empty() {
                        lines.push(format!("- {}:", display_key(key)));
                    } else {
                        lines.push(format!("- {}: {}", display_key(key), value));
                    }
                }
            }
            rows if !event.columns.is_empty() => {
                let header: Vec<String> = event.columns.iter().map(|k| display_key(k)).collect();
                lines.push(format!("| {} |", header.join(" | ")));
                let sep = vec![SEPARATOR_CELL; event.columns.len()];
                lines.push(format!("| {} |", sep.join(" | ")));
                for row in rows {
                    let cells: Vec<String> = row.iter().map(cell).collect();
                    lines.push(format!("| {} |", cells.join(" | ")));
                }
            }
            _ => {}
        }
        lines.join("\n")
    }

    /// Events joined by one blank line. An empty window renders as "".
    pub fn render_window(&self, events: &[ClinicalEvent]) -> String {
        events
            .iter()
            .map(|e| self.render_event(e))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub fn render_event(event: &ClinicalEvent) -> String {
    MarkdownSerializer::default().render_event(event)
}

pub fn render_window(events: &[ClinicalEvent]) -> String {
    MarkdownSerializer::default().render_window(events)
}

/// Model input: rendered history, a blank line, then the task instruction.
pub fn render_sample_input(window_text: &str, instruction: &str) -> Result<String, SerializeError> {
    if instruction.trim().is_empty() {
        return Err(SerializeError::EmptyInstruction);
    }
    Ok(format!("{window_text}\n\n{instruction}"))
}
