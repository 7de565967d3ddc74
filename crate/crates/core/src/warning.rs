use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    /// A `diagnoses_icd` event whose admission has no discharge event.
    MissingDischarge,
    /// An ED `diagnosis` event whose stay has no ED discharge.
    MissingEdDischarge,
    /// Relocatable discharge fields with no matching admission event.
    OrphanedContext,
    /// The label column of a decision target is absent.
    MissingItemColumn,
    /// Every label cell of a decision target is missing.
    EmptyAnswer,
    /// The decision target shares the prediction timestamp.
    TimestampTie,
}

/// A non-fatal problem found while processing one subject. Warnings are
/// returned to the caller, never logged globally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub subject_id: String,
    pub kind: WarningKind,
    pub event_index: Option<usize>,
    pub message: String,
}

impl Warning {
    pub fn new(subject_id: &str, kind: WarningKind, event_index: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.to_string(),
            kind,
            event_index,
            message: message.into(),
        }
    }
}
