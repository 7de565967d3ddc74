//! Clinical event types and the normalization chain that turns raw event
//! streams into chronological, enriched patient timelines.

mod codemap;
mod enrich;
mod event;
pub mod ingest;

use thiserror::Error;

pub use codemap::{apply_code_maps, CodeMap, CodeMapKind, UNMAPPED};
pub use enrich::{
    enrich_timestamps, mask_pharmacy_leakage, relocate_admission_context, RelocationConfig, ADMISSION_KEY, MASK_TOKEN,
    STAY_KEY,
};
pub use event::{
    format_instant, parse_instant, ClinicalEvent, EventTime, PatientTimeline, RawEvent, TimePrecision,
    HEADER_CATEGORIES,
};

use crate::warning::Warning;

#[derive(Debug, Error)]
pub enum EhrError {
    #[error("event {index}: malformed timestamp {raw:?}")]
    MalformedTimestamp { index: usize, raw: String },
    #[error("invalid {category} event: {reason}")]
    InvalidEvent { category: String, reason: String },
    #[error("code map: {0}")]
    CodeMap(String),
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parses raw timestamps and sorts events chronologically. Fails on the
/// first malformed timestamp, naming its input index.
pub fn normalize_timeline(raw_events: Vec<RawEvent>, subject_id: &str) -> Result<PatientTimeline, EhrError> {
    let events = raw_events
        .into_iter()
        .enumerate()
        .map(|(i, e)| e.parse(i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PatientTimeline::new(subject_id, events))
}

/// Settings for the full normalization chain.
#[derive(Debug, Clone, Default)]
pub struct NormalizeOptions {
    pub code_maps: Vec<CodeMap>,
    pub relocation: RelocationConfig,
}

/// Sort, enrich timestamps, attach code-map columns and relocate admission
/// context. Applying it to its own output is a no-op.
pub fn normalize_patient(
    raw_events: Vec<RawEvent>,
    subject_id: &str,
    options: &NormalizeOptions,
) -> Result<(PatientTimeline, Vec<Warning>), EhrError> {
    let timeline = normalize_timeline(raw_events, subject_id)?;
    let (timeline, mut warnings) = enrich_timestamps(timeline);
    let timeline = apply_code_maps(timeline, &options.code_maps);
    let (timeline, relocation_warnings) = relocate_admission_context(timeline, &options.relocation);
    warnings.extend(relocation_warnings);
    Ok((timeline, warnings))
}
