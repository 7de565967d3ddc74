use std::collections::HashMap;

use chrono::{Duration, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use super::event::{ClinicalEvent, EventTime, PatientTimeline};
use crate::warning::{Warning, WarningKind};

pub const ADMISSION_KEY: &str = "hadm_id";
pub const STAY_KEY: &str = "stay_id";

/// Sentinel written in place of pharmacy medication names that would leak a
/// prescription target.
pub const MASK_TOKEN: &str = "[MASKED]";

fn end_of_day() -> NaiveTime {
    NaiveTime::from_hms_opt(23, 59, 59).expect("valid time")
}

fn eventtype_is(event: &ClinicalEvent, value: &str) -> bool {
    event.column_values("eventtype").any(|v| v.eq_ignore_ascii_case(value))
}

/// Latest timed event per link value among events accepted by `pick`.
fn latest_by_link<F>(events: &[ClinicalEvent], key: &str, pick: F) -> HashMap<String, NaiveDateTime>
where
    F: Fn(&ClinicalEvent) -> bool,
{
    let mut out: HashMap<String, NaiveDateTime> = HashMap::new();
    for e in events.iter().filter(|e| pick(e)) {
        let (Some(id), Some(ts)) = (e.link(key), e.timestamp) else {
            continue;
        };
        out.entry(id.to_string())
            .and_modify(|t| *t = (*t).max(ts.instant))
            .or_insert(ts.instant);
    }
    out
}

/// Hospital discharge time per admission. Discharge-note events win; a
/// `transfers` row of eventtype `discharge` is the fallback.
fn hospital_discharges(events: &[ClinicalEvent]) -> HashMap<String, NaiveDateTime> {
    let mut notes = latest_by_link(events, ADMISSION_KEY, |e| e.category == "discharge");
    let transfers = latest_by_link(events, ADMISSION_KEY, |e| {
        e.category == "transfers" && eventtype_is(e, "discharge")
    });
    for (id, t) in transfers {
        notes.entry(id).or_insert(t);
    }
    notes
}

fn ed_discharges(events: &[ClinicalEvent]) -> HashMap<String, NaiveDateTime> {
    latest_by_link(events, STAY_KEY, |e| {
        e.category == "edstays" && eventtype_is(e, "discharge")
    })
}

fn needs_time(e: &ClinicalEvent) -> bool {
    e.timestamp.is_none_or(|t| t.is_day_only())
}

/// Assigns second-precision times to coded events that lack them:
///
/// * `diagnoses_icd`: one minute before the admission's hospital discharge
/// * `diagnosis` (ED): one minute before the stay's ED discharge
/// * day-only `procedures_icd`: 23:59:59 on that day
///
/// Diagnoses with no discharge to anchor on lose their time, which keeps them
/// out of every sample window, and produce a warning.
pub fn enrich_timestamps(mut timeline: PatientTimeline) -> (PatientTimeline, Vec<Warning>) {
    let discharges = hospital_discharges(&timeline.events);
    let ed = ed_discharges(&timeline.events);
    let one_minute = Duration::seconds(60);
    let mut warnings = Vec::new();

    for (idx, event) in timeline.events.iter_mut().enumerate() {
        match event.category.as_str() {
            "diagnoses_icd" if needs_time(event) => match event.link(ADMISSION_KEY).and_then(|id| discharges.get(id)) {
                Some(t) => event.timestamp = Some(EventTime::second(*t - one_minute)),
                None => {
                    event.timestamp = None;
                    warnings.push(Warning::new(
                        &timeline.subject_id,
                        WarningKind::MissingDischarge,
                        Some(idx),
                        format!(
                            "diagnoses_icd for admission {:?} has no discharge event",
                            event.link(ADMISSION_KEY)
                        ),
                    ));
                }
            },
            "diagnosis" if needs_time(event) => match event.link(STAY_KEY).and_then(|id| ed.get(id)) {
                Some(t) => event.timestamp = Some(EventTime::second(*t - one_minute)),
                None => {
                    event.timestamp = None;
                    warnings.push(Warning::new(
                        &timeline.subject_id,
                        WarningKind::MissingEdDischarge,
                        Some(idx),
                        format!(
                            "diagnosis for ED stay {:?} has no ED discharge event",
                            event.link(STAY_KEY)
                        ),
                    ));
                }
            },
            "procedures_icd" => {
                if let Some(ts) = event.timestamp.filter(EventTime::is_day_only) {
                    let day = ts.instant.date();
                    event.timestamp = Some(EventTime::second(day.and_time(end_of_day())));
                }
            }
            _ => {}
        }
    }
    timeline.sort();
    (timeline, warnings)
}

/// Discharge-summary fields that are already observable when the patient is
/// admitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelocationConfig {
    pub fields: Vec<String>,
}

impl Default for RelocationConfig {
    fn default() -> Self {
        Self {
            fields: vec![
                "social history".into(),
                "chief complaint".into(),
                "past medical history".into(),
                "physical examination".into(),
            ],
        }
    }
}

fn field_key(name: &str) -> String {
    name.trim().to_lowercase().replace(['_', '-'], " ")
}

impl RelocationConfig {
    fn matches(&self, column: &str) -> bool {
        let key = field_key(column);
        self.fields.iter().any(|f| field_key(f) == key)
    }
}

/// Moves admission-observable columns from each discharge event onto the
/// admission event with the same `hadm_id`.
pub fn relocate_admission_context(
    mut timeline: PatientTimeline,
    config: &RelocationConfig,
) -> (PatientTimeline, Vec<Warning>) {
    let mut warnings = Vec::new();
    let admissions: HashMap<String, usize> = timeline
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.category == "admissions")
        .filter_map(|(i, e)| e.link(ADMISSION_KEY).map(|id| (id.to_string(), i)))
        .collect();

    for d in 0..timeline.events.len() {
        if timeline.events[d].category != "discharge" {
            continue;
        }
        let moving: Vec<usize> = timeline.events[d]
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| config.matches(c))
            .map(|(i, _)| i)
            .collect();
        if moving.is_empty() {
            continue;
        }

        let discharge = &mut timeline.events[d];
        let fields: Vec<(String, Option<String>)> = moving
            .iter()
            .map(|&i| {
                let value = discharge.records.first().and_then(|r| r[i].clone());
                (discharge.columns[i].clone(), value)
            })
            .collect();
        for &i in moving.iter().rev() {
            discharge.columns.remove(i);
            for row in &mut discharge.records {
                row.remove(i);
            }
        }
        let target = discharge.link(ADMISSION_KEY).and_then(|id| admissions.get(id)).copied();

        match target {
            Some(a) => {
                let admission = &mut timeline.events[a];
                for (column, value) in fields {
                    if admission.column_index(&column).is_some() {
                        continue;
                    }
                    admission.columns.push(column);
                    for row in &mut admission.records {
                        row.push(value.clone());
                    }
                }
            }
            None => warnings.push(Warning::new(
                &timeline.subject_id,
                WarningKind::OrphanedContext,
                Some(d),
                format!(
                    "dropped {} admission-context field(s): no admission event for {:?}",
                    fields.len(),
                    timeline.events[d].link(ADMISSION_KEY)
                ),
            )),
        }
    }
    (timeline, warnings)
}

/// Replaces pharmacy medication names with [`MASK_TOKEN`] when the sample
/// target is a prescriptions event. With a target admission only pharmacy
/// events of that admission are masked; without one every pharmacy event is.
pub fn mask_pharmacy_leakage(
    mut window: Vec<ClinicalEvent>,
    target_category: &str,
    target_admission: Option<&str>,
) -> Vec<ClinicalEvent> {
    if target_category != "prescriptions" {
        return window;
    }
    for event in window.iter_mut().filter(|e| e.category == "pharmacy") {
        if let (Some(target), Some(own)) = (target_admission, event.link(ADMISSION_KEY)) {
            if target != own {
                continue;
            }
        }
        let Some(col) = event.column_index("medication") else {
            continue;
        };
        for row in &mut event.records {
            if row[col].is_some() {
                row[col] = Some(MASK_TOKEN.to_string());
            }
        }
    }
    window
}
