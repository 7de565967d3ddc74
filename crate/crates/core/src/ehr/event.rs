use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::EhrError;

/// Categories rendered as untimestamped header blocks at the top of a timeline.
pub const HEADER_CATEGORIES: &[&str] = &["patients", "demographics"];

const SECOND_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
const DAY_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimePrecision {
    Second,
    Day,
}

/// An event instant together with the precision the source recorded it at.
///
/// Day-precision times sit at midnight until enrichment assigns them a
/// concrete second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventTime {
    pub instant: NaiveDateTime,
    pub precision: TimePrecision,
}

impl EventTime {
    pub fn second(instant: NaiveDateTime) -> Self {
        Self {
            instant,
            precision: TimePrecision::Second,
        }
    }

    pub fn day(date: NaiveDate) -> Self {
        Self {
            instant: date.and_time(NaiveTime::MIN),
            precision: TimePrecision::Day,
        }
    }

    /// Accepts `YYYY-MM-DD HH:MM:SS`, `YYYY-MM-DDTHH:MM:SS`, `YYYY-MM-DD HH:MM`
    /// and day-only `YYYY-MM-DD`.
    pub fn parse(raw: &str) -> Option<Self> {
        let s = raw.trim();
        for fmt in [SECOND_FORMAT, "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
            if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
                return Some(Self::second(t));
            }
        }
        NaiveDate::parse_from_str(s, DAY_FORMAT).ok().map(Self::day)
    }

    pub fn is_day_only(&self) -> bool {
        self.precision == TimePrecision::Day
    }
}

impl Ord for EventTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.instant.cmp(&other.instant)
    }
}

impl PartialOrd for EventTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for EventTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.precision {
            TimePrecision::Second => write!(f, "{}", self.instant.format(SECOND_FORMAT)),
            TimePrecision::Day => write!(f, "{}", self.instant.format(DAY_FORMAT)),
        }
    }
}

impl Serialize for EventTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        EventTime::parse(&raw).ok_or_else(|| serde::de::Error::custom(format!("invalid event time {raw:?}")))
    }
}

/// Formats an instant the way rendered event titles and sample records do.
pub fn format_instant(t: &NaiveDateTime) -> String {
    t.format(SECOND_FORMAT).to_string()
}

pub fn parse_instant(raw: &str) -> Option<NaiveDateTime> {
    EventTime::parse(raw).map(|t| t.instant)
}

/// One clinical event: a category, an optional time and a small table of rows
/// that all share `columns`. A `None` cell is a missing value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalEvent {
    pub category: String,
    pub timestamp: Option<EventTime>,
    pub columns: Vec<String>,
    pub records: Vec<Vec<Option<String>>>,
    /// Linkage identifiers such as `hadm_id` or `stay_id`; never rendered.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub links: BTreeMap<String, String>,
}

impl ClinicalEvent {
    pub fn new(category: impl Into<String>, timestamp: Option<EventTime>, columns: Vec<String>) -> Self {
        Self {
            category: category.into(),
            timestamp,
            columns,
            records: Vec::new(),
            links: BTreeMap::new(),
        }
    }

    pub fn with_link(mut self, key: &str, value: &str) -> Self {
        self.links.insert(key.to_string(), value.to_string());
        self
    }

    /// Appends a row given as `(column, value)` pairs in column order.
    pub fn push_row<I, S>(&mut self, values: I)
    where
        I: IntoIterator<Item = Option<S>>,
        S: Into<String>,
    {
        let row: Vec<Option<String>> = values.into_iter().map(|v| v.map(Into::into)).collect();
        debug_assert_eq!(row.len(), self.columns.len());
        self.records.push(row);
    }

    pub fn is_header(&self) -> bool {
        HEADER_CATEGORIES.contains(&self.category.as_str())
    }

    pub fn link(&self, key: &str) -> Option<&str> {
        self.links.get(key).map(String::as_str)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one column, skipping missing cells.
    pub fn column_values<'a>(&'a self, name: &str) -> impl Iterator<Item = &'a str> + 'a {
        let idx = self.column_index(name);
        self.records
            .iter()
            .filter_map(move |row| idx.and_then(|i| row[i].as_deref()))
    }

    /// Checks the row-shape and non-emptiness invariants.
    pub fn validate(&self) -> Result<(), EhrError> {
        if self.records.is_empty() && !self.is_header() {
            return Err(EhrError::InvalidEvent {
                category: self.category.clone(),
                reason: "event has no records".into(),
            });
        }
        if let Some(row) = self.records.iter().find(|r| r.len() != self.columns.len()) {
            return Err(EhrError::InvalidEvent {
                category: self.category.clone(),
                reason: format!(
                    "row has {} values but event declares {} columns",
                    row.len(),
                    self.columns.len()
                ),
            });
        }
        Ok(())
    }

    /// Visible in a sample window: header events always, other events only
    /// once they carry a time.
    pub fn visible_at(&self, t: &NaiveDateTime) -> bool {
        match &self.timestamp {
            Some(ts) => ts.instant <= *t,
            None => self.is_header(),
        }
    }

    pub fn to_raw(&self) -> RawEvent {
        RawEvent {
            category: self.category.clone(),
            timestamp: self.timestamp.map(|t| t.to_string()),
            columns: self.columns.clone(),
            records: self.records.clone(),
            links: self.links.clone(),
        }
    }
}

/// An event as read from disk, before its timestamp string is parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    pub category: String,
    #[serde(default)]
    pub timestamp: Option<String>,
    pub columns: Vec<String>,
    pub records: Vec<Vec<Option<String>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub links: BTreeMap<String, String>,
}

impl RawEvent {
    pub fn parse(self, index: usize) -> Result<ClinicalEvent, EhrError> {
        let timestamp = match self.timestamp.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(raw) => Some(EventTime::parse(raw).ok_or_else(|| EhrError::MalformedTimestamp {
                index,
                raw: raw.to_string(),
            })?),
        };
        let event = ClinicalEvent {
            category: self.category,
            timestamp,
            columns: self.columns,
            records: self.records,
            links: self.links,
        };
        event.validate()?;
        Ok(event)
    }
}

/// All events of one subject in chronological order. Untimestamped events
/// come first, then timed events by instant; ties keep input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientTimeline {
    pub subject_id: String,
    pub events: Vec<ClinicalEvent>,
}

impl PatientTimeline {
    pub fn new(subject_id: impl Into<String>, events: Vec<ClinicalEvent>) -> Self {
        let mut timeline = Self {
            subject_id: subject_id.into(),
            events,
        };
        timeline.sort();
        timeline
    }

    /// Stable chronological sort.
    pub fn sort(&mut self) {
        self.events.sort_by_key(sort_key);
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| sort_key(&w[0]) <= sort_key(&w[1]))
    }

    pub fn to_raw(&self) -> Vec<RawEvent> {
        self.events.iter().map(ClinicalEvent::to_raw).collect()
    }
}

fn sort_key(e: &ClinicalEvent) -> (bool, Option<NaiveDateTime>) {
    (e.timestamp.is_some(), e.timestamp.map(|t| t.instant))
}
