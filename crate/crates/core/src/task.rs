//! Task definitions and construction of decision-making and risk-prediction
//! samples from patient timelines.

use std::collections::HashSet;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::{format_instant, mask_pharmacy_leakage, ClinicalEvent, PatientTimeline, ADMISSION_KEY};
use crate::serialize::{render_sample_input, MarkdownSerializer, SerializeError};
use crate::warning::{Warning, WarningKind};

pub const DEFAULT_REGISTRY: &str = include_str!("../defaults/tasks.toml");

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task {task_id}: {reason}")]
    InvalidSpec { task_id: String, reason: String },
    #[error("answer has {answer} entities but the candidate pool holds {pool}")]
    AnswerExceedsPool { answer: usize, pool: usize },
    #[error("answer entity {0:?} is not in the task label space")]
    AnswerOutsideLabelSpace(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("task registry: {0}")]
    Registry(String),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Decision,
    Risk,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Decision => "decision",
            TaskKind::Risk => "risk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub target_category: String,
    /// Risk horizon in hours.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_hours: Option<u32>,
    /// May reference `{target}` and `{horizon}`.
    pub instruction_template: String,
    /// Column of the target event whose values are the answer entities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_column: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_space: Vec<String>,
}

fn describe_horizon(hours: u32) -> String {
    match hours {
        h if h >= 24 && h % 24 == 0 && h / 24 == 1 => "1 day".to_string(),
        h if h >= 24 && h % 24 == 0 => format!("{} days", h / 24),
        1 => "1 hour".to_string(),
        h => format!("{h} hours"),
    }
}

impl TaskSpec {
    pub fn horizon(&self) -> Option<Duration> {
        self.horizon_hours.map(|h| Duration::hours(h as i64))
    }

    /// The filled instruction; identical for every sample of the task.
    pub fn instruction(&self) -> String {
        let horizon = self.horizon_hours.map(describe_horizon).unwrap_or_default();
        self.instruction_template
            .replace("{target}", &self.target_category)
            .replace("{horizon}", &horizon)
    }

    /// Structural checks. A decision label space may still be empty here; it
    /// is usually derived from the built samples.
    pub fn validate(&self) -> Result<(), TaskError> {
        let fail = |reason: &str| TaskError::InvalidSpec {
            task_id: self.task_id.clone(),
            reason: reason.to_string(),
        };
        if self.task_id.trim().is_empty() {
            return Err(fail("empty task id"));
        }
        if self.instruction().trim().is_empty() {
            return Err(fail("empty instruction"));
        }
        match self.kind {
            TaskKind::Risk if self.horizon_hours.unwrap_or(0) == 0 => Err(fail("risk task needs a positive horizon")),
            TaskKind::Decision if self.item_column.as_deref().is_none_or(str::is_empty) => {
                Err(fail("decision task needs an item column"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskRegistry {
    #[serde(rename = "task", default)]
    pub tasks: Vec<TaskSpec>,
}

impl TaskRegistry {
    pub fn parse(text: &str) -> Result<Self, TaskError> {
        let reg: TaskRegistry = toml::from_str(text).map_err(|e| TaskError::Registry(e.to_string()))?;
        let mut seen = HashSet::new();
        for t in &reg.tasks {
            t.validate()?;
            if !seen.insert(t.task_id.as_str()) {
                return Err(TaskError::Registry(format!("duplicate task id {:?}", t.task_id)));
            }
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TaskError::Registry(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn defaults() -> Self {
        Self::parse(DEFAULT_REGISTRY).expect("bundled registry is valid")
    }

    pub fn get(&self, task_id: &str) -> Result<&TaskSpec, TaskError> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| TaskError::UnknownTask(task_id.to_string()))
    }
}

/// One instruction instance: the observable window up to `prediction_time`
/// and the answer entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSample {
    pub sample_id: String,
    pub subject_id: String,
    pub task_id: String,
    pub kind: TaskKind,
    pub prediction_time: NaiveDateTime,
    pub window: Vec<ClinicalEvent>,
    pub answer: Vec<String>,
}

impl TaskSample {
    pub fn timed_event_count(&self) -> usize {
        self.window.iter().filter(|e| e.timestamp.is_some()).count()
    }

    pub fn to_record(&self, spec: &TaskSpec, serializer: &MarkdownSerializer) -> Result<SampleRecord, TaskError> {
        let instruction = spec.instruction();
        let input_text = render_sample_input(&serializer.render_window(&self.window), &instruction)?;
        Ok(SampleRecord {
            sample_id: self.sample_id.clone(),
            subject_id: self.subject_id.clone(),
            task_id: self.task_id.clone(),
            kind: self.kind,
            prediction_time: format_instant(&self.prediction_time),
            input_text,
            answer_text: format_answer(&self.answer),
            candidates: None,
            instruction,
        })
    }
}

/// A persisted sample, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub subject_id: String,
    pub task_id: String,
    pub kind: TaskKind,
    pub prediction_time: String,
    pub input_text: String,
    pub answer_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default)]
    pub instruction: String,
}

impl SampleRecord {
    pub fn answer(&self) -> Vec<String> {
        split_answer(&self.answer_text)
    }

    /// The rendered history without the trailing instruction.
    pub fn window_text(&self) -> &str {
        let suffix = format!("\n\n{}", self.instruction);
        if !self.instruction.is_empty() {
            if let Some(w) = self.input_text.strip_suffix(&suffix) {
                return w;
            }
        }
        self.input_text
            .rsplit_once("\n\n")
            .map_or(self.input_text.as_str(), |(w, _)| w)
    }
}

fn dedup_in_order<'a, I: IntoIterator<Item = &'a str>>(values: I) -> Vec<String> {
    let mut seen = HashSet::new();
    values
        .into_iter()
        .map(str::trim)
        .filter(|v| !v.is_empty() && seen.insert(*v))
        .map(str::to_string)
        .collect()
}

fn visible_window(events: &[ClinicalEvent], t: &NaiveDateTime) -> Vec<ClinicalEvent> {
    events.iter().filter(|e| e.visible_at(t)).cloned().collect()
}

/// Decision sample predicting the entities of event `k + 1` from the events
/// up to and including `k`.
///
/// Returns `None` when the pair does not apply (no event `k + 1`, wrong target
/// category, or event `k` untimed), and `Some(Err(_))` when the target is
/// malformed. The window is cut by index, so a target sharing event `k`'s
/// timestamp stays hidden.
pub fn build_decision_sample(
    timeline: &PatientTimeline,
    spec: &TaskSpec,
    k: usize,
) -> Option<Result<TaskSample, Warning>> {
    let target = timeline.events.get(k + 1)?;
    if target.category != spec.target_category {
        return None;
    }
    let t = timeline.events[k].timestamp?.instant;
    target.timestamp?;
    let column = spec.item_column.as_deref().unwrap_or_default();
    if target.column_index(column).is_none() {
        return Some(Err(Warning::new(
            &timeline.subject_id,
            WarningKind::MissingItemColumn,
            Some(k + 1),
            format!("task {}: target event lacks column {column:?}", spec.task_id),
        )));
    }
    let answer = dedup_in_order(target.column_values(column));
    if answer.is_empty() {
        return Some(Err(Warning::new(
            &timeline.subject_id,
            WarningKind::EmptyAnswer,
            Some(k + 1),
            format!("task {}: every {column:?} value is missing", spec.task_id),
        )));
    }
    let window = visible_window(&timeline.events[..=k], &t);
    let window = mask_pharmacy_leakage(window, &spec.target_category, target.link(ADMISSION_KEY));
    Some(Ok(TaskSample {
        sample_id: format!("{}:{}:{}", spec.task_id, timeline.subject_id, k),
        subject_id: timeline.subject_id.clone(),
        task_id: spec.task_id.clone(),
        kind: TaskKind::Decision,
        prediction_time: t,
        window,
        answer,
    }))
}

/// `true` iff an event of the target category occurs strictly after `t` and
/// strictly less than `horizon` later.
pub fn risk_label(events: &[ClinicalEvent], target: &str, t: &NaiveDateTime, horizon: Duration) -> bool {
    events.iter().any(|e| {
        e.category == target
            && e.timestamp
                .is_some_and(|ts| ts.instant > *t && ts.instant - *t < horizon)
    })
}

/// Risk sample at `prediction_time`, which should be an event timestamp.
pub fn build_risk_sample(timeline: &PatientTimeline, spec: &TaskSpec, prediction_time: NaiveDateTime) -> TaskSample {
    let horizon = spec.horizon().unwrap_or_else(Duration::zero);
    let positive = risk_label(&timeline.events, &spec.target_category, &prediction_time, horizon);
    let anchor = timeline
        .events
        .iter()
        .rposition(|e| e.timestamp.is_some_and(|ts| ts.instant <= prediction_time))
        .map_or_else(|| "start".to_string(), |i| i.to_string());
    TaskSample {
        sample_id: format!("{}:{}:{}", spec.task_id, timeline.subject_id, anchor),
        subject_id: timeline.subject_id.clone(),
        task_id: spec.task_id.clone(),
        kind: TaskKind::Risk,
        prediction_time,
        window: visible_window(&timeline.events, &prediction_time),
        answer: vec![if positive { "yes" } else { "no" }.to_string()],
    }
}

/// Distinct event timestamps of a timeline, ascending.
pub fn prediction_times(timeline: &PatientTimeline) -> Vec<NaiveDateTime> {
    let mut times: Vec<NaiveDateTime> = timeline
        .events
        .iter()
        .filter_map(|e| e.timestamp.map(|t| t.instant))
        .collect();
    times.dedup();
    times
}

/// Enumerates every sample a task yields for one timeline.
pub fn build_samples(timeline: &PatientTimeline, spec: &TaskSpec) -> (Vec<TaskSample>, Vec<Warning>) {
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    match spec.kind {
        TaskKind::Decision => {
            for k in 0..timeline.events.len().saturating_sub(1) {
                match build_decision_sample(timeline, spec, k) {
                    Some(Ok(s)) => samples.push(s),
                    Some(Err(w)) => warnings.push(w),
                    None => {}
                }
            }
        }
        TaskKind::Risk => {
            for t in prediction_times(timeline) {
                samples.push(build_risk_sample(timeline, spec, t));
            }
        }
    }
    (samples, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowFilter {
    pub max_span_hours: u32,
    pub min_events: usize,
    pub max_events: usize,
}

impl Default for WindowFilter {
    fn default() -> Self {
        Self {
            max_span_hours: 24,
            min_events: 10,
            max_events: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TooFew,
    TooMany,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::TooFew => "too_few",
            DropReason::TooMany => "too_many",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterOutcome {
    Keep(TaskSample),
    Drop(DropReason),
}

/// Truncates the window to the last `max_span_hours` before the prediction
/// time, then bounds the number of timed events. Demographic headers are kept
/// and not counted.
pub fn apply_window_filters(mut sample: TaskSample, filter: &WindowFilter) -> FilterOutcome {
    let start = sample.prediction_time - Duration::hours(filter.max_span_hours as i64);
    sample
        .window
        .retain(|e| e.timestamp.is_none_or(|ts| ts.instant >= start));
    let n = sample.timed_event_count();
    if n < filter.min_events {
        FilterOutcome::Drop(DropReason::TooFew)
    } else if n > filter.max_events {
        FilterOutcome::Drop(DropReason::TooMany)
    } else {
        FilterOutcome::Keep(sample)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub sample_id: String,
    pub candidates: Vec<String>,
}

/// Candidate set offered to models that select from options: the whole label
/// space when it fits, else the answer plus uniformly drawn distractors.
/// Order is shuffled deterministically from `seed`.
pub fn make_candidate_pool(
    sample_id: &str,
    spec: &TaskSpec,
    answer: &[String],
    pool_size: usize,
    seed: u64,
) -> Result<CandidatePool, TaskError> {
    if spec.label_space.is_empty() {
        return Err(TaskError::InvalidSpec {
            task_id: spec.task_id.clone(),
            reason: "empty label space".into(),
        });
    }
    if answer.len() > pool_size {
        return Err(TaskError::AnswerExceedsPool {
            answer: answer.len(),
            pool: pool_size,
        });
    }
    let space: HashSet<&str> = spec.label_space.iter().map(String::as_str).collect();
    if let Some(a) = answer.iter().find(|a| !space.contains(a.as_str())) {
        return Err(TaskError::AnswerOutsideLabelSpace(a.clone()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<String> = if space.len() <= pool_size {
        let mut seen = HashSet::new();
        spec.label_space
            .iter()
            .filter(|l| seen.insert(l.as_str()))
            .cloned()
            .collect()
    } else {
        let answer_set: HashSet<&str> = answer.iter().map(String::as_str).collect();
        let mut seen = HashSet::new();
        let rest: Vec<&String> = spec
            .label_space
            .iter()
            .filter(|l| !answer_set.contains(l.as_str()) && seen.insert(l.as_str()))
            .collect();
        let mut pool: Vec<String> = dedup_in_order(answer.iter().map(String::as_str));
        let need = pool_size - pool.len();
        pool.extend(rest.choose_multiple(&mut rng, need).map(|s| (*s).clone()));
        pool
    };
    candidates.shuffle(&mut rng);
    Ok(CandidatePool {
        sample_id: sample_id.to_string(),
        candidates,
    })
}

pub fn format_answer<S: AsRef<str>>(answer: &[S]) -> String {
    answer.iter().map(AsRef::as_ref).collect::<Vec<_>>().join("\n")
}

pub fn split_answer(text: &str) -> Vec<String> {
    text.split('\n')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
