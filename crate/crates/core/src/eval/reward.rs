use serde::{Deserialize, Serialize};

use super::metrics::entity_f1;
use crate::task::TaskKind;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Which accuracy measure each task kind is rewarded with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardAssignment {
    /// Entity F1 for decision tasks, exact match for risk tasks.
    #[default]
    Prose,
    /// Exact set match for decision tasks, F1 for risk tasks.
    Equation,
}

impl std::str::FromStr for RewardAssignment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prose" => Ok(Self::Prose),
            "equation" => Ok(Self::Equation),
            other => Err(format!(
                "unknown reward assignment {other:?}; expected prose or equation"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambda_fmt: f64,
    pub lambda_acc: f64,
    pub assignment: RewardAssignment,
    /// Samples per task drawn for reinforcement learning.
    pub rl_budget_per_task: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_fmt: 1.0,
            lambda_acc: 1.0,
            assignment: RewardAssignment::Prose,
            rl_budget_per_task: 500,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda_fmt >= 0.0 && self.lambda_acc >= 0.0) {
            return Err("reward weights must be non-negative".into());
        }
        Ok(())
    }
}

fn header_line(text: &str, header: &str) -> Option<usize> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().eq_ignore_ascii_case(header) {
            return Some(offset);
        }
        offset += line.len();
    }
    None
}

/// 1 when the text holds exactly one think block with the Extraction and
/// Reasoning headers inside it, in that order, and an answer after it.
pub fn format_reward(raw: &str) -> f64 {
    if raw.matches(THINK_OPEN).count() != 1 || raw.matches(THINK_CLOSE).count() != 1 {
        return 0.0;
    }
    let open = raw.find(THINK_OPEN).unwrap();
    let close = raw.find(THINK_CLOSE).unwrap();
    if open > close {
        return 0.0;
    }
    let inner = &raw[open + THINK_OPEN.len()..close];
    let after = &raw[close + THINK_CLOSE.len()..];
    let ok = match (header_line(inner, "## Extraction"), header_line(inner, "## Reasoning")) {
        (Some(e), Some(r)) => e < r && !after.trim().is_empty(),
        _ => false,
    };
    if ok {
        1.0
    } else {
        0.0
    }
}

/// The answer part of a response: whatever follows the think block.
pub fn extract_prediction(raw: &str) -> &str {
    match raw.rfind(THINK_CLOSE) {
        Some(i) => raw[i + THINK_CLOSE.len()..].trim(),
        None => raw.trim(),
    }
}

/// One entity per non-empty line, list markers removed, duplicates dropped.
pub fn parse_entities(answer: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in answer.lines() {
        let mut item = line.trim();
        for m in ["- ", "* ", "+ "] {
            if let Some(rest) = item.strip_prefix(m) {
                item = rest.trim();
            }
        }
        if !item.is_empty() && !out.iter().any(|o| o == item) {
            out.push(item.to_string());
        }
    }
    out
}

fn yes_no(pred: &[String]) -> Option<&'static str> {
    match pred {
        [one] => match one.trim().trim_end_matches('.').to_lowercase().as_str() {
            "yes" => Some("yes"),
            "no" => Some("no"),
            _ => None,
        },
        _ => None,
    }
}

/// Task-specific accuracy term in [0, 1].
pub fn accuracy_reward(pred: &[String], truth: &[String], kind: TaskKind, assignment: RewardAssignment) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let f1 = |p: &[String]| entity_f1(p, truth).map_or(0.0, |m| m.f1);
    let exact_set = |p: &[String]| {
        let mut a: Vec<&str> = p.iter().map(|s| s.trim()).collect();
        let mut b: Vec<&str> = truth.iter().map(|s| s.trim()).collect();
        a.sort_unstable();
        a.dedup();
        b.sort_unstable();
        b.dedup();
        if a == b {
            1.0
        } else {
            0.0
        }
    };
    match (kind, assignment) {
        (TaskKind::Decision, RewardAssignment::Prose) => f1(pred),
        (TaskKind::Decision, RewardAssignment::Equation) => exact_set(pred),
        (TaskKind::Risk, _) => {
            let Some(p) = yes_no(pred) else { return 0.0 };
            let gold = [truth[0].trim().to_lowercase()];
            match assignment {
                RewardAssignment::Prose => (p == gold[0]) as u8 as f64,
                // F1 of two singletons
                RewardAssignment::Equation => entity_f1(&[p], &gold).map_or(0.0, |m| m.f1),
            }
        }
    }
}

pub fn total_reward(raw: &str, truth: &[String], kind: TaskKind, cfg: &RewardConfig) -> f64 {
    let pred = parse_entities(extract_prediction(raw));
    cfg.lambda_fmt * format_reward(raw) + cfg.lambda_acc * accuracy_reward(&pred, truth, kind, cfg.assignment)
}
