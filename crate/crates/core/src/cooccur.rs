//! Context/label co-occurrence statistics and lift filtering.
//!
//! Lift is `joint * total / (ctx * label)`, evaluated from integer counts with
//! a single final division.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CooccurError {
    #[error("entity {0:?} never occurs as context")]
    ZeroContext(String),
    #[error("entity {0:?} never occurs as a label")]
    ZeroLabel(String),
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    #[error("entity {0:?} contains a tab or newline")]
    BadEntity(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CooccurrenceStats {
    pub task_id: String,
    pub ctx_counts: BTreeMap<String, u64>,
    pub label_counts: BTreeMap<String, u64>,
    pub joint_counts: BTreeMap<(String, String), u64>,
    pub total: u64,
}

impl CooccurrenceStats {
    pub fn new(task_id: &str) -> Self {
        Self {
            task_id: task_id.to_string(),
            ..Self::default()
        }
    }

    /// Records one sample. Repeated entities count once.
    pub fn add_observation<C, L>(&mut self, context: &[C], answer: &[L])
    where
        C: AsRef<str>,
        L: AsRef<str>,
    {
        let ctx: BTreeSet<&str> = context.iter().map(AsRef::as_ref).collect();
        let labels: BTreeSet<&str> = answer.iter().map(AsRef::as_ref).collect();
        for e in &ctx {
            *self.ctx_counts.entry(e.to_string()).or_insert(0) += 1;
        }
        for y in &labels {
            *self.label_counts.entry(y.to_string()).or_insert(0) += 1;
        }
        for e in &ctx {
            for y in &labels {
                *self.joint_counts.entry((e.to_string(), y.to_string())).or_insert(0) += 1;
            }
        }
        self.total += 1;
    }

    pub fn merge(mut self, other: CooccurrenceStats) -> CooccurrenceStats {
        for (k, v) in other.ctx_counts {
            *self.ctx_counts.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.label_counts {
            *self.label_counts.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.joint_counts {
            *self.joint_counts.entry(k).or_insert(0) += v;
        }
        self.total += other.total;
        self
    }

    pub fn joint(&self, e: &str, y: &str) -> u64 {
        self.joint_counts
            .get(&(e.to_string(), y.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// Swaps the roles of context and label entities.
    pub fn transposed(&self) -> CooccurrenceStats {
        CooccurrenceStats {
            task_id: self.task_id.clone(),
            ctx_counts: self.label_counts.clone(),
            label_counts: self.ctx_counts.clone(),
            joint_counts: self
                .joint_counts
                .iter()
                .map(|((e, y), c)| ((y.clone(), e.clone()), *c))
                .collect(),
            total: self.total,
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), CooccurError> {
        let mut ctx = String::new();
        for (e, c) in &self.ctx_counts {
            check_entity(e)?;
            writeln!(ctx, "{e}\t{c}").unwrap();
        }
        let mut label = String::new();
        for (y, c) in &self.label_counts {
            check_entity(y)?;
            writeln!(label, "{y}\t{c}").unwrap();
        }
        let mut joint = format!("# task={}\n# total={}\n", self.task_id, self.total);
        for ((e, y), c) in &self.joint_counts {
            writeln!(joint, "{e}\t{y}\t{c}").unwrap();
        }
        write(&dir.join("ctx_counts.tsv"), &ctx)?;
        write(&dir.join("label_counts.tsv"), &label)?;
        write(&dir.join("joint_counts.tsv"), &joint)
    }

    pub fn read_dir(dir: &Path) -> Result<Self, CooccurError> {
        let mut stats = CooccurrenceStats::default();
        for (name, target) in [
            ("ctx_counts.tsv", &mut stats.ctx_counts),
            ("label_counts.tsv", &mut stats.label_counts),
        ] {
            let text = read(&dir.join(name))?;
            for (n, fields) in rows(&text) {
                let [k, c] = fields[..] else {
                    return Err(parse_err(name, n, "expected 2 fields"));
                };
                target.insert(k.to_string(), parse_count(name, n, c)?);
            }
        }
        let text = read(&dir.join("joint_counts.tsv"))?;
        for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
            if let Some(t) = line.strip_prefix("task=") {
                stats.task_id = t.to_string();
            } else if let Some(t) = line.strip_prefix("total=") {
                stats.total = parse_count("joint_counts.tsv", 0, t)?;
            }
        }
        for (n, fields) in rows(&text) {
            let [e, y, c] = fields[..] else {
                return Err(parse_err("joint_counts.tsv", n, "expected 3 fields"));
            };
            stats
                .joint_counts
                .insert((e.to_string(), y.to_string()), parse_count("joint_counts.tsv", n, c)?);
        }
        Ok(stats)
    }
}

fn check_entity(s: &str) -> Result<(), CooccurError> {
    if s.contains(['\t', '\n', '\r']) {
        Err(CooccurError::BadEntity(s.to_string()))
    } else {
        Ok(())
    }
}

fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| (n + 1, l.split('\t').collect()))
}

fn parse_err(file: &str, line: usize, message: &str) -> CooccurError {
    CooccurError::Parse {
        location: format!("{file}:{line}"),
        message: message.to_string(),
    }
}

fn parse_count(file: &str, line: usize, s: &str) -> Result<u64, CooccurError> {
    s.parse()
        .map_err(|_| parse_err(file, line, &format!("bad count {s:?}")))
}

fn write(path: &Path, text: &str) -> Result<(), CooccurError> {
    std::fs::write(path, text).map_err(|e| CooccurError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn read(path: &Path) -> Result<String, CooccurError> {
    std::fs::read_to_string(path).map_err(|e| CooccurError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Accumulates statistics over `(context entities, answer)` pairs.
pub fn accumulate<I, C, L>(task_id: &str, samples: I) -> CooccurrenceStats
where
    I: IntoIterator<Item = (C, L)>,
    C: AsRef<[String]>,
    L: AsRef<[String]>,
{
    let mut stats = CooccurrenceStats::new(task_id);
    for (c, l) in samples {
        stats.add_observation(c.as_ref(), l.as_ref());
    }
    stats
}

pub fn lift_from_counts(joint: u64, ctx: u64, label: u64, total: u64) -> f64 {
    let num = joint as u128 * total as u128;
    let den = ctx as u128 * label as u128;
    num as f64 / den as f64
}

pub fn lift(e: &str, y: &str, stats: &CooccurrenceStats) -> Result<f64, CooccurError> {
    let ctx = stats.ctx_counts.get(e).copied().unwrap_or(0);
    if ctx == 0 {
        return Err(CooccurError::ZeroContext(e.to_string()));
    }
    let label = stats.label_counts.get(y).copied().unwrap_or(0);
    if label == 0 {
        return Err(CooccurError::ZeroLabel(y.to_string()));
    }
    Ok(lift_from_counts(stats.joint(e, y), ctx, label, stats.total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftPair {
    pub context: String,
    pub label: String,
    pub lift: f64,
}

/// Retained `(context, label)` pairs of one task, sorted by entity names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LiftPairSet {
    pub task_id: String,
    pairs: Vec<LiftPair>,
    by_context: BTreeMap<String, Vec<usize>>,
}

impl LiftPairSet {
    pub fn new(task_id: &str, mut pairs: Vec<LiftPair>) -> Self {
        pairs.sort_by(|a, b| (&a.context, &a.label).cmp(&(&b.context, &b.label)));
        pairs.dedup_by(|a, b| a.context == b.context && a.label == b.label);
        let mut by_context: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            by_context.entry(p.context.clone()).or_default().push(i);
        }
        Self {
            task_id: task_id.to_string(),
            pairs,
            by_context,
        }
    }

    pub fn pairs(&self) -> &[LiftPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, e: &str, y: &str) -> bool {
        self.by_context
            .get(e)
            .is_some_and(|ix| ix.iter().any(|&i| self.pairs[i].label == y))
    }

    /// `e TAB y TAB lift` lines; the lift is written in shortest round-trip form.
    pub fn to_tsv(&self) -> Result<String, CooccurError> {
        let mut out = String::new();
        for p in &self.pairs {
            check_entity(&p.context)?;
            check_entity(&p.label)?;
            writeln!(out, "{}\t{}\t{}", p.context, p.label, p.lift).unwrap();
        }
        Ok(out)
    }

    pub fn from_tsv(task_id: &str, text: &str) -> Result<Self, CooccurError> {
        let mut pairs = Vec::new();
        for (n, fields) in rows(text) {
            let [e, y, l] = fields[..] else {
                return Err(parse_err("lift pairs", n, "expected 3 fields"));
            };
            let lift = l
                .parse()
                .map_err(|_| parse_err("lift pairs", n, &format!("bad lift {l:?}")))?;
            pairs.push(LiftPair {
                context: e.to_string(),
                label: y.to_string(),
                lift,
            });
        }
        Ok(Self::new(task_id, pairs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftThresholds {
    pub min_count: u64,
    pub min_lift: f64,
}

impl Default for LiftThresholds {
    fn default() -> Self {
        Self {
            min_count: 5,
            min_lift: 5.0,
        }
    }
}

/// Pairs whose context count, label count and lift all strictly exceed the
/// thresholds.
pub fn filter_pairs(stats: &CooccurrenceStats, t: &LiftThresholds) -> LiftPairSet {
    let pairs = stats
        .joint_counts
        .iter()
        .filter_map(|((e, y), &joint)| {
            let ctx = stats.ctx_counts.get(e).copied().unwrap_or(0);
            let label = stats.label_counts.get(y).copied().unwrap_or(0);
            if ctx <= t.min_count || label <= t.min_count {
                return None;
            }
            let lift = lift_from_counts(joint, ctx, label, stats.total);
            (lift > t.min_lift).then(|| LiftPair {
                context: e.clone(),
                label: y.clone(),
                lift,
            })
        })
        .collect();
    LiftPairSet::new(&stats.task_id, pairs)
}

/// Retained pairs present in one sample, by descending lift, then by names.
pub fn pairs_for_sample<C, L>(context: &[C], answer: &[L], set: &LiftPairSet) -> Vec<LiftPair>
where
    C: AsRef<str>,
    L: AsRef<str>,
{
    let ctx: BTreeSet<&str> = context.iter().map(AsRef::as_ref).collect();
    let labels: BTreeSet<&str> = answer.iter().map(AsRef::as_ref).collect();
    let mut out: Vec<LiftPair> = ctx
        .iter()
        .filter_map(|e| set.by_context.get(*e))
        .flatten()
        .map(|&i| &set.pairs[i])
        .filter(|p| labels.contains(p.label.as_str()))
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        b.lift
            .total_cmp(&a.lift)
            .then_with(|| a.context.cmp(&b.context))
            .then_with(|| a.label.cmp(&b.label))
    });
    out
}
