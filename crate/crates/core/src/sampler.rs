//! Label-wise weighted sampling and patient-level splits.
//!
//! A sample's weight is the mean reciprocal frequency of its answer labels,
//! so samples carrying rare labels are drawn more often.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("label {0:?} has no count; label counts are stale")]
    UnknownLabel(String),
    #[error("sample has no labels")]
    NoLabels,
    #[error("weight {weight} at index {index} is negative or not finite")]
    InvalidWeight { index: usize, weight: f64 },
    #[error("{weights} weights given for {items} items")]
    LengthMismatch { items: usize, weights: usize },
    #[error("every weight is zero")]
    AllZero,
    #[error("cannot draw {requested} samples: only {available} have positive weight")]
    NotEnough { requested: usize, available: usize },
    #[error("test fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("subject id {0:?} appears twice")]
    DuplicateSubject(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Per-task label frequencies: `counts[y]` is the number of samples whose
/// answer contains `y`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub task_id: String,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl LabelCounts {
    pub fn new(task_id: &str) -> Self {
        Self {
            task_id: task_id.to_string(),
            ..Self::default()
        }
    }

    pub fn add<S: AsRef<str>>(&mut self, answer: &[S]) {
        let distinct: HashSet<&str> = answer.iter().map(AsRef::as_ref).collect();
        for y in distinct {
            *self.counts.entry(y.to_string()).or_insert(0) += 1;
        }
        self.total += 1;
    }

    /// Combines two partial tallies of the same task.
    pub fn merge(mut self, other: LabelCounts) -> LabelCounts {
        for (y, c) in other.counts {
            *self.counts.entry(y).or_insert(0) += c;
        }
        self.total += other.total;
        self
    }

    pub fn get(&self, label: &str) -> Option<u64> {
        self.counts.get(label).copied()
    }
}

pub fn count_labels<'a, I, S>(task_id: &str, answers: I) -> LabelCounts
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut counts = LabelCounts::new(task_id);
    for a in answers {
        counts.add(a);
    }
    counts
}

/// Mean of `1 / count(y)` over the answer labels.
pub fn sample_weight<S: AsRef<str>>(answer: &[S], counts: &LabelCounts) -> Result<f64, SamplerError> {
    if answer.is_empty() {
        return Err(SamplerError::NoLabels);
    }
    let mut sum = 0.0;
    for y in answer {
        let c = counts
            .get(y.as_ref())
            .filter(|&c| c > 0)
            .ok_or_else(|| SamplerError::UnknownLabel(y.as_ref().to_string()))?;
        sum += 1.0 / c as f64;
    }
    Ok(sum / answer.len() as f64)
}

#[derive(Debug, Clone, Copy)]
struct Keyed {
    key: f64,
    index: usize,
}

impl PartialEq for Keyed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Keyed {}
impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then(self.index.cmp(&other.index))
    }
}

/// Streaming draw of `n` distinct indices without replacement, each with
/// probability proportional to its weight. Every positive-weight item gets the
/// key `-ln(u) / w` and the `n` smallest keys win; the result is in key order.
pub fn weighted_sample_indices<I>(weights: I, n: usize, seed: u64) -> Result<Vec<usize>, SamplerError>
where
    I: IntoIterator<Item = f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heap: BinaryHeap<Keyed> = BinaryHeap::with_capacity(n + 1);
    let mut positive = 0usize;
    for (index, w) in weights.into_iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(SamplerError::InvalidWeight { index, weight: w });
        }
        if w == 0.0 {
            continue;
        }
        positive += 1;
        // gen() is in [0, 1); flip it so ln never sees zero
        let u: f64 = 1.0 - rng.gen::<f64>();
        let item = Keyed {
            key: -u.ln() / w,
            index,
        };
        if heap.len() < n {
            heap.push(item);
        } else if let Some(top) = heap.peek() {
            if item < *top {
                heap.pop();
                heap.push(item);
            }
        }
    }
    if positive == 0 {
        return Err(SamplerError::AllZero);
    }
    if n > positive {
        return Err(SamplerError::NotEnough {
            requested: n,
            available: positive,
        });
    }
    Ok(heap.into_sorted_vec().into_iter().map(|k| k.index).collect())
}

pub fn weighted_sample<T: Clone>(items: &[T], weights: &[f64], n: usize, seed: u64) -> Result<Vec<T>, SamplerError> {
    if items.len() != weights.len() {
        return Err(SamplerError::LengthMismatch {
            items: items.len(),
            weights: weights.len(),
        });
    }
    let idx = weighted_sample_indices(weights.iter().copied(), n, seed)?;
    Ok(idx.into_iter().map(|i| items[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Partitions subjects so none lands on both sides. Both halves come back
/// sorted.
pub fn patient_split<S: AsRef<str>>(
    subject_ids: &[S],
    test_fraction: f64,
    seed: u64,
) -> Result<PatientSplit, SamplerError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SamplerError::BadFraction(test_fraction));
    }
    let mut ids: Vec<String> = subject_ids.iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(SamplerError::DuplicateSubject(w[0].clone()));
    }
    let n_test = (test_fraction * ids.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut train = ids.split_off(n_test);
    let mut test = ids;
    train.sort();
    test.sort();
    Ok(PatientSplit { train, test })
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<(), SamplerError> {
    let io = |e: std::io::Error| SamplerError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for id in ids {
        writeln!(f, "{id}").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_id_list(path: &Path) -> Result<Vec<String>, SamplerError> {
    let text = std::fs::read_to_string(path).map_err(|e| SamplerError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
