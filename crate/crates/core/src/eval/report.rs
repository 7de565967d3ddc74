use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{auroc, entity_f1, yes_probability};
use super::reward::{extract_prediction, parse_entities};
use super::EvalError;
use crate::task::{SampleRecord, TaskKind};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// One model response. Risk outputs may carry the yes/no logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub sample_id: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_logit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_logit: Option<f64>,
}

impl ModelOutput {
    pub fn predicted_entities(&self) -> Vec<String> {
        parse_entities(extract_prediction(&self.raw_text))
    }

    pub fn contains_think_block(&self) -> bool {
        self.raw_text.contains("<think>") && self.raw_text.contains("</think>")
    }

    /// Probability of "yes": from the logits when present, otherwise 1 or 0
    /// from the text, and 0.5 when the text is neither.
    pub fn risk_score(&self) -> Result<f64, EvalError> {
        match (self.yes_logit, self.no_logit) {
            (Some(y), Some(n)) => yes_probability(y, n),
            (None, None) => Ok(
                match extract_prediction(&self.raw_text).to_lowercase().trim_end_matches('.') {
                    "yes" => 1.0,
                    "no" => 0.0,
                    _ => 0.5,
                },
            ),
            _ => Err(EvalError::HalfLogits(self.sample_id.clone())),
        }
    }
}

pub fn read_outputs(text: &str) -> Result<Vec<ModelOutput>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                location: format!("outputs line {}", n + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub kind: TaskKind,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<Stat>,
    /// Absent when the gold labels of the task hold a single class.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub resamples: usize,
    pub tasks: Vec<TaskReport>,
}

fn task_rng(seed: u64, task_id: &str) -> ChaCha8Rng {
    let d = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(task_id)
        .finalize();
    ChaCha8Rng::from_seed(d.into())
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean of `values` with the std of bootstrap means.
fn bootstrap_mean(values: &[f64], rng: &mut ChaCha8Rng, resamples: usize) -> Stat {
    let n = values.len();
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    Stat {
        mean: mean(values),
        std: sample_std(&means),
    }
}

/// AUROC with the std over bootstrap resamples that contain both classes.
fn bootstrap_auroc(
    scores: &[f64],
    labels: &[bool],
    rng: &mut ChaCha8Rng,
    resamples: usize,
) -> Result<Option<Stat>, EvalError> {
    let full = match auroc(scores, labels) {
        Ok(v) => v,
        Err(EvalError::MissingClass(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let n = scores.len();
    let mut values = Vec::with_capacity(resamples);
    let (mut s, mut l) = (vec![0.0; n], vec![false; n]);
    for _ in 0..resamples {
        for k in 0..n {
            let i = rng.gen_range(0..n);
            s[k] = scores[i];
            l[k] = labels[i];
        }
        if let Ok(v) = auroc(&s, &l) {
            values.push(v);
        }
    }
    Ok(Some(Stat {
        mean: full,
        std: sample_std(&values),
    }))
}

type TaskRows<'a> = (TaskKind, Vec<(&'a ModelOutput, &'a SampleRecord)>);

/// Scores every output against its gold sample and aggregates per task.
pub fn build_report(outputs: &[ModelOutput], gold: &[SampleRecord], seed: u64) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &SampleRecord> = gold.iter().map(|g| (g.sample_id.as_str(), g)).collect();
    let unmatched: Vec<String> = outputs
        .iter()
        .filter(|o| !by_id.contains_key(o.sample_id.as_str()))
        .map(|o| o.sample_id.clone())
        .collect();
    if !unmatched.is_empty() {
        return Err(EvalError::Unmatched(unmatched));
    }
    let mut seen = HashSet::new();
    let mut per_task: BTreeMap<&str, TaskRows> = BTreeMap::new();
    for o in outputs {
        if !seen.insert(o.sample_id.as_str()) {
            return Err(EvalError::Duplicate(o.sample_id.clone()));
        }
        let g = by_id[o.sample_id.as_str()];
        per_task
            .entry(g.task_id.as_str())
            .or_insert((g.kind, Vec::new()))
            .1
            .push((o, g));
    }

    let mut tasks = Vec::new();
    for (task_id, (kind, rows)) in per_task {
        let mut rng = task_rng(seed, task_id);
        let mut report = TaskReport {
            task_id: task_id.to_string(),
            kind,
            count: rows.len(),
            precision: None,
            recall: None,
            f1: None,
            auroc: None,
        };
        match kind {
            TaskKind::Decision => {
                let mut p = Vec::with_capacity(rows.len());
                let mut r = Vec::with_capacity(rows.len());
                let mut f = Vec::with_capacity(rows.len());
                for (o, g) in &rows {
                    let m = entity_f1(&o.predicted_entities(), &g.answer())?;
                    p.push(m.precision);
                    r.push(m.recall);
                    f.push(m.f1);
                }
                report.precision = Some(bootstrap_mean(&p, &mut rng, BOOTSTRAP_RESAMPLES));
                report.recall = Some(bootstrap_mean(&r, &mut rng, BOOTSTRAP_RESAMPLES));
                report.f1 = Some(bootstrap_mean(&f, &mut rng, BOOTSTRAP_RESAMPLES));
            }
            TaskKind::Risk => {
                let scores = rows
                    .iter()
                    .map(|(o, _)| o.risk_score())
                    .collect::<Result<Vec<_>, _>>()?;
                let labels: Vec<bool> = rows
                    .iter()
                    .map(|(_, g)| g.answer_text.trim().eq_ignore_ascii_case("yes"))
                    .collect();
                report.auroc = bootstrap_auroc(&scores, &labels, &mut rng, BOOTSTRAP_RESAMPLES)?;
            }
        }
        tasks.push(report);
    }
    Ok(EvalReport {
        seed,
        resamples: BOOTSTRAP_RESAMPLES,
        tasks,
    })
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "task_id\tkind\tcount\tprecision\tprecision_std\trecall\trecall_std\tf1\tf1_std\tauroc\tauroc_std\n",
        );
        let cells = |s: &Option<Stat>| match s {
            Some(s) => format!("{:.6}\t{:.6}", s.mean, s.std),
            None => "\t".to_string(),
        };
        for t in &self.tasks {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.task_id,
                t.kind.as_str(),
                t.count,
                cells(&t.precision),
                cells(&t.recall),
                cells(&t.f1),
                cells(&t.auroc)
            )
            .unwrap();
        }
        out
    }
}
