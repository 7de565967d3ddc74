//! Checks a sample corpus: record schema, look-ahead leakage in rendered
//! windows, and one instruction text per task.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thinkgraph::ehr::parse_instant;
use thinkgraph::task::{SampleRecord, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Schema,
    Leakage,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub file: String,
    pub line: usize,
    pub sample_id: Option<String>,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub files: usize,
    pub records: usize,
    /// Records per task id.
    pub tasks: BTreeMap<String, usize>,
    pub violations: Vec<Violation>,
}

impl CorpusReport {
    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "files={} records={} tasks={} schema_violations={} leakage_violations={} instruction_violations={}",
            self.files,
            self.records,
            self.tasks.len(),
            self.count(ViolationKind::Schema),
            self.count(ViolationKind::Leakage),
            self.count(ViolationKind::Instruction)
        )
    }
}

/// Timestamp of a rendered event title line, `# Name [YYYY-MM-DD HH:MM:SS]`.
/// Titles without a time (`[None]`) yield `None`.
pub fn title_timestamp(line: &str) -> Option<NaiveDateTime> {
    if !(line.starts_with("# ") || line.starts_with("## ")) {
        return None;
    }
    let inner = line.strip_suffix(']')?;
    let (_, ts) = inner.rsplit_once(" [")?;
    parse_instant(ts)
}

struct Checker {
    report: CorpusReport,
    seen_ids: HashSet<String>,
    /// task -> (instruction, first sample id)
    instructions: HashMap<String, (String, String)>,
}

impl Checker {
    fn push(&mut self, file: &str, line: usize, sample_id: Option<&str>, kind: ViolationKind, message: String) {
        self.report.violations.push(Violation {
            file: file.to_string(),
            line,
            sample_id: sample_id.map(str::to_string),
            kind,
            message,
        });
    }

    fn check_line(&mut self, file: &str, line: usize, text: &str) {
        let rec: SampleRecord = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => {
                self.push(
                    file,
                    line,
                    None,
                    ViolationKind::Schema,
                    format!("not a sample record: {e}"),
                );
                return;
            }
        };
        self.report.records += 1;
        *self.report.tasks.entry(rec.task_id.clone()).or_default() += 1;
        let id = Some(rec.sample_id.as_str());
        let schema = |msg: String| (file.to_string(), line, rec.sample_id.clone(), msg);
        let mut problems = Vec::new();

        for (name, value) in [
            ("sample_id", &rec.sample_id),
            ("subject_id", &rec.subject_id),
            ("task_id", &rec.task_id),
        ] {
            if value.trim().is_empty() {
                problems.push(schema(format!("empty {name}")));
            }
        }
        if !self.seen_ids.insert(rec.sample_id.clone()) {
            problems.push(schema(format!("duplicate sample id {:?}", rec.sample_id)));
        }
        let answer = rec.answer();
        if answer.is_empty() {
            problems.push(schema("empty answer".into()));
        }
        if rec.kind == TaskKind::Risk && !(answer.len() == 1 && (answer[0] == "yes" || answer[0] == "no")) {
            problems.push(schema(format!(
                "risk answer must be yes or no, got {:?}",
                rec.answer_text
            )));
        }
        if rec.instruction.trim().is_empty() {
            problems.push(schema("empty instruction".into()));
        } else if !rec.input_text.ends_with(&format!("\n\n{}", rec.instruction)) && rec.input_text != rec.instruction {
            problems.push(schema("input text does not end with the instruction".into()));
        }
        if let Some(c) = &rec.candidates {
            let pool: HashSet<&str> = c.iter().map(String::as_str).collect();
            if let Some(a) = answer.iter().find(|a| !pool.contains(a.as_str())) {
                problems.push(schema(format!("answer {a:?} is not among the candidates")));
            }
        }
        let prediction_time = parse_instant(&rec.prediction_time);
        if prediction_time.is_none() {
            problems.push(schema(format!("bad prediction_time {:?}", rec.prediction_time)));
        }
        for (f, l, sid, msg) in problems {
            self.push(&f, l, Some(&sid), ViolationKind::Schema, msg);
        }

        if let Some(t) = prediction_time {
            let future: Vec<NaiveDateTime> = rec
                .window_text()
                .lines()
                .filter_map(title_timestamp)
                .filter(|ts| *ts > t)
                .collect();
            if let Some(first) = future.first() {
                self.push(
                    file,
                    line,
                    id,
                    ViolationKind::Leakage,
                    format!(
                        "sample {}: {} window event(s) after prediction time {}, first at {}",
                        rec.sample_id,
                        future.len(),
                        rec.prediction_time,
                        first.format("%Y-%m-%d %H:%M:%S")
                    ),
                );
            }
        }

        match self.instructions.get(&rec.task_id) {
            None => {
                self.instructions
                    .insert(rec.task_id.clone(), (rec.instruction.clone(), rec.sample_id.clone()));
            }
            Some((text, first)) if *text != rec.instruction => {
                let message = format!(
                    "task {}: instruction of sample {} differs from that of sample {first}",
                    rec.task_id, rec.sample_id
                );
                self.push(file, line, id, ViolationKind::Instruction, message);
            }
            Some(_) => {}
        }
    }
}

fn corpus_files(path: &Path) -> std::io::Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

/// Validates a sample JSONL file, or every `*.jsonl` file directly inside a
/// directory. Problems, including unreadable files, become report entries.
pub fn validate_corpus(path: &Path) -> CorpusReport {
    let mut checker = Checker {
        report: CorpusReport::default(),
        seen_ids: HashSet::new(),
        instructions: HashMap::new(),
    };
    let files = match corpus_files(path) {
        Ok(f) => f,
        Err(e) => {
            checker.push(
                &path.display().to_string(),
                0,
                None,
                ViolationKind::Schema,
                format!("cannot read: {e}"),
            );
            return checker.report;
        }
    };
    for file in files {
        let name = file.display().to_string();
        checker.report.files += 1;
        match std::fs::read_to_string(&file) {
            Ok(text) => {
                for (n, line) in text.lines().enumerate() {
                    if !line.trim().is_empty() {
                        checker.check_line(&name, n + 1, line);
                    }
                }
            }
            Err(e) => checker.push(&name, 0, None, ViolationKind::Schema, format!("cannot read: {e}")),
        }
    }
    checker.report
}

/// Validates JSONL text held in memory.
pub fn validate_text(text: &str) -> CorpusReport {
    let mut checker = Checker {
        report: CorpusReport {
            files: 1,
            ..Default::default()
        },
        seen_ids: HashSet::new(),
        instructions: HashMap::new(),
    };
    for (n, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            checker.check_line("<memory>", n + 1, line);
        }
    }
    checker.report
}
