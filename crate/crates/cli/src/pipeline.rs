//! Stage runner. Every stage reads declared inputs, writes its outputs under
//! `{work_dir}/{stage}/` and finishes by writing `manifest.json`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thinkgraph::cooccur::{filter_pairs, pairs_for_sample, CooccurrenceStats, LiftPairSet};
use thinkgraph::ehr::ingest::{ingest_dir, IngestManifest};
use thinkgraph::ehr::{normalize_patient, CodeMap, CodeMapKind, NormalizeOptions, PatientTimeline, RawEvent};
use thinkgraph::eval::{build_report, format_reward, read_outputs, total_reward, ModelOutput};
use thinkgraph::knowledge::{build_thinking_graph, ConceptLexicon, KnowledgeGraph, ThinkingGraph};
use thinkgraph::sampler::{
    count_labels, patient_split, read_id_list, sample_weight, weighted_sample_indices, write_id_list, LabelCounts,
};
use thinkgraph::serialize::MarkdownSerializer;
use thinkgraph::synthesis::{
    assemble_prompt, emit_training_record, parse_reasoning, validate_retention, CachedClient, CompletionClient,
    HttpCompletionClient, PromptTemplate, ReasoningRecord, RetentionVerdict, StubCompletionClient, SynthesisError,
};
use thinkgraph::task::{
    apply_window_filters, build_samples, format_answer, make_candidate_pool, DropReason, FilterOutcome, SampleRecord,
    TaskKind, TaskRegistry, TaskSpec,
};
use thinkgraph::warning::Warning;

use crate::config::{Backend, Config};
use crate::error::PipelineError;
use crate::manifest::{hash_file, list_files, relative, sha256_hex, substream, Manifest, MANIFEST_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Normalize,
    BuildSamples,
    Sample,
    Lift,
    ThinkGraph,
    Synthesize,
    EmitTrain,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Normalize,
        Stage::BuildSamples,
        Stage::Sample,
        Stage::Lift,
        Stage::ThinkGraph,
        Stage::Synthesize,
        Stage::EmitTrain,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Normalize => "normalize",
            Stage::BuildSamples => "build-samples",
            Stage::Sample => "sample",
            Stage::Lift => "lift",
            Stage::ThinkGraph => "think-graph",
            Stage::Synthesize => "synthesize",
            Stage::EmitTrain => "emit-train",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Parses a `--stage` value: one stage name or `all`.
pub fn parse_stages(s: &str) -> Result<Vec<Stage>, String> {
    if s == "all" {
        Ok(Stage::ALL.to_vec())
    } else {
        Ok(vec![s.parse()?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
    pub manifest: Manifest,
}

/// A stage failure together with the stage it happened in.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: PipelineError,
}

impl StageFailure {
    pub fn report_line(&self) -> String {
        self.error.report_line(self.stage.name())
    }
}

/// Runs the stages in order, stopping at the first failure.
pub fn run_stages(stages: &[Stage], cfg: &Config) -> Result<Vec<StageOutcome>, StageFailure> {
    stages
        .iter()
        .map(|&stage| run_stage(stage, cfg).map_err(|error| StageFailure { stage, error }))
        .collect()
}

pub fn run_stage(stage: Stage, cfg: &Config) -> Result<StageOutcome, PipelineError> {
    cfg.validate()?;
    let work = cfg.work_dir();
    let mut hashes = BTreeMap::new();
    for input in declared_inputs(stage, cfg)? {
        hashes.insert(input.label, hash_file(&input.path)?);
    }
    let config_hash = sha256_hex(stage_config(stage, cfg).to_string().as_bytes());

    let dir = work.join(stage.name());
    let manifest_path = dir.join(MANIFEST_FILE);
    if let Some(m) = Manifest::read(&manifest_path) {
        if m.stage == stage.name() && m.is_current(cfg.seed, &config_hash, &hashes, &work) {
            return Ok(StageOutcome {
                stage,
                status: StageStatus::UpToDate,
                manifest: m,
            });
        }
    }
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;

    let ctx = Ctx {
        cfg,
        work: work.clone(),
        dir: dir.clone(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| PipelineError::failed("threads", e))?;
    let counts = pool.install(|| execute(stage, &ctx))?;

    let mut outputs = BTreeMap::new();
    for path in list_files(&dir)? {
        if path == manifest_path {
            continue;
        }
        outputs.insert(relative(&path, &work), hash_file(&path)?);
    }
    let manifest = Manifest {
        stage: stage.name().to_string(),
        seed: cfg.seed,
        config_hash,
        inputs: hashes,
        counts,
        outputs,
    };
    write_text(&manifest_path, &manifest.to_json())?;
    Ok(StageOutcome {
        stage,
        status: StageStatus::Ran,
        manifest,
    })
}

struct Input {
    label: String,
    path: PathBuf,
}

fn work_input(work: &Path, rel: &str) -> Result<Input, PipelineError> {
    let path = work.join(rel);
    if !path.is_file() {
        return Err(PipelineError::MissingArtifact {
            artifact: format!("{rel} ({})", path.display()),
        });
    }
    Ok(Input {
        label: rel.to_string(),
        path,
    })
}

fn config_input(cfg: &Config, key: &str, value: &str) -> Result<Input, PipelineError> {
    let path = cfg.resolve(value);
    if !path.is_file() {
        return Err(PipelineError::MissingArtifact {
            artifact: format!("{key} {value} ({})", path.display()),
        });
    }
    Ok(Input {
        label: format!("{key}={value}"),
        path,
    })
}

fn optional_inputs(cfg: &Config, items: &[(&str, &Option<String>)]) -> Result<Vec<Input>, PipelineError> {
    items
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| config_input(cfg, k, v)))
        .collect()
}

fn declared_inputs(stage: Stage, cfg: &Config) -> Result<Vec<Input>, PipelineError> {
    let work = cfg.work_dir();
    let p = &cfg.paths;
    let mut inputs = Vec::new();
    match stage {
        Stage::Ingest => {
            let data = cfg.data_dir();
            let manifest_path = data.join("manifest.json");
            if !manifest_path.is_file() {
                return Err(PipelineError::MissingArtifact {
                    artifact: format!("data manifest.json ({})", manifest_path.display()),
                });
            }
            let manifest = IngestManifest::load(&manifest_path).map_err(|e| PipelineError::failed("parse", e))?;
            inputs.push(Input {
                label: "data/manifest.json".into(),
                path: manifest_path,
            });
            for table in &manifest.tables {
                let path = data.join(&table.file);
                if !path.is_file() {
                    return Err(PipelineError::MissingArtifact {
                        artifact: format!("data table {} ({})", table.file, path.display()),
                    });
                }
                inputs.push(Input {
                    label: format!("data/{}", table.file),
                    path,
                });
            }
        }
        Stage::Normalize => {
            inputs.push(work_input(&work, "ingest/events.jsonl")?);
            inputs.extend(optional_inputs(
                cfg,
                &[("icd_ccs", &p.icd_ccs), ("ndc_atc", &p.ndc_atc)],
            )?);
        }
        Stage::BuildSamples => {
            inputs.push(work_input(&work, "normalize/timelines.jsonl")?);
            inputs.extend(optional_inputs(cfg, &[("tasks", &p.tasks)])?);
        }
        Stage::Sample => {
            inputs.push(work_input(&work, "build-samples/samples.jsonl")?);
            inputs.extend(optional_inputs(cfg, &[("tasks", &p.tasks)])?);
        }
        Stage::Lift => {
            inputs.push(work_input(&work, "build-samples/samples.jsonl")?);
            inputs.push(work_input(&work, "sample/train_ids.txt")?);
            inputs.push(work_input(&work, "sample/train.jsonl")?);
            inputs.push(config_input(cfg, "lexicon", &p.lexicon)?);
        }
        Stage::ThinkGraph => {
            inputs.push(work_input(&work, "sample/train.jsonl")?);
            inputs.push(work_input(&work, "lift/contexts.jsonl")?);
            let pairs_dir = work.join("lift/pairs");
            if !pairs_dir.is_dir() {
                return Err(PipelineError::MissingArtifact {
                    artifact: format!("lift/pairs ({})", pairs_dir.display()),
                });
            }
            for f in list_files(&pairs_dir)? {
                inputs.push(work_input(&work, &relative(&f, &work))?);
            }
            inputs.push(config_input(cfg, "lexicon", &p.lexicon)?);
            inputs.push(config_input(cfg, "graph", &p.graph)?);
        }
        Stage::Synthesize => {
            inputs.push(work_input(&work, "sample/train.jsonl")?);
            inputs.push(work_input(&work, "think-graph/graphs.jsonl")?);
            inputs.push(config_input(cfg, "lexicon", &p.lexicon)?);
            inputs.extend(optional_inputs(cfg, &[("prompt_template", &p.prompt_template)])?);
        }
        Stage::EmitTrain => {
            inputs.push(work_input(&work, "synthesize/results.jsonl")?);
            inputs.push(work_input(&work, "sample/train.jsonl")?);
        }
        Stage::Evaluate => {
            inputs.push(work_input(&work, "sample/test.jsonl")?);
            inputs.push(work_input(&work, "sample/train.jsonl")?);
            inputs.extend(optional_inputs(cfg, &[("outputs", &cfg.evaluate.outputs)])?);
        }
    }
    Ok(inputs)
}

/// The configuration a stage depends on. The thread count is left out.
fn stage_config(stage: Stage, cfg: &Config) -> serde_json::Value {
    let section = match stage {
        Stage::Ingest | Stage::Normalize => json!({}),
        Stage::BuildSamples => json!(cfg.build_samples),
        Stage::Sample => json!(cfg.sample),
        Stage::Lift => json!(cfg.lift),
        Stage::ThinkGraph => json!({ "lift": cfg.lift, "think_graph": cfg.think_graph }),
        Stage::Synthesize => json!(cfg.synthesize),
        Stage::EmitTrain => json!({ "reward": cfg.reward }),
        Stage::Evaluate => json!({ "reward": cfg.reward, "evaluate": cfg.evaluate }),
    };
    json!({ "stage": stage.name(), "section": section })
}

struct Ctx<'a> {
    cfg: &'a Config,
    work: PathBuf,
    dir: PathBuf,
}

impl Ctx<'_> {
    fn input(&self, rel: &str) -> PathBuf {
        self.work.join(rel)
    }

    fn output(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn seed(&self, name: &str) -> u64 {
        substream(self.cfg.seed, name)
    }
}

type Counts = BTreeMap<String, u64>;

fn execute(stage: Stage, ctx: &Ctx) -> Result<Counts, PipelineError> {
    match stage {
        Stage::Ingest => ingest(ctx),
        Stage::Normalize => normalize(ctx),
        Stage::BuildSamples => build_samples_stage(ctx),
        Stage::Sample => sample(ctx),
        Stage::Lift => lift(ctx),
        Stage::ThinkGraph => think_graph(ctx),
        Stage::Synthesize => synthesize(ctx),
        Stage::EmitTrain => emit_train(ctx),
        Stage::Evaluate => evaluate(ctx),
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::failed("parse", format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<u64, PipelineError> {
    let file = std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut n = 0;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| PipelineError::failed("serialize", e))?;
        writeln!(w, "{line}").map_err(|e| PipelineError::io(path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))?;
    Ok(n)
}

fn counts<const N: usize>(items: [(&str, u64); N]) -> Counts {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub(crate) fn load_registry(cfg: &Config) -> Result<TaskRegistry, PipelineError> {
    let registry = match &cfg.paths.tasks {
        Some(p) => TaskRegistry::load(&cfg.resolve(p)),
        None => Ok(TaskRegistry::defaults()),
    }
    .map_err(|e| PipelineError::Config(format!("task registry: {e}")))?;
    let mut seen = HashSet::new();
    for spec in &registry.tasks {
        spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let safe = spec
            .task_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if !safe || spec.task_id.starts_with('.') {
            return Err(PipelineError::Config(format!(
                "task id {:?} may only use letters, digits, '_', '-' and '.'",
                spec.task_id
            )));
        }
        if !seen.insert(spec.task_id.as_str()) {
            return Err(PipelineError::Config(format!("duplicate task id {:?}", spec.task_id)));
        }
    }
    Ok(registry)
}

/// One subject's raw events, as written by the ingest stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub events: Vec<RawEvent>,
}

fn ingest(ctx: &Ctx) -> Result<Counts, PipelineError> {
    let data = ctx.cfg.data_dir();
    let manifest = IngestManifest::load(&data.join("manifest.json")).map_err(|e| PipelineError::failed("parse", e))?;
    let subjects = ingest_dir(&data, &manifest).map_err(|e| PipelineError::failed("parse", e))?;
    let records: Vec<SubjectRecord> = subjects
        .into_iter()
        .map(|(subject_id, events)| SubjectRecord { subject_id, events })
        .collect();
    let events: usize = records.iter().map(|r| r.events.len()).sum();
    let n = write_jsonl(&ctx.output("events.jsonl"), &records)?;
    Ok(counts([
        ("tables", manifest.tables.len() as u64),
        ("subjects", n),
        ("events", events as u64),
    ]))
}

#[derive(Debug, Serialize, Deserialize)]
struct Rejected {
    subject_id: String,
    error: String,
}

fn normalize(ctx: &Ctx) -> Result<Counts, PipelineError> {
    let cfg = ctx.cfg;
    let subjects: Vec<SubjectRecord> = read_jsonl(&ctx.input("ingest/events.jsonl"))?;
    let mut code_maps = Vec::new();
    for (kind, path) in [
        (CodeMapKind::IcdToCcs, &cfg.paths.icd_ccs),
        (CodeMapKind::NdcToAtc, &cfg.paths.ndc_atc),
    ] {
        if let Some(p) = path {
            code_maps.push(CodeMap::load(kind, &cfg.resolve(p)).map_err(|e| PipelineError::failed("parse", e))?);
        }
    }
    let options = NormalizeOptions {
        code_maps,
        ..Default::default()
    };
    let results: Vec<_> = subjects
        .into_par_iter()
        .map(|s| {
            let r = normalize_patient(s.events, &s.subject_id, &options);
            (s.subject_id, r)
        })
        .collect();

    let mut timelines = Vec::new();
    let mut warnings: Vec<Warning> = Vec::new();
    let mut rejected = Vec::new();
    for (subject_id, r) in results {
        match r {
            Ok((tl, w)) => {
                timelines.push(tl);
                warnings.extend(w);
            }
            Err(e) => rejected.push(Rejected {
                subject_id,
                error: e.to_string(),
            }),
        }
    }
    let events: usize = timelines.iter().map(|t| t.events.len()).sum();
    write_jsonl(&ctx.output("timelines.jsonl"), &timelines)?;
    write_jsonl(&ctx.output("warnings.jsonl"), &warnings)?;
    write_jsonl(&ctx.output("rejected.jsonl"), &rejected)?;
    Ok(counts([
        ("patients", timelines.len() as u64),
        ("events", events as u64),
        ("warnings", warnings.len() as u64),
        ("rejected", rejected.len() as u64),
    ]))
}

#[derive(Default)]
struct PatientSamples {
    per_task: Vec<Vec<SampleRecord>>,
    warnings: Vec<Warning>,
    too_few: u64,
    too_many: u64,
}

fn build_samples_stage(ctx: &Ctx) -> Result<Counts, PipelineError> {
    let registry = load_registry(ctx.cfg)?;
    let timelines: Vec<PatientTimeline> = read_jsonl(&ctx.input("normalize/timelines.jsonl"))?;
    let serializer = MarkdownSerializer::default();
    let filter = ctx.cfg.build_samples.window();

    let per_patient: Vec<PatientSamples> = timelines
        .par_iter()
        .map(|tl| {
            let mut out = PatientSamples {
                per_task: vec![Vec::new(); registry.tasks.len()],
                ..Default::default()
            };
            for (i, spec) in registry.tasks.iter().enumerate() {
                let (samples, warnings) = build_samples(tl, spec);
                out.warnings.extend(warnings);
                for s in samples {
                    match apply_window_filters(s, &filter) {
                        FilterOutcome::Keep(s) => out.per_task[i].push(
                            s.to_record(spec, &serializer)
                                .map_err(|e| PipelineError::failed("task", e))?,
                        ),
                        FilterOutcome::Drop(DropReason::TooFew) => out.too_few += 1,
                        FilterOutcome::Drop(DropReason::TooMany) => out.too_many += 1,
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut c = Counts::new();
    let mut ordered: Vec<&SampleRecord> = Vec::new();
    for (i, spec) in registry.tasks.iter().enumerate() {
        let before = ordered.len();
        ordered.extend(per_patient.iter().flat_map(|p| p.per_task[i].iter()));
        c.insert(format!("task.{}", spec.task_id), (ordered.len() - before) as u64);
    }
    let warnings: Vec<&Warning> = per_patient.iter().flat_map(|p| p.warnings.iter()).collect();
    write_jsonl(&ctx.output("samples.jsonl"), ordered.iter().copied())?;
    write_jsonl(&ctx.output("warnings.jsonl"), warnings.iter().copied())?;
    c.insert("samples".into(), ordered.len() as u64);
    c.insert("warnings".into(), warnings.len() as u64);
    c.insert("dropped_too_few".into(), per_patient.iter().map(|p| p.too_few).sum());
    c.insert("dropped_too_many".into(), per_patient.iter().map(|p| p.too_many).sum());
    Ok(c)
}

fn sampler_err(e: impl fmt::Display) -> PipelineError {
    PipelineError::failed("sample", e)
}

/// Draws up to `n` records with inverse-label-frequency weights computed
/// over `records` themselves. Returns indices in ascending order and the
/// label counts used.
fn draw_balanced(
    records: &[&SampleRecord],
    task_id: &str,
    n: usize,
    seed: u64,
) -> Result<(Vec<usize>, LabelCounts), PipelineError> {
    let answers: Vec<Vec<String>> = records.iter().map(|r| r.answer()).collect();
    let label_counts = count_labels(task_id, answers.iter().map(Vec::as_slice));
    let weights = answers
        .iter()
        .map(|a| sample_weight(a, &label_counts))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(sampler_err)?;
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    let mut idx = weighted_sample_indices(weights.iter().copied(), n.min(positive), seed).map_err(sampler_err)?;
    idx.sort_unstable();
    Ok((idx, label_counts))
}

fn sample(ctx: &Ctx) -> Result<Counts, PipelineError> {
    let cfg = ctx.cfg;
    let registry = load_registry(cfg)?;
    let records: Vec<SampleRecord> = read_jsonl(&ctx.input("build-samples/samples.jsonl"))?;
    let subjects: Vec<&str> = records
        .iter()
        .map(|r| r.subject_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let split = patient_split(&subjects, cfg.sample.test_fraction, ctx.seed("sample/split")).map_err(sampler_err)?;
    let test_ids: HashSet<&str> = split.test.iter().map(String::as_str).collect();

    let mut by_task: HashMap<&str, Vec<&SampleRecord>> = HashMap::new();
    for r in &records {
        by_task.entry(r.task_id.as_str()).or_default().push(r);
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut label_lines = String::new();
    let mut skipped_pools = 0u64;
    for spec in &registry.tasks {
        let Some(all) = by_task.get(spec.task_id.as_str()) else {
            continue;
        };
        let mut spec: TaskSpec = spec.clone();
        if spec.kind == TaskKind::Decision && spec.label_space.is_empty() {
            let space: BTreeSet<String> = all.iter().flat_map(|r| r.answer()).collect();
            spec.label_space = space.into_iter().collect();
        }
        for (side, out, n) in [
            ("train", &mut train, cfg.sample.train_per_task),
            ("test", &mut test, cfg.sample.test_per_task),
        ] {
            let on_side: Vec<&SampleRecord> = all
                .iter()
                .copied()
                .filter(|r| test_ids.contains(r.subject_id.as_str()) == (side == "test"))
                .collect();
            if on_side.is_empty() {
                continue;
            }
            let seed = ctx.seed(&format!("sample/{side}/{}", spec.task_id));
            let (picked, label_counts) = draw_balanced(&on_side, &spec.task_id, n, seed)?;
            for (label, c) in &label_counts.counts {
                label_lines.push_str(&format!("{side}\t{}\t{label}\t{c}\n", spec.task_id));
            }
            for i in picked {
                let mut rec = on_side[i].clone();
                if side == "test" && spec.kind == TaskKind::Decision {
                    let seed = ctx.seed(&format!("sample/candidates/{}", rec.sample_id));
                    match make_candidate_pool(&rec.sample_id, &spec, &rec.answer(), cfg.sample.pool_size, seed) {
                        Ok(pool) => rec.candidates = Some(pool.candidates),
                        Err(_) => skipped_pools += 1,
                    }
                }
                out.push(rec);
            }
        }
    }

    write_id_list(&ctx.output("train_ids.txt"), &split.train).map_err(sampler_err)?;
    write_id_list(&ctx.output("test_ids.txt"), &split.test).map_err(sampler_err)?;
    write_jsonl(&ctx.output("train.jsonl"), &train)?;
    write_jsonl(&ctx.output("test.jsonl"), &test)?;
    write_text(&ctx.output("label_counts.tsv"), &label_lines)?;
    Ok(counts([
        ("train_patients", split.train.len() as u64),
        ("test_patients", split.test.len() as u64),
        ("train", train.len() as u64),
        ("test", test.len() as u64),
        ("candidate_pools_skipped", skipped_pools),
    ]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleContext {
    pub sample_id: String,
    pub entities: Vec<String>,
}

fn load_lexicon(cfg: &Config) -> Result<ConceptLexicon, PipelineError> {
    Ok(ConceptLexicon::load(&cfg.resolve(&cfg.paths.lexicon))
        .map_err(|e| PipelineError::failed("parse", e))?
        .with_threshold(cfg.lift.match_threshold))
}

fn lift(ctx: &Ctx) -> Result<Counts, PipelineError> {
    let cfg = ctx.cfg;
    let records: Vec<SampleRecord> = read_jsonl(&ctx.input("build-samples/samples.jsonl"))?;
    let train_ids: HashSet<String> = read_id_list(&ctx.input("sample/train_ids.txt"))
        .map_err(sampler_err)?
        .into_iter()
        .collect();
    let selected: Vec<SampleRecord> = read_jsonl(&ctx.input("sample/train.jsonl"))?;
    let lexicon = load_lexicon(cfg)?;

    // Statistics cover every training-side sample, not only the drawn ones.
    let pool: Vec<&SampleRecord> = records.iter().filter(|r| train_ids.contains(&r.subject_id)).collect();
    let entities: Vec<Vec<String>> = pool
        .par_iter()
        .map(|r| lexicon.extract_entities(r.window_text()))
        .collect();

    let mut stats: BTreeMap<&str, CooccurrenceStats> = BTreeMap::new();
    for (r, ents) in pool.iter().zip(&entities) {
        stats
            .entry(r.task_id.as_str())
            .or_insert_with(|| CooccurrenceStats::new(&r.task_id))
            .add_observation(ents, &r.answer());
    }

    let thresholds = cfg.lift.thresholds();
    let mut c = Counts::new();
    let mut total_pairs = 0;
    std::fs::create_dir_all(ctx.output("pairs")).map_err(|e| PipelineError::io(&ctx.output("pairs"), e))?;
    for (task, s) in &stats {
        let dir = ctx.output(&format!("stats/{task}"));
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        s.write_dir(&dir).map_err(|e| PipelineError::failed("io", e))?;
        let pairs = filter_pairs(s, &thresholds);
        let tsv = pairs.to_tsv().map_err(|e| PipelineError::failed("data", e))?;
        write_text(&ctx.output(&format!("pairs/{task}.tsv")), &tsv)?;
        c.insert(format!("pairs.{task}"), pairs.len() as u64);
        total_pairs += pairs.len() as u64;
    }

    let index: HashMap<&str, usize> = pool
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id.as_str(), i))
        .collect();
    let mut contexts = Vec::with_capacity(selected.len());
    for r in &selected {
        let ents = match index.get(r.sample_id.as_str()) {
            Some(&i) => entities[i].clone(),
            None => lexicon.extract_entities(r.window_text()),
        };
        contexts.push(SampleContext {
            sample_id: r.sample_id.clone(),
            entities: ents,
        });
    }
    write_jsonl(&ctx.output("contexts.jsonl"), &contexts)?;
    c.insert("statistics_samples".into(), pool.len() as u64);
    c.insert("pairs".into(), total_pairs);
    c.insert("contexts".into(), contexts.len() as u64);
    Ok(c)
}

fn think_graph(ctx: &Ctx) -> Result<Counts, PipelineError> {
    let cfg = ctx.cfg;
    let train: Vec<SampleRecord> = read_jsonl(&ctx.input("sample/train.jsonl"))?;
    let contexts: Vec<SampleContext> = read_jsonl(&ctx.input("lift/contexts.jsonl"))?;
    let contexts: HashMap<String, Vec<String>> = contexts.into_iter().map(|c| (c.sample_id, c.entities)).collect();
    let mut sets: HashMap<String, LiftPairSet> = HashMap::new();
    for f in list_files(&ctx.input("lift/pairs"))? {
        let Some(task) = f.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let set = LiftPairSet::from_tsv(task, &read_text(&f)?).map_err(|e| PipelineError::failed("parse", e))?;
        sets.insert(task.to_string(), set);
    }
    let lexicon = load_lexicon(cfg)?;
    let graph = KnowledgeGraph::load(&cfg.resolve(&cfg.paths.graph)).map_err(|e| PipelineError::failed("parse", e))?;
    let max_depth = cfg.think_graph.max_depth;

    let graphs: Vec<ThinkingGraph> = train
        .par_iter()
        .map(|r| {
            let pairs = match (contexts.get(&r.sample_id), sets.get(&r.task_id)) {
                (Some(ents), Some(set)) => pairs_for_sample(ents, &r.answer(), set),
                _ => Vec::new(),
            };
            build_thinking_graph(&r.sample_id, &pairs, &lexicon, &graph, max_depth)
        })
        .collect();
    write_jsonl(&ctx.output("graphs.jsonl"), &graphs)?;
    Ok(counts([
        ("samples", graphs.len() as u64),
        (
            "with_paths",
            graphs.iter().filter(|g| !g.paths.is_empty()).count() as u64,
        ),
        ("paths", graphs.iter().map(|g| g.paths.len() as u64).sum()),
        ("dropped_pairs", graphs.iter().map(|g| g.dropped as u64).sum()),
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisStatus {
    Accepted,
    Rejected,
    Unparseable,
    Failed,
}

/// Outcome of one synthesis request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub sample_id: String,
    pub task_id: String,
    pub status: SynthesisStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<RetentionVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<ReasoningRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn synthesis_err(e: SynthesisError) -> PipelineError {
    match e {
        SynthesisError::MissingToken(_) | SynthesisError::Template(_) => PipelineError::Config(e.to_string()),
        other => PipelineError::failed("synthesis", other),
    }
}

fn make_client(cfg: &Config) -> Result<Box<dyn CompletionClient>, PipelineError> {
    let s = &cfg.synthesize;
    Ok(match s.backend {
        Backend::Stub => Box::new(StubCompletionClient { config: s.stub }),
        Backend::Http => {
            let http = HttpCompletionClient::new(s.endpoint.clone()).map_err(synthesis_err)?;
            Box::new(CachedClient::new(http, cfg.cache_dir()).map_err(synthesis_err)?)
        }
    })
}

fn synthesize(ctx: &Ctx) -> Result<Counts, PipelineError> {
    let cfg = ctx.cfg;
    let train: Vec<SampleRecord> = read_jsonl(&ctx.input("sample/train.jsonl"))?;
    let train: HashMap<&str, &SampleRecord> = train.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let graphs: Vec<ThinkingGraph> = read_jsonl(&ctx.input("think-graph/graphs.jsonl"))?;
    let lexicon = load_lexicon(cfg)?;
    let template = match &cfg.paths.prompt_template {
        Some(p) => PromptTemplate::load(&cfg.resolve(p)).map_err(synthesis_err)?,
        None => PromptTemplate::default(),
    };
    let client = make_client(cfg)?;
    let retention = cfg.synthesize.retention;

    let todo: Vec<(&ThinkingGraph, &SampleRecord)> = graphs
        .iter()
        .filter(|g| !g.paths.is_empty())
        .filter_map(|g| train.get(g.sample_id.as_str()).map(|r| (g, *r)))
        .collect();
    let results: Vec<SynthesisResult> = todo
        .par_iter()
        .map(|(g, r)| {
            let answer = r.answer();
            let mut result = SynthesisResult {
                sample_id: r.sample_id.clone(),
                task_id: r.task_id.clone(),
                status: SynthesisStatus::Failed,
                verdict: None,
                record: None,
                error: None,
            };
            let prompt = assemble_prompt(
                &r.sample_id,
                r.window_text(),
                &answer,
                &r.instruction,
                g,
                &lexicon,
                &template,
            )
            .map_err(synthesis_err)?;
            match client.complete(&r.sample_id, &prompt.text) {
                Err(e) => result.error = Some(e.to_string()),
                Ok(c) => match parse_reasoning(&r.sample_id, &c.text) {
                    Err(e) => {
                        result.status = SynthesisStatus::Unparseable;
                        result.error = Some(e.to_string());
                    }
                    Ok(rec) => {
                        let verdict = validate_retention(&rec.final_results, &answer, retention);
                        result.status = if verdict.accepted {
                            SynthesisStatus::Accepted
                        } else {
                            SynthesisStatus::Rejected
                        };
                        result.verdict = Some(verdict);
                        result.record = Some(rec);
                    }
                },
            }
            Ok(result)
        })
        .collect::<Result<_, PipelineError>>()?;

    write_jsonl(&ctx.output("results.jsonl"), &results)?;
    let n = |s: SynthesisStatus| results.iter().filter(|r| r.status == s).count() as u64;
    Ok(counts([
        ("requested", results.len() as u64),
        ("accepted", n(SynthesisStatus::Accepted)),
        ("rejected", n(SynthesisStatus::Rejected)),
        ("unparseable", n(SynthesisStatus::Unparseable)),
        ("failed", n(SynthesisStatus::Failed)),
    ]))
}

fn emit_train(ctx: &Ctx) -> Result<Counts, PipelineError> {
    let cfg = ctx.cfg;
    let results: Vec<SynthesisResult> = read_jsonl(&ctx.input("synthesize/results.jsonl"))?;
    let train: Vec<SampleRecord> = read_jsonl(&ctx.input("sample/train.jsonl"))?;
    let by_id: HashMap<&str, &SampleRecord> = train.iter().map(|r| (r.sample_id.as_str(), r)).collect();

    let mut sft = Vec::new();
    let mut refused = 0u64;
    for res in results.iter().filter(|r| r.status == SynthesisStatus::Accepted) {
        let (Some(rec), Some(verdict), Some(sample)) = (&res.record, &res.verdict, by_id.get(res.sample_id.as_str()))
        else {
            refused += 1;
            continue;
        };
        match emit_training_record(&res.task_id, &sample.input_text, rec, verdict) {
            Ok(t) => sft.push(t),
            Err(_) => refused += 1,
        }
    }

    // Reinforcement-learning subset: a seeded shuffle per task, cut to budget.
    let mut tasks: Vec<&str> = Vec::new();
    let mut per_task: HashMap<&str, Vec<&SampleRecord>> = HashMap::new();
    for r in &train {
        let e = per_task.entry(r.task_id.as_str()).or_default();
        if e.is_empty() {
            tasks.push(r.task_id.as_str());
        }
        e.push(r);
    }
    let mut rl: Vec<&SampleRecord> = Vec::new();
    for task in tasks {
        let mut items = per_task[task].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed(&format!("emit-train/rl/{task}")));
        items.shuffle(&mut rng);
        items.truncate(cfg.reward.rl_budget_per_task);
        rl.extend(items);
    }

    write_jsonl(&ctx.output("sft.jsonl"), &sft)?;
    write_jsonl(&ctx.output("rl.jsonl"), rl.iter().copied())?;
    Ok(counts([
        ("sft", sft.len() as u64),
        ("refused", refused),
        ("rl", rl.len() as u64),
    ]))
}

/// Label-frequency baseline: the most common training labels for decision
/// tasks and the training positive rate for risk tasks.
pub fn baseline_outputs(train: &[SampleRecord], test: &[SampleRecord]) -> Vec<ModelOutput> {
    let mut freq: HashMap<&str, BTreeMap<String, u64>> = HashMap::new();
    let mut sizes: HashMap<&str, (usize, usize)> = HashMap::new();
    for r in train {
        let answer = r.answer();
        let s = sizes.entry(r.task_id.as_str()).or_default();
        s.0 += answer.len();
        s.1 += 1;
        let f = freq.entry(r.task_id.as_str()).or_default();
        for a in answer {
            *f.entry(a).or_default() += 1;
        }
    }
    test.iter()
        .map(|r| {
            let empty = BTreeMap::new();
            let f = freq.get(r.task_id.as_str()).unwrap_or(&empty);
            match r.kind {
                TaskKind::Decision => {
                    let (total, n) = sizes.get(r.task_id.as_str()).copied().unwrap_or((1, 1));
                    let m = ((total as f64 / n.max(1) as f64).round() as usize).max(1);
                    let mut ranked: Vec<(&String, &u64)> = f.iter().collect();
                    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
                    let labels: Vec<&str> = ranked.iter().take(m).map(|(l, _)| l.as_str()).collect();
                    ModelOutput {
                        sample_id: r.sample_id.clone(),
                        raw_text: format!(
                            "<think>\n## Extraction\nNone.\n## Reasoning\nMost frequent training labels.\n</think>\n{}",
                            format_answer(&labels)
                        ),
                        yes_logit: None,
                        no_logit: None,
                    }
                }
                TaskKind::Risk => {
                    let yes = f.get("yes").copied().unwrap_or(0) as f64;
                    let no = f.get("no").copied().unwrap_or(0) as f64;
                    let p = (yes + 1.0) / (yes + no + 2.0);
                    ModelOutput {
                        sample_id: r.sample_id.clone(),
                        raw_text: format!(
                            "<think>\n## Extraction\nNone.\n## Reasoning\nTraining positive rate.\n</think>\n{}",
                            if p >= 0.5 { "yes" } else { "no" }
                        ),
                        yes_logit: Some(p.ln()),
                        no_logit: Some((1.0 - p).ln()),
                    }
                }
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RewardRow {
    sample_id: String,
    task_id: String,
    format: f64,
    total: f64,
}

fn evaluate(ctx: &Ctx) -> Result<Counts, PipelineError> {
    let cfg = ctx.cfg;
    let test: Vec<SampleRecord> = read_jsonl(&ctx.input("sample/test.jsonl"))?;
    let train: Vec<SampleRecord> = read_jsonl(&ctx.input("sample/train.jsonl"))?;
    let eval_err = |e: thinkgraph::eval::EvalError| PipelineError::failed("eval", e);
    let outputs = match &cfg.evaluate.outputs {
        Some(p) => read_outputs(&read_text(&cfg.resolve(p))?).map_err(eval_err)?,
        None => {
            let outs = baseline_outputs(&train, &test);
            write_jsonl(&ctx.output("outputs.jsonl"), &outs)?;
            outs
        }
    };
    let report = build_report(&outputs, &test, ctx.seed("evaluate/bootstrap")).map_err(eval_err)?;
    write_text(&ctx.output("report.tsv"), &report.to_tsv())?;
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| PipelineError::failed("serialize", e))?;
    json.push('\n');
    write_text(&ctx.output("report.json"), &json)?;

    let gold: HashMap<&str, &SampleRecord> = test.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let rewards: Vec<RewardRow> = outputs
        .iter()
        .filter_map(|o| {
            let g = gold.get(o.sample_id.as_str())?;
            Some(RewardRow {
                sample_id: o.sample_id.clone(),
                task_id: g.task_id.clone(),
                format: format_reward(&o.raw_text),
                total: total_reward(&o.raw_text, &g.answer(), g.kind, &cfg.reward),
            })
        })
        .collect();
    write_jsonl(&ctx.output("rewards.jsonl"), &rewards)?;
    Ok(counts([
        ("outputs", outputs.len() as u64),
        ("tasks", report.tasks.len() as u64),
        ("rewarded", rewards.len() as u64),
    ]))
}
