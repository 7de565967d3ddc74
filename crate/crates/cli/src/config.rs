//! Pipeline configuration: one TOML file with a root seed, shared paths and
//! one section per stage. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thinkgraph::cooccur::LiftThresholds;
use thinkgraph::eval::RewardConfig;
use thinkgraph::knowledge::{DEFAULT_MATCH_THRESHOLD, DEFAULT_MAX_DEPTH};
use thinkgraph::synthesis::{EndpointConfig, StubConfig, DEFAULT_RETENTION};
use thinkgraph::task::WindowFilter;

use crate::error::PipelineError;

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `manifest.json` and the table files.
    pub data_dir: String,
    /// Root of all stage outputs.
    pub work_dir: String,
    pub lexicon: String,
    pub graph: String,
    #[serde(default)]
    pub tasks: Option<String>,
    #[serde(default)]
    pub icd_ccs: Option<String>,
    #[serde(default)]
    pub ndc_atc: Option<String>,
    #[serde(default)]
    pub prompt_template: Option<String>,
    /// Completion cache; defaults to `{work_dir}/cache/completions`.
    #[serde(default)]
    pub cache_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSamplesConfig {
    pub max_span_hours: u32,
    pub min_events: usize,
    pub max_events: usize,
}

impl Default for BuildSamplesConfig {
    fn default() -> Self {
        let w = WindowFilter::default();
        Self {
            max_span_hours: w.max_span_hours,
            min_events: w.min_events,
            max_events: w.max_events,
        }
    }
}

impl BuildSamplesConfig {
    pub fn window(&self) -> WindowFilter {
        WindowFilter {
            max_span_hours: self.max_span_hours,
            min_events: self.min_events,
            max_events: self.max_events,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub test_fraction: f64,
    pub train_per_task: usize,
    pub test_per_task: usize,
    /// Candidate options attached to decision test samples.
    pub pool_size: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            train_per_task: 500,
            test_per_task: 200,
            pool_size: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftConfig {
    pub min_count: u64,
    pub min_lift: f64,
    pub match_threshold: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        let t = LiftThresholds::default();
        Self {
            min_count: t.min_count,
            min_lift: t.min_lift,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
        }
    }
}

impl LiftConfig {
    pub fn thresholds(&self) -> LiftThresholds {
        LiftThresholds {
            min_count: self.min_count,
            min_lift: self.min_lift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThinkGraphConfig {
    pub max_depth: usize,
}

impl Default for ThinkGraphConfig {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub backend: Backend,
    pub retention: f64,
    pub endpoint: EndpointConfig,
    pub stub: StubConfig,
}

impl Default for SynthesizeConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Stub,
            retention: DEFAULT_RETENTION,
            endpoint: EndpointConfig::default(),
            stub: StubConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Model outputs JSONL. Without it the stage scores a label-frequency
    /// baseline built from the training split.
    pub outputs: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub paths: Paths,
    #[serde(default)]
    pub build_samples: BuildSamplesConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub lift: LiftConfig,
    #[serde(default)]
    pub think_graph: ThinkGraphConfig,
    #[serde(default)]
    pub synthesize: SynthesizeConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    /// Directory the relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: Config =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.jobs == 0 {
            return fail("jobs must be at least 1".into());
        }
        let b = &self.build_samples;
        if b.min_events > b.max_events {
            return fail(format!(
                "build_samples: min_events {} exceeds max_events {}",
                b.min_events, b.max_events
            ));
        }
        let f = self.sample.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return fail(format!("sample.test_fraction must lie in (0, 1), got {f}"));
        }
        if self.sample.pool_size == 0 {
            return fail("sample.pool_size must be positive".into());
        }
        let t = self.lift.match_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return fail(format!("lift.match_threshold must lie in (0, 1], got {t}"));
        }
        if !self.lift.min_lift.is_finite() {
            return fail("lift.min_lift must be finite".into());
        }
        let r = self.synthesize.retention;
        if !(0.0..=1.0).contains(&r) {
            return fail(format!("synthesize.retention must lie in [0, 1], got {r}"));
        }
        let s = &self.synthesize.stub;
        if !(0.0..=1.0).contains(&s.drop_rate) || !(0.0..=1.0).contains(&s.hallucination_rate) {
            return fail("synthesize.stub rates must lie in [0, 1]".into());
        }
        if self.synthesize.endpoint.max_attempts == 0 || self.synthesize.endpoint.max_in_flight == 0 {
            return fail("synthesize.endpoint: max_attempts and max_in_flight must be positive".into());
        }
        if self.synthesize.backend == Backend::Http && self.synthesize.endpoint.base_url.trim().is_empty() {
            return fail("synthesize.endpoint.base_url is required for the http backend".into());
        }
        self.reward
            .validate()
            .map_err(|m| PipelineError::Config(format!("reward: {m}")))?;
        for (name, value) in [("data_dir", &self.paths.data_dir), ("work_dir", &self.paths.work_dir)] {
            if value.trim().is_empty() {
                return fail(format!("paths.{name} is empty"));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.paths.work_dir)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve(&self.paths.data_dir)
    }

    pub fn cache_dir(&self) -> PathBuf {
        match &self.paths.cache_dir {
            Some(p) => self.resolve(p),
            None => self.work_dir().join("cache").join("completions"),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_depth: Option<usize>,
    pub reward_assignment: Option<thinkgraph::eval::RewardAssignment>,
    pub jobs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.max_depth {
            cfg.think_graph.max_depth = d;
        }
        if let Some(a) = self.reward_assignment {
            cfg.reward.assignment = a;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[paths]
data_dir = "data"
work_dir = "work"
lexicon = "lexicon.tsv"
graph = "graph.tsv"
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = Config::parse(MINIMAL, Path::new("/base")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.jobs, 1);
        assert_eq!(cfg.think_graph.max_depth, 3);
        assert_eq!(cfg.lift.min_count, 5);
        assert_eq!(cfg.build_samples.min_events, 10);
        assert_eq!(cfg.work_dir(), PathBuf::from("/base/work"));
        assert_eq!(cfg.cache_dir(), PathBuf::from("/base/work/cache/completions"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[lift]\nmin_lfit = 3.0\n");
        assert!(matches!(
            Config::parse(&text, Path::new(".")),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut cfg = Config::parse(MINIMAL, Path::new(".")).unwrap();
        cfg.sample.test_fraction = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = Config::parse(MINIMAL, Path::new(".")).unwrap();
        cfg.jobs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = Config::parse(MINIMAL, Path::new(".")).unwrap();
        Overrides {
            seed: Some(9),
            max_depth: Some(2),
            reward_assignment: Some(thinkgraph::eval::RewardAssignment::Equation),
            jobs: Some(4),
        }
        .apply(&mut cfg);
        assert_eq!((cfg.seed, cfg.think_graph.max_depth, cfg.jobs), (9, 2, 4));
        assert_eq!(cfg.reward.assignment, thinkgraph::eval::RewardAssignment::Equation);
    }
}
