use crate::knowledge::{ConceptLexicon, RelationPath, ThinkingGraph};
use crate::task::format_answer;

use super::SynthesisError;

pub const DEFAULT_TEMPLATE: &str = include_str!("../../defaults/synthesis_prompt.txt");

pub const SECTION_HEADERS: [&str; 4] = [
    "# Patient EHR Context #",
    "# Retrieved Medical Knowledge #",
    "# Ground Truth #",
    "# Task #",
];
const PLACEHOLDERS: [&str; 4] = ["{context}", "{medical_knowledge}", "{ground_truth}", "{task}"];

/// A prompt template whose four sections and placeholders each occur once,
/// in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, SynthesisError> {
        let mut last = 0;
        for p in PLACEHOLDERS {
            let found: Vec<usize> = text.match_indices(p).map(|(i, _)| i).collect();
            match found[..] {
                [i] if i >= last => last = i,
                [_] => return Err(SynthesisError::Template(format!("{p} is out of order"))),
                _ => return Err(SynthesisError::Template(format!("{p} must occur exactly once"))),
            }
        }
        let mut last = 0;
        for h in SECTION_HEADERS {
            let lines: Vec<usize> = text
                .lines()
                .enumerate()
                .filter(|(_, l)| l.trim() == h)
                .map(|(i, _)| i)
                .collect();
            match lines[..] {
                [i] if i >= last => last = i,
                [_] => return Err(SynthesisError::Template(format!("section {h} is out of order"))),
                _ => return Err(SynthesisError::Template(format!("section {h} must occur exactly once"))),
            }
        }
        Ok(Self { text: text.to_string() })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SynthesisError> {
        let text = std::fs::read_to_string(path).map_err(|e| SynthesisError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Substitutes each placeholder once; inserted text is never rescanned.
    pub fn fill(&self, values: [&str; 4]) -> String {
        let mut out = String::with_capacity(self.text.len() + values.iter().map(|v| v.len()).sum::<usize>());
        let mut rest = self.text.as_str();
        for (p, v) in PLACEHOLDERS.iter().zip(values) {
            let i = rest.find(p).expect("validated template");
            out.push_str(&rest[..i]);
            out.push_str(v);
            rest = &rest[i + p.len()..];
        }
        out.push_str(rest);
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisPrompt {
    pub sample_id: String,
    pub text: String,
}

/// `source --rel--> concept --rel--> target`. Endpoints keep the entity
/// strings; intermediate concepts show their preferred names.
pub fn render_path(path: &RelationPath, lexicon: &ConceptLexicon) -> String {
    if path.hops.is_empty() {
        return format!("{} --same_as--> {}", path.source, path.target);
    }
    let mut out = path.source.clone();
    let last = path.hops.len() - 1;
    for (i, hop) in path.hops.iter().enumerate() {
        let node = if i == last {
            path.target.as_str()
        } else {
            lexicon.preferred_name(&hop.tail).unwrap_or(&hop.tail)
        };
        out.push_str(&format!(" --{}--> {}", hop.relation, node));
    }
    out
}

pub fn assemble_prompt(
    sample_id: &str,
    context: &str,
    answer: &[String],
    instruction: &str,
    graph: &ThinkingGraph,
    lexicon: &ConceptLexicon,
    template: &PromptTemplate,
) -> Result<SynthesisPrompt, SynthesisError> {
    if graph.paths.is_empty() {
        return Err(SynthesisError::EmptyThinkingGraph(sample_id.to_string()));
    }
    let knowledge = graph
        .paths
        .iter()
        .map(|p| render_path(p, lexicon))
        .collect::<Vec<_>>()
        .join("\n");
    let truth = format_answer(answer);
    Ok(SynthesisPrompt {
        sample_id: sample_id.to_string(),
        text: template.fill([context, &knowledge, &truth, instruction]),
    })
}
