//! Entity extraction, concept linking and relation-path search over a
//! concept graph.

mod graph;
mod lexicon;
mod thinking;

use thiserror::Error;

pub use graph::{Hop, KnowledgeGraph, RelationPath};
pub use lexicon::{normalize_tokens, ConceptLexicon, DEFAULT_MATCH_THRESHOLD};
pub use thinking::{build_thinking_graph, ThinkingGraph, DEFAULT_MAX_DEPTH};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnowledgeError {
    #[error("concept {0:?} is not in the graph")]
    UnknownConcept(String),
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn read(path: &std::path::Path) -> Result<String, KnowledgeError> {
    std::fs::read_to_string(path).map_err(|e| KnowledgeError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
