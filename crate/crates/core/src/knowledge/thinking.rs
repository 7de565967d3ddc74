use serde::{Deserialize, Serialize};

use super::{ConceptLexicon, KnowledgeGraph, RelationPath};
use crate::cooccur::LiftPair;

pub const DEFAULT_MAX_DEPTH: usize = 3;

/// The relation paths that connect a sample's retained entity pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkingGraph {
    pub sample_id: String,
    pub paths: Vec<RelationPath>,
    /// Pairs discarded because an endpoint did not link or no path was found.
    pub dropped: usize,
}

/// One path per pair, in pair order. Pairs whose endpoints fail to link to
/// graph concepts, or that are not connected within `max_depth`, only count
/// toward `dropped`.
pub fn build_thinking_graph(
    sample_id: &str,
    pairs: &[LiftPair],
    lexicon: &ConceptLexicon,
    graph: &KnowledgeGraph,
    max_depth: usize,
) -> ThinkingGraph {
    let mut paths = Vec::new();
    let mut dropped = 0;
    for p in pairs {
        let found = match (lexicon.link_concept(&p.context), lexicon.link_concept(&p.label)) {
            (Some(a), Some(b)) => graph.bidir_search(a, b, max_depth).ok().flatten(),
            _ => None,
        };
        match found {
            Some(hops) => paths.push(RelationPath {
                source: p.context.clone(),
                target: p.label.clone(),
                hops,
            }),
            None => dropped += 1,
        }
    }
    ThinkingGraph {
        sample_id: sample_id.to_string(),
        paths,
        dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(e: &str, y: &str) -> LiftPair {
        LiftPair {
            context: e.into(),
            label: y.into(),
            lift: 6.0,
        }
    }

    #[test]
    fn five_pairs_three_connectable() {
        let lex = ConceptLexicon::parse_tsv(
            "C1\theparin\nC2\tdeep vein thrombosis\nC3\tcreatinine\nC4\tacute kidney failure\n\
             C5\tinsulin\nC6\tdiabetes mellitus\nC7\thematocrit\nC9\tlonely concept\n",
        )
        .unwrap();
        let g = KnowledgeGraph::parse_tsv(
            "C1\tmay_treat\tC2\nC3\tmeasures\tC8\nC8\tassociated_with\tC4\nC5\tmay_treat\tC6\nC7\tisa\tC3\n",
        )
        .unwrap();
        let pairs = [
            pair("heparin", "Deep vein thrombosis"),
            pair("creatinine", "Acute kidney failure"),
            pair("insulin", "diabetes mellitus"),
            pair("hematocrit", "unknown thing"),
            pair("heparin", "lonely concept"),
        ];
        let tg = build_thinking_graph("s1", &pairs, &lex, &g, DEFAULT_MAX_DEPTH);
        assert_eq!(tg.paths.len(), 3);
        assert_eq!(tg.dropped, 2);
        assert_eq!(tg.paths[0].len(), 1);
        assert_eq!(tg.paths[1].len(), 2);
        assert!(tg.paths.iter().all(RelationPath::is_chained));
        assert_eq!(tg.paths[1].target, "Acute kidney failure");
    }

    #[test]
    fn shared_concept_gives_zero_hop_path() {
        let lex = ConceptLexicon::parse_tsv("C1\tatrial fibrillation\nC1\tAF\n").unwrap();
        let g = KnowledgeGraph::parse_tsv("C1\tisa\tC2\n").unwrap();
        let tg = build_thinking_graph("s", &[pair("AF", "atrial fibrillation")], &lex, &g, 3);
        assert_eq!(tg.paths.len(), 1);
        assert!(tg.paths[0].is_empty());
    }

    #[test]
    fn empty_input() {
        let lex = ConceptLexicon::parse_tsv("C1\tx\n").unwrap();
        let g = KnowledgeGraph::default();
        let tg = build_thinking_graph("s", &[], &lex, &g, 3);
        assert!(tg.paths.is_empty());
        assert_eq!(tg.dropped, 0);
    }
}
