use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use super::{read, KnowledgeError};
use crate::ehr::MASK_TOKEN;

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.7;

/// Lowercased alphanumeric tokens; everything else separates tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let lowered: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    lowered.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone)]
struct Term {
    cui: String,
    text: String,
    tokens: BTreeSet<String>,
}

/// Many-to-one mapping from surface terms to concept ids.
#[derive(Debug, Clone)]
pub struct ConceptLexicon {
    terms: Vec<Term>,
    exact: HashMap<String, usize>,
    by_token: HashMap<String, Vec<usize>>,
    preferred: HashMap<String, usize>,
    max_term_tokens: usize,
    threshold: f64,
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

impl ConceptLexicon {
    pub fn from_entries<I, C, T>(entries: I) -> Result<Self, KnowledgeError>
    where
        I: IntoIterator<Item = (C, T)>,
        C: AsRef<str>,
        T: AsRef<str>,
    {
        let mut lex = ConceptLexicon {
            terms: Vec::new(),
            exact: HashMap::new(),
            by_token: HashMap::new(),
            preferred: HashMap::new(),
            max_term_tokens: 0,
            threshold: DEFAULT_MATCH_THRESHOLD,
        };
        let mut seen = HashSet::new();
        for (n, (cui, text)) in entries.into_iter().enumerate() {
            let (cui, text) = (cui.as_ref().trim(), text.as_ref().trim());
            let bad = |message: &str| KnowledgeError::Parse {
                location: format!("lexicon entry {}", n + 1),
                message: message.to_string(),
            };
            if cui.is_empty() {
                return Err(bad("empty concept id"));
            }
            let ordered = normalize_tokens(text);
            if ordered.is_empty() {
                return Err(bad("term is empty after normalization"));
            }
            if !seen.insert((cui.to_string(), text.to_string())) {
                continue;
            }
            let id = lex.terms.len();
            let key = ordered.join(" ");
            match lex.exact.get(&key) {
                Some(&other) if lex.terms[other].cui.as_str() <= cui => {}
                _ => {
                    lex.exact.insert(key, id);
                }
            }
            lex.preferred.entry(cui.to_string()).or_insert(id);
            let tokens: BTreeSet<String> = ordered.into_iter().collect();
            for t in &tokens {
                lex.by_token.entry(t.clone()).or_default().push(id);
            }
            lex.max_term_tokens = lex.max_term_tokens.max(tokens.len());
            lex.terms.push(Term {
                cui: cui.to_string(),
                text: text.to_string(),
                tokens,
            });
        }
        Ok(lex)
    }

    /// `concept_id TAB term` per line, no header.
    pub fn parse_tsv(text: &str) -> Result<Self, KnowledgeError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (cui, term) = line.split_once('\t').ok_or_else(|| KnowledgeError::Parse {
                location: format!("lexicon line {}", n + 1),
                message: "expected concept_id TAB term".into(),
            })?;
            entries.push((cui, term));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        Self::parse_tsv(&read(path)?)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// The first term listed for a concept.
    pub fn preferred_name(&self, cui: &str) -> Option<&str> {
        self.preferred.get(cui).map(|&i| self.terms[i].text.as_str())
    }

    /// Exact normalized lookup, else the best token-set Jaccard match at or
    /// above the threshold; ties go to the smallest concept id.
    pub fn link_concept(&self, entity: &str) -> Option<&str> {
        let ordered = normalize_tokens(entity);
        if ordered.is_empty() {
            return None;
        }
        if let Some(&i) = self.exact.get(&ordered.join(" ")) {
            return Some(&self.terms[i].cui);
        }
        let tokens: BTreeSet<String> = ordered.into_iter().collect();
        let mut best: Option<(f64, &str)> = None;
        for &i in tokens.iter().filter_map(|t| self.by_token.get(t)).flatten() {
            let term = &self.terms[i];
            let j = jaccard(&tokens, &term.tokens);
            if j < self.threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bj, bc)) => j > bj || (j == bj && term.cui.as_str() < bc),
            };
            if better {
                best = Some((j, &term.cui));
            }
        }
        best.map(|(_, c)| c)
    }

    /// Lexicon terms found in free text, in order of first appearance.
    ///
    /// Scans left to right; at each position the longest token span that
    /// approximately matches a term wins. A span must start and end on tokens
    /// of the matched term, so it never swallows a neighbouring word.
    pub fn extract_entities(&self, text: &str) -> Vec<String> {
        let tokens = normalize_tokens(&text.replace(MASK_TOKEN, " "));
        let max_span = ((self.max_term_tokens as f64 / self.threshold).floor() as usize).max(self.max_term_tokens);
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        let mut i = 0;
        while i < tokens.len() {
            let Some(candidates) = self.by_token.get(&tokens[i]) else {
                i += 1;
                continue;
            };
            let mut matched = None;
            for len in (1..=max_span.min(tokens.len() - i)).rev() {
                let span = &tokens[i..i + len];
                let last = &span[len - 1];
                let set: BTreeSet<String> = span.iter().cloned().collect();
                let mut best: Option<(f64, &str)> = None;
                for &c in candidates {
                    let term = &self.terms[c];
                    if !term.tokens.contains(last) {
                        continue;
                    }
                    let j = jaccard(&set, &term.tokens);
                    if j < self.threshold {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bj, bt)) => j > bj || (j == bj && term.text.as_str() < bt),
                    };
                    if better {
                        best = Some((j, &term.text));
                    }
                }
                if let Some((_, t)) = best {
                    matched = Some((len, t));
                    break;
                }
            }
            match matched {
                Some((len, term)) => {
                    if seen.insert(term) {
                        out.push(term.to_string());
                    }
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lexicon() -> ConceptLexicon {
        ConceptLexicon::parse_tsv(
            "C0004238\tatrial fibrillation\n\
             C0004238\tAF - atrial fibrillation\n\
             C0020538\thypertensive disease NOS\n\
             C0019134\theparin\n\
             C0022660\tacute kidney failure\n\
             C0022661\tchronic kidney disease stage 4\n\
             C0011849\tdiabetes mellitus\n",
        )
        .unwrap()
    }

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_tokens("Heparin (Porcine)-5,000 UNIT"),
            ["heparin", "porcine", "5", "000", "unit"]
        );
        assert!(normalize_tokens(" --- ").is_empty());
    }

    #[test]
    fn exact_link() {
        let lex = lexicon();
        assert_eq!(lex.link_concept("Atrial Fibrillation"), Some("C0004238"));
        assert_eq!(lex.link_concept("heparin"), Some("C0019134"));
        assert_eq!(lex.preferred_name("C0004238"), Some("atrial fibrillation"));
    }

    #[test]
    fn approximate_link_uses_jaccard() {
        let lex = lexicon();
        // {hypertensive, disease} vs {hypertensive, disease, nos}: 2/3
        assert_eq!(lex.link_concept("hypertensive disease"), None);
        let loose = lexicon().with_threshold(0.65);
        assert_eq!(loose.link_concept("hypertensive disease"), Some("C0020538"));
        // 4/5 = 0.8
        assert_eq!(lex.link_concept("chronic kidney disease stage"), Some("C0022661"));
        assert_eq!(lex.link_concept("qwzx plorb"), None);
        assert_eq!(lex.link_concept(""), None);
    }

    #[test]
    fn link_ties_pick_smallest_concept() {
        let lex = ConceptLexicon::parse_tsv("C9\tred blood cell count\nC2\tred blood cell mass\n").unwrap();
        // {red, blood, cell} vs either term: 3/4
        assert_eq!(lex.link_concept("red blood cell"), Some("C2"));
        let lex = ConceptLexicon::parse_tsv("C9\tsepsis\nC2\tsepsis\n").unwrap();
        assert_eq!(lex.link_concept("Sepsis"), Some("C2"));
    }

    #[test]
    fn bad_lexicon_rows() {
        assert!(ConceptLexicon::parse_tsv("C1 heparin\n").is_err());
        assert!(ConceptLexicon::parse_tsv("\theparin\n").is_err());
        assert!(ConceptLexicon::parse_tsv("C1\t---\n").is_err());
    }

    #[test]
    fn extraction() {
        let lex = lexicon();
        assert!(lex.extract_entities("").is_empty());
        assert_eq!(
            lex.extract_entities("History of atrial fibrillation on heparin."),
            ["atrial fibrillation", "heparin"]
        );
        let text = "- Chief_Complaint: fibrillation atrial\n| Heparin | nan |\n\
                    Pt with Acute-Kidney failure and diabetes mellitus type 2, heparin again";
        assert_eq!(
            lex.extract_entities(text),
            [
                "atrial fibrillation",
                "heparin",
                "acute kidney failure",
                "diabetes mellitus"
            ]
        );
    }

    #[test]
    fn extraction_does_not_swallow_neighbours() {
        let lex = lexicon();
        assert_eq!(
            lex.extract_entities("acute kidney failure heparin"),
            ["acute kidney failure", "heparin"]
        );
    }

    #[test]
    fn masked_values_are_ignored() {
        let lex = ConceptLexicon::parse_tsv("C1\tmasked\n").unwrap();
        assert!(lex.extract_entities("- Medication: [MASKED]").is_empty());
    }

    proptest! {
        #[test]
        fn extraction_ignores_case(words in prop::collection::vec(
            prop::sample::select(vec!["atrial", "fibrillation", "Heparin", "acute", "kidney", "failure", "the", "on", "NOS", "Diabetes", "mellitus"]),
            0..30,
        ), flips in prop::collection::vec(any::<bool>(), 30)) {
            let lex = lexicon();
            let text = words.join(" ");
            let mixed: String = text
                .chars()
                .zip(flips.iter().cycle())
                .map(|(c, f)| if *f { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
                .collect();
            prop_assert_eq!(lex.extract_entities(&text), lex.extract_entities(&mixed));
        }

        #[test]
        fn link_is_deterministic(s in "[a-z ]{0,30}") {
            let a = lexicon();
            let b = lexicon();
            prop_assert_eq!(a.link_concept(&s), b.link_concept(&s));
        }
    }
}
