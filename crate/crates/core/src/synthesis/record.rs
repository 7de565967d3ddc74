use serde::{Deserialize, Serialize};

use super::SynthesisError;
use crate::task::format_answer;

pub const DEFAULT_RETENTION: f64 = 0.7;
const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningRecord {
    pub sample_id: String,
    pub extraction: String,
    pub reasoning: String,
    pub final_results: Vec<String>,
    pub raw: String,
}

const SECTIONS: [(&str, &str); 3] = [
    ("Extraction", "## extraction"),
    ("Reasoning", "## reasoning"),
    ("Final Results", "## final results"),
];

fn is_header(line: &str, header: &str) -> bool {
    line.trim().to_lowercase() == header
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    for m in ['-', '*', '+', '•'] {
        if let Some(rest) = line.strip_prefix(m) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return rest.trim();
            }
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim();
        }
    }
    line
}

/// Splits a response on its three stage headers. Matching ignores case and
/// surrounding whitespace; final results are one entity per line with list
/// markers removed.
pub fn parse_reasoning(sample_id: &str, raw: &str) -> Result<ReasoningRecord, SynthesisError> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut starts = [0usize; 3];
    let mut from = 0;
    for (k, (name, header)) in SECTIONS.iter().enumerate() {
        let i = lines[from..]
            .iter()
            .position(|l| is_header(l, header))
            .ok_or(SynthesisError::MissingSection(name))?;
        starts[k] = from + i;
        from += i + 1;
    }
    let body = |k: usize| -> String {
        let end = starts.get(k + 1).copied().unwrap_or(lines.len());
        lines[starts[k] + 1..end].join("\n").trim().to_string()
    };
    let extraction = body(0);
    let reasoning = body(1);
    let mut final_results: Vec<String> = Vec::new();
    for line in body(2).lines() {
        let item = strip_list_marker(line);
        if !item.is_empty() && !final_results.iter().any(|f| f == item) {
            final_results.push(item.to_string());
        }
    }
    for (k, empty) in [extraction.is_empty(), reasoning.is_empty(), final_results.is_empty()]
        .into_iter()
        .enumerate()
    {
        if empty {
            return Err(SynthesisError::EmptySection(SECTIONS[k].0));
        }
    }
    Ok(ReasoningRecord {
        sample_id: sample_id.to_string(),
        extraction,
        reasoning,
        final_results,
        raw: raw.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionVerdict {
    pub inferable_count: usize,
    pub original_count: usize,
    pub ratio: f64,
    pub accepted: bool,
    /// Final results that are not ground-truth entities.
    pub hallucinated: Vec<String>,
}

/// Share of ground-truth entities the response derived. Any final result
/// outside the ground truth rejects the record.
pub fn validate_retention<S: AsRef<str>>(
    final_results: &[String],
    ground_truth: &[S],
    threshold: f64,
) -> RetentionVerdict {
    let truth: Vec<&str> = {
        let mut t: Vec<&str> = Vec::new();
        for g in ground_truth {
            let g = g.as_ref().trim();
            if !t.contains(&g) {
                t.push(g);
            }
        }
        t
    };
    let mut inferable = 0;
    let mut hallucinated = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for f in final_results {
        let f = f.trim();
        if seen.contains(&f) {
            continue;
        }
        seen.push(f);
        if truth.contains(&f) {
            inferable += 1;
        } else {
            hallucinated.push(f.to_string());
        }
    }
    let ratio = if truth.is_empty() {
        0.0
    } else {
        inferable as f64 / truth.len() as f64
    };
    RetentionVerdict {
        inferable_count: inferable,
        original_count: truth.len(),
        ratio,
        accepted: hallucinated.is_empty() && !truth.is_empty() && ratio >= threshold,
        hallucinated,
    }
}

/// One supervised example: model input and target output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub sample_id: String,
    pub task_id: String,
    pub input: String,
    pub output: String,
}

pub fn emit_training_record(
    task_id: &str,
    input: &str,
    record: &ReasoningRecord,
    verdict: &RetentionVerdict,
) -> Result<TrainingRecord, SynthesisError> {
    if !verdict.accepted {
        return Err(SynthesisError::NotAccepted(record.sample_id.clone()));
    }
    let tagged = |s: &str| s.contains(THINK_OPEN) || s.contains(THINK_CLOSE);
    if tagged(&record.extraction) || tagged(&record.reasoning) || record.final_results.iter().any(|f| tagged(f)) {
        return Err(SynthesisError::NestedThinkTag(record.sample_id.clone()));
    }
    let output = format!(
        "{THINK_OPEN}\n## Extraction\n{}\n\n## Reasoning\n{}\n{THINK_CLOSE}\n{}",
        record.extraction,
        record.reasoning,
        format_answer(&record.final_results)
    );
    Ok(TrainingRecord {
        sample_id: record.sample_id.clone(),
        task_id: task_id.to_string(),
        input: input.to_string(),
        output,
    })
}

/// Inverse of the output layout written by [`emit_training_record`].
pub fn parse_training_output(sample_id: &str, output: &str) -> Result<ReasoningRecord, SynthesisError> {
    let inner = output
        .strip_prefix(THINK_OPEN)
        .and_then(|r| r.split_once(THINK_CLOSE))
        .ok_or(SynthesisError::MissingSection("Extraction"))?;
    let (thinking, answer) = inner;
    let text = format!(
        "{}\n## Final Results\n{}",
        thinking.trim(),
        answer.trim_start_matches('\n')
    );
    let mut rec = parse_reasoning(sample_id, &text)?;
    rec.raw = output.to_string();
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WELL_FORMED: &str = "## Extraction\n**Labs [2127-04-18 07:16:00]**: creatinine 2.1\n\n\
        ## Reasoning\nRising creatinine points to kidney injury.\n\n\
        ## Final Results\n- Sepsis\n- Pneumonia\n";

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_three_sections() {
        let r = parse_reasoning("s", WELL_FORMED).unwrap();
        assert_eq!(r.extraction, "**Labs [2127-04-18 07:16:00]**: creatinine 2.1");
        assert_eq!(r.reasoning, "Rising creatinine points to kidney injury.");
        assert_eq!(r.final_results, ["Sepsis", "Pneumonia"]);
        assert_eq!(r.raw, WELL_FORMED);
    }

    #[test]
    fn header_matching_is_lenient() {
        let text = "Sure.\n  ## EXTRACTION \nx\n## reasoning\ny\n\t## Final results\n1. A\n2) B\n* C\nA\n";
        let r = parse_reasoning("s", text).unwrap();
        assert_eq!(r.final_results, ["A", "B", "C"]);
    }

    #[test]
    fn names_first_violated_header() {
        let missing = "## Extraction\nx\n## Final Results\n- a\n";
        assert_eq!(
            parse_reasoning("s", missing),
            Err(SynthesisError::MissingSection("Reasoning"))
        );
        let reordered = "## Reasoning\ny\n## Extraction\nx\n## Final Results\n- a\n";
        assert_eq!(
            parse_reasoning("s", reordered),
            Err(SynthesisError::MissingSection("Reasoning"))
        );
        assert_eq!(
            parse_reasoning("s", "hello"),
            Err(SynthesisError::MissingSection("Extraction"))
        );
        let empty = "## Extraction\n\n## Reasoning\ny\n## Final Results\n- a\n";
        assert_eq!(
            parse_reasoning("s", empty),
            Err(SynthesisError::EmptySection("Extraction"))
        );
        let no_results = "## Extraction\nx\n## Reasoning\ny\n## Final Results\n- \n";
        assert_eq!(
            parse_reasoning("s", no_results),
            Err(SynthesisError::EmptySection("Final Results"))
        );
    }

    fn truth(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("label {i}")).collect()
    }

    #[test]
    fn retention_boundary() {
        let gt = truth(10);
        let v = validate_retention(&gt[..7], &gt, DEFAULT_RETENTION);
        assert_eq!(
            (v.inferable_count, v.original_count, v.ratio, v.accepted),
            (7, 10, 0.7, true)
        );
        let v = validate_retention(&gt[..6], &gt, DEFAULT_RETENTION);
        assert!(!v.accepted);
        let gt = truth(100);
        assert!(!validate_retention(&gt[..69], &gt, DEFAULT_RETENTION).accepted);
        assert!(validate_retention(&gt[..70], &gt, DEFAULT_RETENTION).accepted);
    }

    #[test]
    fn hallucination_rejects() {
        let gt = truth(3);
        let mut fr = gt.clone();
        fr.push("Unrelated finding".into());
        let v = validate_retention(&fr, &gt, DEFAULT_RETENTION);
        assert_eq!(v.ratio, 1.0);
        assert!(!v.accepted);
        assert_eq!(v.hallucinated, ["Unrelated finding"]);
        // case differences are not forgiven
        let v = validate_retention(&strings(&["LABEL 0", "label 1", "label 2"]), &gt, DEFAULT_RETENTION);
        assert!(!v.accepted);
        let v = validate_retention(&strings(&[" label 0 ", "label 1", "label 2"]), &gt, DEFAULT_RETENTION);
        assert!(v.accepted);
    }

    #[test]
    fn emitted_record_layout() {
        let r = parse_reasoning("s", WELL_FORMED).unwrap();
        let v = validate_retention(&r.final_results, &strings(&["Sepsis", "Pneumonia"]), DEFAULT_RETENTION);
        let t = emit_training_record("dx", "input text", &r, &v).unwrap();
        assert_eq!(
            t.output,
            "<think>\n## Extraction\n**Labs [2127-04-18 07:16:00]**: creatinine 2.1\n\n## Reasoning\n\
             Rising creatinine points to kidney injury.\n</think>\nSepsis\nPneumonia"
        );
        assert_eq!(t.output.matches("<think>").count(), 1);
        assert_eq!(t.output.matches("</think>").count(), 1);
        let back = parse_training_output("s", &t.output).unwrap();
        assert_eq!(back.final_results, r.final_results);
        assert_eq!(back.extraction, r.extraction);
        assert_eq!(back.reasoning, r.reasoning);
    }

    #[test]
    fn emit_requires_acceptance_and_clean_text() {
        let r = parse_reasoning("s", WELL_FORMED).unwrap();
        let rejected = validate_retention(&r.final_results, &strings(&["Sepsis"]), DEFAULT_RETENTION);
        assert_eq!(
            emit_training_record("dx", "i", &r, &rejected),
            Err(SynthesisError::NotAccepted("s".into()))
        );
        let mut bad = r.clone();
        bad.reasoning.push_str(" </think>");
        let ok = validate_retention(&r.final_results, &r.final_results, DEFAULT_RETENTION);
        assert_eq!(
            emit_training_record("dx", "i", &bad, &ok),
            Err(SynthesisError::NestedThinkTag("s".into()))
        );
    }

    proptest! {
        #[test]
        fn accepted_implies_enough_results(n in 1usize..60, k in 0usize..60, extra in any::<bool>()) {
            let gt = truth(n);
            let k = k.min(n);
            let mut fr: Vec<String> = gt[..k].to_vec();
            if extra {
                fr.push("made up".into());
            }
            let v = validate_retention(&fr, &gt, DEFAULT_RETENTION);
            prop_assert_eq!(v.accepted, !extra && k > 0 && 10 * k >= 7 * n);
            if v.accepted {
                prop_assert!(fr.len() >= (7 * n).div_ceil(10));
                prop_assert!(fr.iter().all(|f| gt.contains(f)));
            }
        }

        #[test]
        fn training_output_round_trips(
            results in prop::collection::vec("[A-Za-z][A-Za-z0-9 ,()/-]{0,20}[A-Za-z0-9)]", 1..6),
            ex in "[a-z][a-z .:]{0,40}",
            re in "[a-z][a-z .]{0,40}",
        ) {
            let mut uniq: Vec<String> = Vec::new();
            for r in results {
                if !uniq.contains(&r) {
                    uniq.push(r);
                }
            }
            let rec = ReasoningRecord {
                sample_id: "s".into(),
                extraction: ex.trim().to_string(),
                reasoning: re.trim().to_string(),
                final_results: uniq.clone(),
                raw: String::new(),
            };
            let v = validate_retention(&uniq, &uniq, DEFAULT_RETENTION);
            let t = emit_training_record("t", "in", &rec, &v).unwrap();
            let back = parse_training_output("s", &t.output).unwrap();
            prop_assert_eq!(back.final_results, uniq);
        }
    }
}
