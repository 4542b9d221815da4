//! Candidate ingestion, answer extraction, correctness labeling, and
//! featurization.
//!
//! Each question carries K generated reasoning paths. A path's final answer
//! is pulled out of its text (`####` marker convention, with a fallback scan),
//! labeled 1 when it matches the gold answer, and the (question, path, answer)
//! triple is hashed into a fixed-width feature vector for the discriminator.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, fnv1a};

/// One question with its K candidate reasoning paths.
#[derive(Clone, Debug)]
pub struct QuestionRecord {
    pub question_id: String,
    pub question_text: String,
    /// Ordered answer identifiers, e.g. `A..D` or `yes/no/maybe`.
    pub option_set: Vec<String>,
    pub gold_answer: String,
    pub candidates: Vec<CandidateRecord>,
}

/// One candidate reasoning path. `extracted_answer == None` means the
/// candidate abstained (no parseable answer); `label`/`features` stay `None`
/// until the record is annotated.
#[derive(Clone, Debug)]
pub struct CandidateRecord {
    pub index: usize,
    pub generation_text: String,
    pub extracted_answer: Option<String>,
    pub label: Option<u8>,
    pub features: Option<Vec<f64>>,
}

impl CandidateRecord {
    pub fn new(index: usize, generation_text: String) -> CandidateRecord {
        CandidateRecord {
            index,
            generation_text,
            extracted_answer: None,
            label: None,
            features: None,
        }
    }
}

/// A labeled feature vector traceable back to its question and candidate.
#[derive(Clone, Debug)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: u8,
    pub question_id: String,
    pub candidate_index: usize,
}

/// The training set a client's discriminator sees.
#[derive(Clone, Debug, Default)]
pub struct DiscriminationSet {
    pub examples: Vec<LabeledExample>,
    pub feature_dim: usize,
}

impl DiscriminationSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.label == 1).count()
    }
}

/// Normalizes a whitespace token and matches it against the option set,
/// case-insensitively and ignoring surrounding punctuation ("B.", "(b)").
fn match_option(token: &str, option_set: &[String]) -> Option<String> {
    let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        return None;
    }
    option_set
        .iter()
        .find(|o| o.eq_ignore_ascii_case(trimmed))
        .cloned()
}

/// Extracts the final answer from a generation.
///
/// The text after the *last* `####` marker is scanned token by token and the
/// first token matching an option wins. Generations that omit the marker (or
/// put nothing recognizable after it) fall back to the last standalone option
/// identifier anywhere in the text. `None` means the candidate abstained.
pub fn extract_answer(generation_text: &str, option_set: &[String]) -> Option<String> {
    if let Some(pos) = generation_text.rfind("####") {
        let tail = &generation_text[pos + 4..];
        for token in tail.split_whitespace() {
            if let Some(opt) = match_option(token, option_set) {
                return Some(opt);
            }
        }
    }
    let mut last = None;
    for token in generation_text.split_whitespace() {
        if let Some(opt) = match_option(token, option_set) {
            last = Some(opt);
        }
    }
    last
}

/// Binary correctness label: 1 iff the extracted answer equals the gold
/// answer. An abstaining candidate counts as incorrect.
pub fn label_candidate(extracted: Option<&str>, gold: &str) -> u8 {
    u8::from(extracted == Some(gold))
}

fn add_token(v: &mut [f64], index_seed: u64, sign_seed: u64, token: &str) {
    let idx = (fnv1a(index_seed, token.as_bytes()) % v.len() as u64) as usize;
    let sign = if fnv1a(sign_seed, token.as_bytes()) & 1 == 0 {
        1.0
    } else {
        -1.0
    };
    v[idx] += sign;
}

/// Hashes `(question, reasoning, answer)` into an L2-normalized vector of
/// width `dim` via signed feature hashing of word unigrams and bigrams.
///
/// The three fields hash into separate namespaces, so a word appearing in
/// the question and the same word in the answer land on independent indices,
/// and empty inputs yield the zero vector. Both hash functions derive from
/// `seed`, making the encoding a pure function of its arguments.
pub fn featurize(question: &str, reasoning: &str, answer: &str, dim: usize, seed: u64) -> Vec<f64> {
    debug_assert!(dim >= 8, "feature dimension below documented minimum");
    let index_seed = derive_seed(seed, 1);
    let sign_seed = derive_seed(seed, 2);
    let mut v = vec![0.0; dim];
    for (prefix, text) in [("Q", question), ("R", reasoning), ("A", answer)] {
        let words: Vec<&str> = text.split_whitespace().collect();
        for w in &words {
            add_token(&mut v, index_seed, sign_seed, &format!("{prefix}:{w}"));
        }
        for pair in words.windows(2) {
            add_token(
                &mut v,
                index_seed,
                sign_seed,
                &format!("{prefix}:{} {}", pair[0], pair[1]),
            );
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Runs extraction, labeling, and featurization over one record in place.
pub fn annotate_record(record: &mut QuestionRecord, dim: usize, seed: u64) -> Result<()> {
    if record.option_set.is_empty() {
        return Err(Error::Validation(format!(
            "question {} has an empty option set",
            record.question_id
        )));
    }
    for cand in &mut record.candidates {
        let extracted = extract_answer(&cand.generation_text, &record.option_set);
        cand.label = Some(label_candidate(extracted.as_deref(), &record.gold_answer));
        cand.features = Some(featurize(
            &record.question_text,
            &cand.generation_text,
            extracted.as_deref().unwrap_or(""),
            dim,
            seed,
        ));
        cand.extracted_answer = extracted;
    }
    Ok(())
}

/// Annotates every record in place. See [`annotate_record`].
pub fn annotate_records(records: &mut [QuestionRecord], dim: usize, seed: u64) -> Result<()> {
    for record in records {
        annotate_record(record, dim, seed)?;
    }
    Ok(())
}

/// Builds the discrimination training set: one labeled feature vector per
/// candidate, preserving question order then candidate index.
pub fn build_discrimination_set(
    records: &[QuestionRecord],
    dim: usize,
    seed: u64,
) -> Result<DiscriminationSet> {
    let mut examples = Vec::new();
    for record in records {
        if record.option_set.is_empty() {
            return Err(Error::Validation(format!(
                "question {} has an empty option set",
                record.question_id
            )));
        }
        for cand in &record.candidates {
            let extracted = extract_answer(&cand.generation_text, &record.option_set);
            let label = label_candidate(extracted.as_deref(), &record.gold_answer);
            let features = featurize(
                &record.question_text,
                &cand.generation_text,
                extracted.as_deref().unwrap_or(""),
                dim,
                seed,
            );
            examples.push(LabeledExample {
                features,
                label,
                question_id: record.question_id.clone(),
                candidate_index: cand.index,
            });
        }
    }
    Ok(DiscriminationSet {
        examples,
        feature_dim: dim,
    })
}

#[derive(Serialize, Deserialize)]
struct WireCandidate {
    text: String,
}

#[derive(Serialize, Deserialize)]
struct WireQuestion {
    question_id: String,
    question: String,
    options: Vec<String>,
    gold_answer: String,
    candidates: Vec<WireCandidate>,
}

/// Loads a JSONL candidate corpus: one question object per line, candidate
/// order in the file defining the candidate index.
pub fn load_jsonl(path: &Path) -> Result<Vec<QuestionRecord>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireQuestion = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            line: line_no,
            message: e.to_string(),
        })?;
        if wire.options.is_empty() {
            return Err(Error::Jsonl {
                line: line_no,
                message: format!("question {} has an empty options list", wire.question_id),
            });
        }
        if !wire.options.contains(&wire.gold_answer) {
            return Err(Error::Jsonl {
                line: line_no,
                message: format!(
                    "gold_answer {:?} of question {} is not in its options",
                    wire.gold_answer, wire.question_id
                ),
            });
        }
        if wire.candidates.is_empty() {
            return Err(Error::Jsonl {
                line: line_no,
                message: format!("question {} has no candidates", wire.question_id),
            });
        }
        records.push(QuestionRecord {
            question_id: wire.question_id,
            question_text: wire.question,
            option_set: wire.options,
            gold_answer: wire.gold_answer,
            candidates: wire
                .candidates
                .into_iter()
                .enumerate()
                .map(|(k, c)| CandidateRecord::new(k, c.text))
                .collect(),
        });
    }
    Ok(records)
}

/// Writes records in the same JSONL schema `load_jsonl` reads.
pub fn write_jsonl(records: &[QuestionRecord], path: &Path) -> Result<()> {
    let mut file = File::create(path)?;
    for record in records {
        let wire = WireQuestion {
            question_id: record.question_id.clone(),
            question: record.question_text.clone(),
            options: record.option_set.clone(),
            gold_answer: record.gold_answer.clone(),
            candidates: record
                .candidates
                .iter()
                .map(|c| WireCandidate {
                    text: c.generation_text.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut file, &wire).map_err(|e| Error::Validation(e.to_string()))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abcd() -> Vec<String> {
        vec!["A".into(), "B".into(), "C".into(), "D".into()]
    }

    fn question(id: &str, gold: &str, answers: &[&str]) -> QuestionRecord {
        QuestionRecord {
            question_id: id.to_string(),
            question_text: format!("question {id}"),
            option_set: abcd(),
            gold_answer: gold.to_string(),
            candidates: answers
                .iter()
                .enumerate()
                .map(|(k, a)| CandidateRecord::new(k, format!("some reasoning\n#### {a}")))
                .collect(),
        }
    }

    #[test]
    fn extract_answer_marker_with_trailing_text() {
        let text = "reasoning first\n#### D. Facultative Anaerobic Gram+ve cocci";
        assert_eq!(extract_answer(text, &abcd()), Some("D".to_string()));

        let text = "#### B. Tenderness at the insertion of the Achilles tendon";
        assert_eq!(extract_answer(text, &abcd()), Some("B".to_string()));
    }

    #[test]
    fn extract_answer_abstains_without_any_option() {
        assert_eq!(extract_answer("no marker here at all", &abcd()), None);
    }

    #[test]
    fn extract_answer_uses_last_marker() {
        let text = "#### A. early guess\nmore thought\n#### C. final call";
        assert_eq!(extract_answer(text, &abcd()), Some("C".to_string()));
    }

    #[test]
    fn extract_answer_ignores_options_after_the_marked_one() {
        // Discussion of rejected options after the marker must not override
        // the first matched token.
        let text = "#### C. Pain on fingers\n\nThe other options: A. mass B. tendon D. rash";
        assert_eq!(extract_answer(text, &abcd()), Some("C".to_string()));
    }

    #[test]
    fn extract_answer_falls_back_to_last_standalone_option() {
        let text = "I considered A but the answer is B.";
        assert_eq!(extract_answer(text, &abcd()), Some("B".to_string()));
    }

    #[test]
    fn extract_answer_is_case_insensitive() {
        let options = vec!["yes".to_string(), "no".to_string(), "maybe".to_string()];
        assert_eq!(
            extract_answer("#### Yes, the study supports it", &options),
            Some("yes".to_string())
        );
    }

    #[test]
    fn label_candidate_is_the_indicator() {
        assert_eq!(label_candidate(Some("B"), "B"), 1);
        assert_eq!(label_candidate(Some("A"), "B"), 0);
        assert_eq!(label_candidate(None, "B"), 0);
    }

    #[test]
    fn featurize_empty_inputs_give_zero_vector() {
        let v = featurize("", "", "", 64, 7);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn featurize_is_deterministic() {
        let a = featurize("q text", "reasoning", "B", 128, 99);
        let b = featurize("q text", "reasoning", "B", 128, 99);
        assert_eq!(a, b);
        let c = featurize("q text", "reasoning", "B", 128, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn featurize_output_is_unit_norm() {
        let v = featurize("q a b", "", "", 64, 3);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn featurize_fields_are_namespaced() {
        let in_question = featurize("enthesitis", "", "", 64, 5);
        let in_reasoning = featurize("", "enthesitis", "", 64, 5);
        assert_ne!(in_question, in_reasoning);
    }

    #[test]
    fn build_set_counts_questions_times_candidates() {
        let records = vec![
            question("q0", "B", &["A", "B", "C", "D", "A", "B", "C", "D"]),
            question("q1", "A", &["A", "B", "C", "D", "A", "B", "C", "D"]),
        ];
        let set = build_discrimination_set(&records, 64, 1).unwrap();
        assert_eq!(set.len(), 16);
    }

    #[test]
    fn build_set_label_counts_match_independent_pass() {
        let answers = ["B", "A", "B", "C", "B", "D", "A", "C"];
        let records = vec![question("q0", "B", &answers)];
        let set = build_discrimination_set(&records, 64, 1).unwrap();
        let expected = answers.iter().filter(|a| **a == "B").count();
        assert_eq!(set.positives(), expected);
        assert_eq!(set.positives(), 3);
    }

    #[test]
    fn single_matching_candidate_yields_one_positive() {
        // Eight candidates answering C,A,B,A,A,A,A,C against gold B.
        let answers = ["C", "A", "B", "A", "A", "A", "A", "C"];
        let records = vec![question("q9", "B", &answers)];
        let set = build_discrimination_set(&records, 64, 1).unwrap();
        assert_eq!(set.positives(), 1);
        assert_eq!(set.examples[2].label, 1);
    }

    #[test]
    fn build_set_rejects_empty_option_set() {
        let mut rec = question("q7", "B", &["B"]);
        rec.option_set.clear();
        let err = build_discrimination_set(&[rec], 64, 1).unwrap_err();
        assert!(err.to_string().contains("q7"));
    }

    #[test]
    fn annotate_sets_labels_consistent_with_extraction() {
        let mut rec = question("q0", "B", &["B", "A"]);
        annotate_record(&mut rec, 64, 1).unwrap();
        assert_eq!(rec.candidates[0].extracted_answer.as_deref(), Some("B"));
        assert_eq!(rec.candidates[0].label, Some(1));
        assert_eq!(rec.candidates[1].label, Some(0));
        assert_eq!(rec.candidates[0].features.as_ref().unwrap().len(), 64);
    }

    #[test]
    fn load_jsonl_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(load_jsonl(&empty).unwrap().is_empty());

        let good = dir.path().join("good.jsonl");
        let rec = question("q0", "B", &["A", "B", "C", "D", "B", "B", "A", "C"]);
        write_jsonl(std::slice::from_ref(&rec), &good).unwrap();
        let loaded = load_jsonl(&good).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].candidates.len(), 8);
        assert_eq!(loaded[0].candidates[4].index, 4);

        let missing = dir.path().join("missing.jsonl");
        std::fs::write(
            &missing,
            "{\"question_id\":\"q\",\"question\":\"t\",\"options\":[\"A\"],\"candidates\":[{\"text\":\"x\"}]}\n",
        )
        .unwrap();
        let err = load_jsonl(&missing).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("gold_answer"), "{msg}");

        let malformed = dir.path().join("malformed.jsonl");
        std::fs::write(&malformed, "{not json\n").unwrap();
        let err = load_jsonl(&malformed).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
