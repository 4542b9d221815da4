//! Inference-time discrimination: score all K candidates with the global
//! discriminator, pick the argmax, and measure accuracy against the p@1/p@k
//! ceilings, alongside the training-free majority-vote baseline.

use std::collections::HashMap;

use serde::Serialize;

use crate::corpus::QuestionRecord;
use crate::discriminator::{forward, DiscriminatorModel};
use crate::error::{Error, Result};

/// The outcome of scoring and selecting over one question's candidates.
#[derive(Clone, Debug)]
pub struct SelectionResult {
    pub question_id: String,
    pub scores: Vec<f64>,
    /// Smallest index attaining the maximum score.
    pub chosen_index: usize,
    /// `None` when the chosen candidate abstained.
    pub chosen_answer: Option<String>,
    pub correct: bool,
}

/// Aggregate metrics over a question set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub p_at_1: f64,
    pub p_at_k: f64,
    pub delta: f64,
    pub majority_vote_accuracy: f64,
    pub n_questions: usize,
}

/// Scores every candidate of a question, order-preserving. Candidates must
/// already carry feature vectors of the model's width.
pub fn score_candidates(model: &DiscriminatorModel, question: &QuestionRecord) -> Result<Vec<f64>> {
    question
        .candidates
        .iter()
        .map(|cand| {
            let features = cand.features.as_ref().ok_or_else(|| {
                Error::Validation(format!(
                    "candidate {} of question {} has no features",
                    cand.index, question.question_id
                ))
            })?;
            Ok(forward(model, features)?.score)
        })
        .collect()
}

/// Argmax selection with lowest-index tie-break. A chosen candidate that
/// abstained counts as incorrect.
pub fn select_answer(scores: &[f64], question: &QuestionRecord) -> Result<SelectionResult> {
    if scores.is_empty() {
        return Err(Error::EmptyInput { op: "select_answer" });
    }
    if scores.len() != question.candidates.len() {
        return Err(Error::Validation(format!(
            "{} scores for {} candidates on question {}",
            scores.len(),
            question.candidates.len(),
            question.question_id
        )));
    }
    let mut chosen_index = 0;
    for (k, &score) in scores.iter().enumerate() {
        if score > scores[chosen_index] {
            chosen_index = k;
        }
    }
    let chosen_answer = question.candidates[chosen_index].extracted_answer.clone();
    let correct = chosen_answer.as_deref() == Some(question.gold_answer.as_str());
    Ok(SelectionResult {
        question_id: question.question_id.clone(),
        scores: scores.to_vec(),
        chosen_index,
        chosen_answer,
        correct,
    })
}

/// Self-consistency baseline: the most frequent extracted answer among
/// non-abstaining candidates. Ties break toward the answer whose first
/// occurrence comes earliest; all-abstain questions abstain.
pub fn majority_vote(question: &QuestionRecord) -> Option<String> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (k, cand) in question.candidates.iter().enumerate() {
        if let Some(answer) = cand.extracted_answer.as_deref() {
            let entry = counts.entry(answer).or_insert((0, k));
            entry.0 += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|(_, (count_a, first_a)), (_, (count_b, first_b))| {
            count_a.cmp(count_b).then(first_b.cmp(first_a))
        })
        .map(|(answer, _)| answer.to_string())
}

/// Computes accuracy, p@1, p@k, their gap, and the majority-vote baseline
/// over one result per record. Records must be labeled.
pub fn evaluate(results: &[SelectionResult], records: &[QuestionRecord]) -> Result<MetricsReport> {
    if results.len() != records.len() {
        return Err(Error::Validation(format!(
            "{} selection results for {} records",
            results.len(),
            records.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate" });
    }
    let n = records.len() as f64;
    let mut correct = 0usize;
    let mut first_hit = 0usize;
    let mut any_hit = 0usize;
    let mut vote_hit = 0usize;
    for (result, record) in results.iter().zip(records) {
        if result.question_id != record.question_id {
            return Err(Error::Validation(format!(
                "selection result for {} paired with record {}",
                result.question_id, record.question_id
            )));
        }
        let labels: Vec<u8> = record
            .candidates
            .iter()
            .map(|c| {
                c.label.ok_or_else(|| {
                    Error::Validation(format!(
                        "candidate {} of question {} is unlabeled",
                        c.index, record.question_id
                    ))
                })
            })
            .collect::<Result<_>>()?;
        correct += usize::from(result.correct);
        first_hit += usize::from(labels.first() == Some(&1));
        any_hit += usize::from(labels.contains(&1));
        vote_hit +=
            usize::from(majority_vote(record).as_deref() == Some(record.gold_answer.as_str()));
    }
    let p_at_1 = first_hit as f64 / n;
    let p_at_k = any_hit as f64 / n;
    Ok(MetricsReport {
        accuracy: correct as f64 / n,
        p_at_1,
        p_at_k,
        delta: p_at_k - p_at_1,
        majority_vote_accuracy: vote_hit as f64 / n,
        n_questions: records.len(),
    })
}

/// Scores, selects, and evaluates a record set in one pass.
pub fn evaluate_records(
    model: &DiscriminatorModel,
    records: &[QuestionRecord],
) -> Result<MetricsReport> {
    let results = records
        .iter()
        .map(|record| select_answer(&score_candidates(model, record)?, record))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&results, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CandidateRecord;
    use crate::discriminator::{init_lora, init_model};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record_with_answers(gold: &str, answers: &[Option<&str>]) -> QuestionRecord {
        QuestionRecord {
            question_id: "q".into(),
            question_text: "question".into(),
            option_set: vec!["A".into(), "B".into(), "C".into(), "D".into()],
            gold_answer: gold.to_string(),
            candidates: answers
                .iter()
                .enumerate()
                .map(|(k, a)| CandidateRecord {
                    index: k,
                    generation_text: String::new(),
                    extracted_answer: a.map(str::to_string),
                    label: Some(u8::from(*a == Some(gold))),
                    features: Some(vec![0.1; 8]),
                })
                .collect(),
        }
    }

    #[test]
    fn score_candidates_arity_and_neutral_model() {
        let mut model = init_model(8, 4, 1);
        model.w_cls = vec![0.0; 4];
        model.b_cls = 0.0;
        model.adapter = Some(init_lora(2, 2.0, 8, 4, 2).unwrap());
        let record = record_with_answers("B", &[Some("A"); 8]);
        let scores = score_candidates(&model, &record).unwrap();
        assert_eq!(scores.len(), 8);
        assert!(scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn score_candidates_duplicate_features_identical_scores() {
        let model = init_model(8, 4, 3);
        let record = record_with_answers("B", &[Some("A"), Some("B"), Some("A")]);
        let scores = score_candidates(&model, &record).unwrap();
        assert_eq!(scores[0], scores[1]);
        assert_eq!(scores[0], scores[2]);
    }

    #[test]
    fn score_candidates_requires_features() {
        let model = init_model(8, 4, 3);
        let mut record = record_with_answers("B", &[Some("A")]);
        record.candidates[0].features = None;
        let err = score_candidates(&model, &record).unwrap_err();
        assert!(err.to_string().contains("no features"));
    }

    #[test]
    fn select_answer_tie_breaks_to_lowest_index() {
        let record = record_with_answers("B", &[Some("A"), Some("B"), Some("C")]);
        let result = select_answer(&[0.2, 0.9, 0.9], &record).unwrap();
        assert_eq!(result.chosen_index, 1);
        assert_eq!(result.chosen_answer.as_deref(), Some("B"));
        assert!(result.correct);
    }

    #[test]
    fn select_answer_single_candidate() {
        let record = record_with_answers("B", &[Some("A")]);
        let result = select_answer(&[0.4], &record).unwrap();
        assert_eq!(result.chosen_index, 0);
        assert!(!result.correct);
    }

    #[test]
    fn select_answer_rejects_empty_scores() {
        let record = record_with_answers("B", &[Some("A")]);
        assert!(matches!(
            select_answer(&[], &record),
            Err(Error::EmptyInput { .. })
        ));
    }

    #[test]
    fn select_answer_reference_scores_pick_the_correct_path() {
        // Eight scored candidates answering C,A,B,A,A,A,A,C against gold B;
        // the third score is the highest and its candidate is the correct one.
        let record = record_with_answers(
            "B",
            &[
                Some("C"),
                Some("A"),
                Some("B"),
                Some("A"),
                Some("A"),
                Some("A"),
                Some("A"),
                Some("C"),
            ],
        );
        let scores = [
            0.77344, 0.717285, 0.833984, 0.621094, 0.785645, 0.781250, 0.777344, 0.717285,
        ];
        let result = select_answer(&scores, &record).unwrap();
        assert_eq!(result.chosen_index, 2);
        assert_eq!(result.chosen_answer.as_deref(), Some("B"));
        assert!(result.correct);
    }

    #[test]
    fn select_abstaining_candidate_counts_incorrect() {
        let record = record_with_answers("B", &[None, Some("B")]);
        let result = select_answer(&[0.9, 0.1], &record).unwrap();
        assert_eq!(result.chosen_index, 0);
        assert_eq!(result.chosen_answer, None);
        assert!(!result.correct);
    }

    #[test]
    fn majority_vote_cases() {
        let record = record_with_answers("B", &[Some("B"), Some("B"), Some("A")]);
        assert_eq!(majority_vote(&record).as_deref(), Some("B"));

        let tie = record_with_answers("B", &[Some("A"), Some("B")]);
        assert_eq!(majority_vote(&tie).as_deref(), Some("A"));

        let all_abstain = record_with_answers("B", &[None, None]);
        assert_eq!(majority_vote(&all_abstain), None);

        let ignores_abstain = record_with_answers("B", &[None, Some("C"), None, Some("C")]);
        assert_eq!(majority_vote(&ignores_abstain).as_deref(), Some("C"));
    }

    #[test]
    fn majority_vote_matches_brute_force_count() {
        let options = ["A", "B", "C", "D"];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let answers: Vec<Option<&str>> = (0..8)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        None
                    } else {
                        Some(options[rng.gen_range(0..4)])
                    }
                })
                .collect();
            let record = record_with_answers("B", &answers);
            let got = majority_vote(&record);

            // Exhaustive oracle: count every option, then walk candidates in
            // order to find the earliest answer achieving the max count.
            let max_count = options
                .iter()
                .map(|o| answers.iter().filter(|a| **a == Some(*o)).count())
                .max()
                .unwrap();
            let want = if max_count == 0 {
                None
            } else {
                answers
                    .iter()
                    .flatten()
                    .find(|a| answers.iter().filter(|b| **b == Some(**a)).count() == max_count)
                    .map(|a| a.to_string())
            };
            assert_eq!(got, want);
        }
    }

    #[test]
    fn evaluate_hand_counts() {
        // Perfect selection attains the oracle ceiling.
        let records = vec![
            record_with_answers("B", &[Some("A"), Some("B")]),
            record_with_answers("C", &[Some("C"), Some("A")]),
        ];
        let results: Vec<SelectionResult> = records
            .iter()
            .map(|r| {
                let scores: Vec<f64> = r
                    .candidates
                    .iter()
                    .map(|c| if c.label == Some(1) { 0.9 } else { 0.1 })
                    .collect();
                select_answer(&scores, r).unwrap()
            })
            .collect();
        let metrics = evaluate(&results, &records).unwrap();
        assert_eq!(metrics.accuracy, 1.0);
        assert_eq!(metrics.accuracy, metrics.p_at_k);
        assert_eq!(metrics.p_at_1, 0.5);
        assert!((metrics.delta - 0.5).abs() < 1e-15);

        // Nothing correct anywhere: every metric collapses to zero.
        let hopeless = vec![record_with_answers("D", &[Some("A"), Some("B")])];
        let results: Vec<SelectionResult> = hopeless
            .iter()
            .map(|r| select_answer(&[0.6, 0.4], r).unwrap())
            .collect();
        let metrics = evaluate(&results, &hopeless).unwrap();
        assert_eq!(metrics.accuracy, 0.0);
        assert_eq!(metrics.p_at_1, 0.0);
        assert_eq!(metrics.p_at_k, 0.0);
        assert_eq!(metrics.majority_vote_accuracy, 0.0);
    }

    #[test]
    fn evaluate_rejects_length_mismatch() {
        let records = vec![record_with_answers("B", &[Some("B")])];
        assert!(matches!(
            evaluate(&[], &records),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn accuracy_never_exceeds_p_at_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let options = ["A", "B", "C", "D"];
        for _ in 0..50 {
            let records: Vec<QuestionRecord> = (0..20)
                .map(|_| {
                    let answers: Vec<Option<&str>> =
                        (0..4).map(|_| Some(options[rng.gen_range(0..4)])).collect();
                    record_with_answers("B", &answers)
                })
                .collect();
            let results: Vec<SelectionResult> = records
                .iter()
                .map(|r| {
                    let scores: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
                    select_answer(&scores, r).unwrap()
                })
                .collect();
            let metrics = evaluate(&results, &records).unwrap();
            assert!(metrics.accuracy <= metrics.p_at_k + 1e-12);
            assert!(metrics.p_at_1 <= metrics.p_at_k + 1e-12);
        }
    }

    proptest! {
        /// Any strictly increasing transform of the scores leaves the chosen
        /// index unchanged; in particular argmax over probabilities equals
        /// argmax over logits.
        #[test]
        fn argmax_invariant_under_monotone_transform(
            scores in proptest::collection::vec(0.001f64..0.999, 1..10)
        ) {
            let record = record_with_answers(
                "B",
                &vec![Some("A"); scores.len()],
            );
            let by_score = select_answer(&scores, &record).unwrap();
            let logits: Vec<f64> = scores.iter().map(|p| (p / (1.0 - p)).ln()).collect();
            let by_logit = select_answer(&logits, &record).unwrap();
            prop_assert_eq!(by_score.chosen_index, by_logit.chosen_index);
        }
    }
}
