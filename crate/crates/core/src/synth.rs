//! Synthetic cross-silo federation with a planted correctness signal.
//!
//! Candidates are Bernoulli-correct with probability `actor_accuracy`, and
//! their feature vectors sit at `±separation/2` along a per-client signal
//! subspace plus unit Gaussian noise. Because the generating distribution is
//! known, the oracle selection ceilings (p@1, p@k) are known too, which is
//! what the end-to-end tests lean on.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{
    CandidateRecord, DiscriminationSet, LabeledExample, QuestionRecord,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::derive_seed;

/// Parameters of the synthetic federation.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub num_clients: usize,
    /// Training questions per client.
    pub questions_per_client: usize,
    /// Held-out questions per client.
    pub test_questions_per_client: usize,
    /// Candidates per question (K).
    pub candidates: usize,
    pub feature_dim: usize,
    pub options_per_question: usize,
    /// Probability that a candidate answers correctly.
    pub actor_accuracy: f64,
    /// Optional per-client accuracy, overriding `actor_accuracy`.
    pub accuracy_overrides: Option<Vec<f64>>,
    /// Distance between class means, in units of the per-coordinate noise.
    pub signal_separation: f64,
    pub signal_dim: usize,
    /// Fraction of signal energy rotated into client-specific directions.
    pub heterogeneity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_clients: 5,
            questions_per_client: 400,
            test_questions_per_client: 200,
            candidates: 8,
            feature_dim: 256,
            options_per_question: 4,
            actor_accuracy: 0.3,
            accuracy_overrides: None,
            signal_separation: 3.0,
            signal_dim: 8,
            heterogeneity: 0.3,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.num_clients < 1 {
            return cfg("num_clients must be >= 1".into());
        }
        if self.questions_per_client < 1 || self.test_questions_per_client < 1 {
            return cfg("train and test question counts must be >= 1".into());
        }
        if self.candidates < 1 {
            return cfg("candidates must be >= 1".into());
        }
        if self.options_per_question < 2 || self.options_per_question > 26 {
            return cfg("options_per_question must be in 2..=26".into());
        }
        if !(0.0..=1.0).contains(&self.actor_accuracy) {
            return cfg(format!(
                "actor_accuracy must be in [0, 1], got {}",
                self.actor_accuracy
            ));
        }
        if let Some(overrides) = &self.accuracy_overrides {
            if overrides.len() != self.num_clients {
                return cfg(format!(
                    "accuracy_overrides length {} must equal num_clients {}",
                    overrides.len(),
                    self.num_clients
                ));
            }
            if overrides.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return cfg("accuracy_overrides entries must be in [0, 1]".into());
            }
        }
        if self.signal_separation < 0.0 {
            return cfg("signal_separation must be non-negative".into());
        }
        if self.signal_dim < 1 {
            return cfg("signal_dim must be >= 1".into());
        }
        if self.signal_dim > self.feature_dim {
            return cfg(format!(
                "signal_dim {} exceeds feature_dim {}",
                self.signal_dim, self.feature_dim
            ));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return cfg(format!(
                "heterogeneity must be in [0, 1], got {}",
                self.heterogeneity
            ));
        }
        if self.heterogeneity > 0.0 && 2 * self.signal_dim > self.feature_dim {
            return cfg(format!(
                "client-specific rotations need 2*signal_dim <= feature_dim (got {} vs {})",
                2 * self.signal_dim,
                self.feature_dim
            ));
        }
        Ok(())
    }

    /// Accuracy of client `i`.
    pub fn client_accuracy(&self, i: usize) -> f64 {
        self.accuracy_overrides
            .as_ref()
            .map(|o| o[i])
            .unwrap_or(self.actor_accuracy)
    }
}

/// One generated client silo.
#[derive(Clone, Debug)]
pub struct SynthClient {
    pub client_id: String,
    /// Planted-feature training set.
    pub train: DiscriminationSet,
    /// The same training questions as records (JSONL emission, round trips).
    pub train_questions: Vec<QuestionRecord>,
    pub test: Vec<QuestionRecord>,
    /// Orthonormal signal basis, `feature_dim x signal_dim`.
    pub signal_basis: Matrix,
}

/// Selection ceilings computed from planted labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleStats {
    pub p_at_1: f64,
    pub p_at_k: f64,
    pub delta: f64,
}

/// The full generated federation with per-client oracle ceilings on the
/// held-out questions.
#[derive(Clone, Debug)]
pub struct SynthFederation {
    pub clients: Vec<SynthClient>,
    pub oracle: Vec<OracleStats>,
}

fn option_letters(count: usize) -> Vec<String> {
    (0..count)
        .map(|i| char::from(b'A' + i as u8).to_string())
        .collect()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `count` orthonormal columns, each also orthogonal to `against`.
fn orthonormal_columns(
    rng: &mut ChaCha8Rng,
    dim: usize,
    count: usize,
    against: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(count);
    while columns.len() < count {
        let mut v = gaussian_vec(rng, dim);
        for basis in against.iter().chain(columns.iter()) {
            let proj = dot(&v, basis);
            for (x, b) in v.iter_mut().zip(basis) {
                *x -= proj * b;
            }
        }
        let len = norm(&v);
        if len < 1e-8 {
            continue; // degenerate draw; resample
        }
        for x in &mut v {
            *x /= len;
        }
        columns.push(v);
    }
    columns
}

fn columns_to_matrix(dim: usize, columns: &[Vec<f64>]) -> Matrix {
    let mut m = Matrix::zeros(dim, columns.len());
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            m.set(i, j, v);
        }
    }
    m
}

/// Builds client `i`'s signal basis: shared energy `1 - eta`, client-specific
/// energy `eta`, columns orthonormal either way.
fn client_basis(cfg: &SynthConfig, shared: &[Vec<f64>], client: usize) -> Vec<Vec<f64>> {
    if cfg.heterogeneity == 0.0 {
        return shared.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x2000 + client as u64));
    let own = orthonormal_columns(&mut rng, cfg.feature_dim, cfg.signal_dim, shared);
    let shared_w = (1.0 - cfg.heterogeneity).sqrt();
    let own_w = cfg.heterogeneity.sqrt();
    shared
        .iter()
        .zip(&own)
        .map(|(u, v)| {
            u.iter()
                .zip(v)
                .map(|(a, b)| shared_w * a + own_w * b)
                .collect()
        })
        .collect()
}

/// Generates the full federation deterministically from the config.
pub fn generate_federation(cfg: &SynthConfig) -> Result<SynthFederation> {
    cfg.validate()?;
    let options = option_letters(cfg.options_per_question);
    let mut shared_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x51));
    let shared = orthonormal_columns(&mut shared_rng, cfg.feature_dim, cfg.signal_dim, &[]);

    let mut clients = Vec::with_capacity(cfg.num_clients);
    for i in 0..cfg.num_clients {
        let basis = client_basis(cfg, &shared, i);
        // Class means sit at +-separation/2 along the subspace's mean direction.
        let inv_sqrt_d = 1.0 / (cfg.signal_dim as f64).sqrt();
        let mean_dir: Vec<f64> = (0..cfg.feature_dim)
            .map(|row| basis.iter().map(|col| col[row]).sum::<f64>() * inv_sqrt_d)
            .collect();

        let rho = cfg.client_accuracy(i);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x100 + i as u64));
        let total = cfg.questions_per_client + cfg.test_questions_per_client;
        let mut questions = Vec::with_capacity(total);
        for q in 0..total {
            let question_id = format!("client{i}_q{q}");
            let gold_idx = rng.gen_range(0..cfg.options_per_question);
            let mut candidates = Vec::with_capacity(cfg.candidates);
            for k in 0..cfg.candidates {
                let correct = rng.gen_bool(rho);
                let answer_idx = if correct {
                    gold_idx
                } else {
                    let wrong = rng.gen_range(0..cfg.options_per_question - 1);
                    if wrong >= gold_idx {
                        wrong + 1
                    } else {
                        wrong
                    }
                };
                let sign = if correct { 1.0 } else { -1.0 };
                let mut features: Vec<f64> = gaussian_vec(&mut rng, cfg.feature_dim);
                for (f, m) in features.iter_mut().zip(&mean_dir) {
                    *f += sign * 0.5 * cfg.signal_separation * m;
                }
                let len = norm(&features);
                if len > 0.0 {
                    for f in &mut features {
                        *f /= len;
                    }
                }
                let answer = options[answer_idx].clone();
                candidates.push(CandidateRecord {
                    index: k,
                    generation_text: format!(
                        "synthetic reasoning for {question_id}, sample {k}.\n#### {answer}"
                    ),
                    extracted_answer: Some(answer),
                    label: Some(u8::from(correct)),
                    features: Some(features),
                });
            }
            questions.push(QuestionRecord {
                question_id,
                question_text: format!("synthetic question {q} of client {i}"),
                option_set: options.clone(),
                gold_answer: options[gold_idx].clone(),
                candidates,
            });
        }

        let test = questions.split_off(cfg.questions_per_client);
        let train_questions = questions;
        let examples = train_questions
            .iter()
            .flat_map(|rec| {
                rec.candidates.iter().map(|c| LabeledExample {
                    features: c.features.clone().expect("planted features"),
                    label: c.label.expect("planted label"),
                    question_id: rec.question_id.clone(),
                    candidate_index: c.index,
                })
            })
            .collect();
        clients.push(SynthClient {
            client_id: format!("client{i}"),
            train: DiscriminationSet {
                examples,
                feature_dim: cfg.feature_dim,
            },
            train_questions,
            test,
            signal_basis: columns_to_matrix(cfg.feature_dim, &basis),
        });
    }

    let oracle = clients
        .iter()
        .map(|c| oracle_from_records(&c.test))
        .collect();
    Ok(SynthFederation { clients, oracle })
}

/// p@1, p@k, and their gap from planted labels.
///
/// p@1 is the fraction of questions whose first candidate is labeled
/// correct; p@k the fraction with any correct candidate.
pub fn oracle_from_records(records: &[QuestionRecord]) -> OracleStats {
    if records.is_empty() {
        return OracleStats {
            p_at_1: 0.0,
            p_at_k: 0.0,
            delta: 0.0,
        };
    }
    let n = records.len() as f64;
    let first = records
        .iter()
        .filter(|r| r.candidates.first().and_then(|c| c.label) == Some(1))
        .count() as f64;
    let any = records
        .iter()
        .filter(|r| r.candidates.iter().any(|c| c.label == Some(1)))
        .count() as f64;
    OracleStats {
        p_at_1: first / n,
        p_at_k: any / n,
        delta: (any - first) / n,
    }
}

/// Per-client oracle ceilings over the held-out questions.
pub fn oracle_stats(fed: &SynthFederation) -> Vec<OracleStats> {
    fed.clients
        .iter()
        .map(|c| oracle_from_records(&c.test))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            num_clients: 2,
            questions_per_client: 30,
            test_questions_per_client: 20,
            candidates: 8,
            feature_dim: 64,
            signal_dim: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_federation(&cfg).unwrap();
        let b = generate_federation(&cfg).unwrap();
        assert_eq!(a.clients.len(), b.clients.len());
        for (ca, cb) in a.clients.iter().zip(&b.clients) {
            assert_eq!(ca.train.examples.len(), cb.train.examples.len());
            for (ea, eb) in ca.train.examples.iter().zip(&cb.train.examples) {
                assert_eq!(ea.features, eb.features);
                assert_eq!(ea.label, eb.label);
            }
            assert_eq!(ca.signal_basis, cb.signal_basis);
        }
        assert_eq!(a.oracle, b.oracle);
    }

    #[test]
    fn extreme_accuracies_saturate_ceilings() {
        let sure = SynthConfig {
            actor_accuracy: 1.0,
            ..small_cfg()
        };
        let fed = generate_federation(&sure).unwrap();
        for stats in oracle_stats(&fed) {
            assert_eq!(stats.p_at_1, 1.0);
            assert_eq!(stats.p_at_k, 1.0);
            assert_eq!(stats.delta, 0.0);
        }
        for client in &fed.clients {
            assert!(client.train.examples.iter().all(|e| e.label == 1));
        }

        let hopeless = SynthConfig {
            actor_accuracy: 0.0,
            ..small_cfg()
        };
        let fed = generate_federation(&hopeless).unwrap();
        for stats in oracle_stats(&fed) {
            assert_eq!(stats.p_at_k, 0.0);
        }
    }

    #[test]
    fn p_at_k_tracks_binomial_ceiling() {
        let cfg = SynthConfig {
            num_clients: 1,
            questions_per_client: 1,
            test_questions_per_client: 200,
            actor_accuracy: 0.3,
            feature_dim: 32,
            signal_dim: 2,
            seed: 7,
            ..SynthConfig::default()
        };
        let fed = generate_federation(&cfg).unwrap();
        let stats = &oracle_stats(&fed)[0];
        let expected = 1.0 - 0.7f64.powi(8);
        let sigma = (expected * (1.0 - expected) / 200.0).sqrt();
        assert!(
            (stats.p_at_k - expected).abs() <= 3.0 * sigma,
            "p@k {} vs ceiling {expected}",
            stats.p_at_k
        );

        let half = SynthConfig {
            actor_accuracy: 0.5,
            seed: 11,
            ..cfg
        };
        let fed = generate_federation(&half).unwrap();
        let stats = &oracle_stats(&fed)[0];
        let expected = 1.0 - 0.5f64.powi(8);
        let sigma = (expected * (1.0 - expected) / 200.0).sqrt();
        assert!((stats.p_at_k - expected).abs() <= 3.0 * sigma);
    }

    #[test]
    fn oracle_hand_counts() {
        let all_good = OracleStats {
            p_at_1: 1.0,
            p_at_k: 1.0,
            delta: 0.0,
        };
        let fed = generate_federation(&SynthConfig {
            actor_accuracy: 1.0,
            ..small_cfg()
        })
        .unwrap();
        assert_eq!(oracle_stats(&fed)[0], all_good);

        // Labels [0,1] and [0,0] with K=2: p@1 = 0, p@k = 0.5.
        let mut records = generate_federation(&SynthConfig {
            num_clients: 1,
            questions_per_client: 1,
            test_questions_per_client: 2,
            candidates: 2,
            feature_dim: 32,
            signal_dim: 2,
            ..SynthConfig::default()
        })
        .unwrap()
        .clients[0]
            .test
            .clone();
        records[0].candidates[0].label = Some(0);
        records[0].candidates[1].label = Some(1);
        records[1].candidates[0].label = Some(0);
        records[1].candidates[1].label = Some(0);
        let stats = oracle_from_records(&records);
        assert_eq!(stats.p_at_1, 0.0);
        assert_eq!(stats.p_at_k, 0.5);
        assert_eq!(stats.delta, 0.5);
    }

    #[test]
    fn p_at_k_never_below_p_at_1() {
        for seed in 0..5 {
            let fed = generate_federation(&SynthConfig {
                seed,
                ..small_cfg()
            })
            .unwrap();
            for stats in oracle_stats(&fed) {
                assert!(stats.p_at_k >= stats.p_at_1);
            }
        }
    }

    #[test]
    fn zero_heterogeneity_shares_one_basis() {
        let cfg = SynthConfig {
            heterogeneity: 0.0,
            ..small_cfg()
        };
        let fed = generate_federation(&cfg).unwrap();
        assert_eq!(fed.clients[0].signal_basis, fed.clients[1].signal_basis);
    }

    #[test]
    fn full_heterogeneity_rotates_subspaces_apart() {
        let cfg = SynthConfig {
            heterogeneity: 1.0,
            ..small_cfg()
        };
        let fed = generate_federation(&cfg).unwrap();
        let d = cfg.signal_dim;
        let (wa, wb) = (&fed.clients[0].signal_basis, &fed.clients[1].signal_basis);
        // Squared Frobenius norm of the cross-Gram equals sum of cos^2 of the
        // principal angles; strictly below d means every angle is not forced
        // to zero, i.e. the subspaces genuinely differ.
        let mut gram_sq = 0.0;
        for a in 0..d {
            for b in 0..d {
                let mut acc = 0.0;
                for row in 0..cfg.feature_dim {
                    acc += wa.get(row, a) * wb.get(row, b);
                }
                gram_sq += acc * acc;
            }
        }
        assert!(
            gram_sq < d as f64 - 0.5,
            "cross-gram squared norm {gram_sq} too close to d = {d}"
        );
    }

    #[test]
    fn signal_basis_is_orthonormal() {
        let cfg = small_cfg();
        let fed = generate_federation(&cfg).unwrap();
        let w = &fed.clients[0].signal_basis;
        for a in 0..cfg.signal_dim {
            for b in 0..cfg.signal_dim {
                let mut acc = 0.0;
                for row in 0..cfg.feature_dim {
                    acc += w.get(row, a) * w.get(row, b);
                }
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((acc - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_labels() {
        let cfg = small_cfg();
        let fed = generate_federation(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        corpus::write_jsonl(&fed.clients[0].train_questions, &path).unwrap();
        let loaded = corpus::load_jsonl(&path).unwrap();
        let set = corpus::build_discrimination_set(&loaded, 64, 1).unwrap();
        let planted: Vec<u8> = fed.clients[0].train.examples.iter().map(|e| e.label).collect();
        let recovered: Vec<u8> = set.examples.iter().map(|e| e.label).collect();
        assert_eq!(planted, recovered);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.signal_dim = 80;
        assert!(matches!(generate_federation(&cfg), Err(Error::Config(_))));

        let mut cfg = small_cfg();
        cfg.actor_accuracy = 1.5;
        assert!(generate_federation(&cfg).is_err());

        let mut cfg = small_cfg();
        cfg.accuracy_overrides = Some(vec![0.5]);
        assert!(generate_federation(&cfg).is_err());
    }
}
