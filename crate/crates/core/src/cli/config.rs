//! Run configuration: TOML parsing, defaults, and validation.
//!
//! An empty config file is a complete run: five synthetic clients with ranks
//! 4/32/32/16/4, eight candidates per question, three global rounds, one
//! local epoch, batch 16, a 256-wide feature space, and a 64-wide hidden
//! layer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminator::{ClassWeight, TrainConfig};
use crate::error::{Error, Result};
use crate::federation::{AggregationMode, FederationConfig};
use crate::rng::derive_seed;
use crate::synth::SynthConfig;

/// Where candidates come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Synthetic,
    Ingest,
}

/// Server-side aggregation choice, as spelled in config files and flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Stacking,
    Naive,
}

impl From<Aggregation> for AggregationMode {
    fn from(a: Aggregation) -> AggregationMode {
        match a {
            Aggregation::Stacking => AggregationMode::Stacking,
            Aggregation::Naive => AggregationMode::Naive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub positive_class_weight: ClassWeight,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 1,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            positive_class_weight: ClassWeight::Fixed(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub num_clients: usize,
    pub questions_per_client: usize,
    pub test_questions_per_client: usize,
    pub options_per_question: usize,
    pub actor_accuracy: f64,
    pub accuracy_overrides: Option<Vec<f64>>,
    pub signal_separation: f64,
    pub signal_dim: usize,
    pub heterogeneity: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            num_clients: 5,
            questions_per_client: 400,
            test_questions_per_client: 200,
            options_per_question: 4,
            actor_accuracy: 0.3,
            accuracy_overrides: None,
            signal_separation: 3.0,
            signal_dim: 8,
            heterogeneity: 0.3,
        }
    }
}

/// One ingest client's corpus files. Without a `test_path`, the tail
/// `test_fraction` of the train file is held out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestClientPaths {
    pub train_path: PathBuf,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub clients: Vec<IngestClientPaths>,
    pub test_fraction: Option<f64>,
}

/// The complete run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Candidates per question (K); applies to the synthetic generator.
    pub candidates: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Per-client LoRA ranks; the length fixes the client count.
    pub ranks: Vec<usize>,
    /// LoRA alpha; omitted means alpha = rank (scaling 1).
    pub alpha: Option<f64>,
    /// Global rounds (T).
    pub rounds: usize,
    pub aggregation: Aggregation,
    pub weighted_stacking: bool,
    pub broadcast_classifier: bool,
    pub out_dir: Option<PathBuf>,
    pub train: TrainSection,
    pub synth: SynthSection,
    pub ingest: IngestSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Synthetic,
            seed: 42,
            candidates: 8,
            feature_dim: 256,
            hidden_dim: 64,
            ranks: vec![4, 32, 32, 16, 4],
            alpha: None,
            rounds: 3,
            aggregation: Aggregation::Stacking,
            weighted_stacking: false,
            broadcast_classifier: true,
            out_dir: None,
            train: TrainSection::default(),
            synth: SynthSection::default(),
            ingest: IngestSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bound = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        if self.rounds < 1 {
            return bound("rounds", "must be >= 1");
        }
        if self.candidates < 1 {
            return bound("candidates", "must be >= 1");
        }
        if self.feature_dim < 8 {
            return bound("feature_dim", "must be >= 8");
        }
        if self.hidden_dim < 1 {
            return bound("hidden_dim", "must be >= 1");
        }
        if self.ranks.is_empty() {
            return bound("ranks", "must list at least one client rank");
        }
        let max_rank = self.feature_dim.min(self.hidden_dim);
        for &r in &self.ranks {
            if r < 1 || r > max_rank {
                return bound("ranks", &format!("rank {r} outside 1..={max_rank}"));
            }
        }
        if let Some(alpha) = self.alpha {
            if alpha <= 0.0 {
                return bound("alpha", "must be > 0");
            }
        }
        if self.train.epochs < 1 {
            return bound("train.epochs", "must be >= 1");
        }
        if self.train.batch_size < 1 {
            return bound("train.batch_size", "must be >= 1");
        }
        if self.train.learning_rate <= 0.0 {
            return bound("train.learning_rate", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            return bound("train.momentum", "must be in [0, 1)");
        }
        if let ClassWeight::Fixed(w) = self.train.positive_class_weight {
            if w < 1.0 {
                return bound("train.positive_class_weight", "must be >= 1 or \"auto\"");
            }
        }
        match self.mode {
            Mode::Synthetic => {
                if self.ranks.len() != self.synth.num_clients {
                    return Err(Error::Config(format!(
                        "ranks: length {} does not match synth.num_clients {}",
                        self.ranks.len(),
                        self.synth.num_clients
                    )));
                }
                self.synth_config().validate()?;
            }
            Mode::Ingest => {
                if self.ingest.clients.is_empty() {
                    return bound("ingest.clients", "must list at least one client");
                }
                if self.ranks.len() != self.ingest.clients.len() {
                    return Err(Error::Config(format!(
                        "ranks: length {} does not match ingest client count {}",
                        self.ranks.len(),
                        self.ingest.clients.len()
                    )));
                }
                if let Some(f) = self.ingest.test_fraction {
                    if !(0.0 < f && f < 1.0) {
                        return bound("ingest.test_fraction", "must be in (0, 1)");
                    }
                }
                for client in &self.ingest.clients {
                    if !client.train_path.exists() {
                        return Err(Error::Config(format!(
                            "ingest.clients: train_path {} does not exist",
                            client.train_path.display()
                        )));
                    }
                    if let Some(test) = &client.test_path {
                        if !test.exists() {
                            return Err(Error::Config(format!(
                                "ingest.clients: test_path {} does not exist",
                                test.display()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The synthetic generator settings implied by this run.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_clients: self.synth.num_clients,
            questions_per_client: self.synth.questions_per_client,
            test_questions_per_client: self.synth.test_questions_per_client,
            candidates: self.candidates,
            feature_dim: self.feature_dim,
            options_per_question: self.synth.options_per_question,
            actor_accuracy: self.synth.actor_accuracy,
            accuracy_overrides: self.synth.accuracy_overrides.clone(),
            signal_separation: self.synth.signal_separation,
            signal_dim: self.synth.signal_dim,
            heterogeneity: self.synth.heterogeneity,
            seed: derive_seed(self.seed, 0x5717),
        }
    }

    /// The round-loop settings implied by this run.
    pub fn federation_config(&self) -> FederationConfig {
        FederationConfig {
            train: TrainConfig {
                epochs: self.train.epochs,
                batch_size: self.train.batch_size,
                learning_rate: self.train.learning_rate,
                momentum: self.train.momentum,
                positive_class_weight: self.train.positive_class_weight,
                shuffle_seed: 0, // replaced per client per round
            },
            alpha: self.alpha,
            weighted_stacking: self.weighted_stacking,
            aggregation: self.aggregation.into(),
            broadcast_classifier: self.broadcast_classifier,
        }
    }

    /// Seed of the shared simulated-pretrained base model.
    pub fn base_model_seed(&self) -> u64 {
        derive_seed(self.seed, 0xBA5E)
    }

    /// Seed for feature hashing; recorded in checkpoints so `evaluate` can
    /// re-featurize new corpora compatibly.
    pub fn feature_seed(&self) -> u64 {
        derive_seed(self.seed, 0xFEA7)
    }

    /// Per-client base seed; all per-round randomness derives from it.
    pub fn client_seed(&self, client: usize) -> u64 {
        derive_seed(self.seed, 0xC11E_0000 + client as u64)
    }
}

/// Parses and validates config text. Unknown keys and bound violations are
/// reported by name.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// File-path front end of [`parse_config_str`].
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Hash of everything that affects the trajectory of a run. The output
/// directory and the round count are excluded: rounds 1..t are identical for
/// any total length t' >= t, which is what makes resuming to a longer run
/// sound. Stored in checkpoints to guard resumes.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut canonical = cfg.clone();
    canonical.out_dir = None;
    canonical.rounds = 0;
    let json = serde_json::to_string(&canonical).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
