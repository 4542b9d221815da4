//! Server-side orchestration: stacking aggregation of heterogeneous-rank
//! adapters, weighted classifier averaging, the naive-averaging baseline with
//! its cross-client noise decomposition, and the global round loop.
//!
//! Stacking forms `delta_W = (B_1 | ... | B_N) (A_1 / ... / A_N)`, which by
//! block multiplication equals the exact sum of per-client updates; averaging
//! A and B separately instead introduces the cross terms quantified by
//! [`noise_decomposition`] and fails outright when ranks differ.

use rayon::prelude::*;

use crate::corpus::{DiscriminationSet, QuestionRecord};
use crate::discriminator::{
    adapter_seed, init_lora, shuffle_seed, train_local, DiscriminatorModel, LoraAdapter,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{axpy, stack_cols, stack_rows, Matrix};
use crate::selection::{self, MetricsReport};

/// One client silo: its data, its rank budget, and its current model.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: String,
    pub data: DiscriminationSet,
    pub test_set: Vec<QuestionRecord>,
    pub rank: usize,
    /// Aggregation weight; defaults to the client's data volume ratio.
    pub weight: f64,
    pub model: DiscriminatorModel,
    pub seed: u64,
}

/// How adapter updates are combined on the server.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregationMode {
    /// Block stacking; exact sum of client updates, any rank mix.
    Stacking,
    /// Parameter-wise averaging of A and B; requires a uniform rank.
    Naive,
}

/// Round-loop settings shared by all clients.
#[derive(Clone, Debug)]
pub struct FederationConfig {
    pub train: TrainConfig,
    /// LoRA alpha; `None` sets alpha to each client's rank (scaling 1).
    pub alpha: Option<f64>,
    /// Fold client weights into the stacked product.
    pub weighted_stacking: bool,
    pub aggregation: AggregationMode,
    /// Ship the aggregated classifier to clients each round, not just the base.
    pub broadcast_classifier: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            train: TrainConfig::default(),
            alpha: None,
            weighted_stacking: false,
            aggregation: AggregationMode::Stacking,
            broadcast_classifier: true,
        }
    }
}

/// Per-client slice of a round report.
#[derive(Clone, Debug)]
pub struct ClientRound {
    pub client_id: String,
    pub final_epoch_loss: f64,
    pub uplink_params: u64,
    pub downlink_params: u64,
    pub metrics: MetricsReport,
}

/// Everything recorded about one global round.
#[derive(Clone, Debug)]
pub struct RoundReport {
    pub round: usize,
    pub delta_w_norm: f64,
    /// Frobenius norm of the cross-client noise term; `None` under stacking,
    /// which has no cross terms by construction.
    pub noise_norm: Option<f64>,
    pub clients: Vec<ClientRound>,
}

/// The server's model state across rounds.
#[derive(Clone, Debug)]
pub struct GlobalState {
    pub round: usize,
    pub w_base: Matrix,
    pub b0: Vec<f64>,
    pub w_cls: Vec<f64>,
    pub b_cls: f64,
    pub history: Vec<RoundReport>,
}

impl GlobalState {
    /// Wraps a freshly initialized (or checkpoint-restored) model.
    pub fn from_model(model: &DiscriminatorModel) -> GlobalState {
        GlobalState {
            round: 0,
            w_base: model.w0.clone(),
            b0: model.b0.clone(),
            w_cls: model.w_cls.clone(),
            b_cls: model.b_cls,
            history: Vec::new(),
        }
    }

    /// The adapter-free global discriminator used for evaluation and
    /// broadcast.
    pub fn model(&self) -> DiscriminatorModel {
        DiscriminatorModel {
            w0: self.w_base.clone(),
            b0: self.b0.clone(),
            adapter: None,
            w_cls: self.w_cls.clone(),
            b_cls: self.b_cls,
        }
    }
}

/// Normalized data-volume weights `u_i = n_i / sum(n_j)`.
pub fn data_volume_weights(sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    sizes.iter().map(|&n| n as f64 / total as f64).collect()
}

fn check_adapter_shapes(adapters: &[LoraAdapter], op: &'static str) -> Result<(usize, usize)> {
    let first = adapters.first().ok_or(Error::EmptyInput { op })?;
    let (m, n) = (first.b.rows(), first.a.cols());
    for ad in adapters {
        if ad.b.rows() != m || ad.a.cols() != n {
            return Err(Error::ShapeMismatch {
                op,
                left_rows: m,
                left_cols: n,
                right_rows: ad.b.rows(),
                right_cols: ad.a.cols(),
            });
        }
    }
    Ok((m, n))
}

fn check_uniform_rank(adapters: &[LoraAdapter]) -> Result<usize> {
    let ranks: Vec<usize> = adapters.iter().map(|a| a.rank).collect();
    if ranks.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::RankMismatch { ranks });
    }
    Ok(ranks[0])
}

fn check_weights(weights: &[f64], expected_len: usize) -> Result<()> {
    if weights.len() != expected_len {
        return Err(Error::Config(format!(
            "got {} weights for {} clients",
            weights.len(),
            expected_len
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "client weights sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Stacking aggregation: `delta_W = (s_1 B_1 | ... | s_N B_N)(A_1 / ... / A_N)`,
/// with client weights folded into the B blocks when `weighted` is set.
/// Ranks may differ freely.
pub fn stack_aggregate(
    adapters: &[LoraAdapter],
    weights: &[f64],
    weighted: bool,
) -> Result<Matrix> {
    check_adapter_shapes(adapters, "stack_aggregate")?;
    if weighted {
        check_weights(weights, adapters.len())?;
    }
    let b_blocks: Vec<Matrix> = adapters
        .iter()
        .zip(weights)
        .map(|(ad, &u)| {
            let scale = ad.scaling() * if weighted { u } else { 1.0 };
            ad.b.scale(scale)
        })
        .collect();
    let a_blocks: Vec<Matrix> = adapters.iter().map(|ad| ad.a.clone()).collect();
    stack_cols(&b_blocks)?.matmul(&stack_rows(&a_blocks)?)
}

/// Weighted average of classifier heads: `W_cls = sum_i u_i W_cls_i`, and the
/// same for the bias.
pub fn average_classifiers(heads: &[(Vec<f64>, f64)], weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    let first = heads.first().ok_or(Error::EmptyInput {
        op: "average_classifiers",
    })?;
    let width = first.0.len();
    for (w, _) in heads {
        if w.len() != width {
            return Err(Error::ShapeMismatch {
                op: "average_classifiers",
                left_rows: width,
                left_cols: 1,
                right_rows: w.len(),
                right_cols: 1,
            });
        }
    }
    check_weights(weights, heads.len())?;
    let mut w_cls = vec![0.0; width];
    let mut b_cls = 0.0;
    for ((head, bias), &u) in heads.iter().zip(weights) {
        for (acc, v) in w_cls.iter_mut().zip(head) {
            *acc += u * v;
        }
        b_cls += u * bias;
    }
    Ok((w_cls, b_cls))
}

/// The naive-averaging baseline: `A = sum u_i A_i`, `B = sum u_i B_i`,
/// `delta_W = s * B * A`. Refuses heterogeneous ranks, which is exactly the
/// failure stacking exists to avoid.
pub fn naive_lora_average(
    adapters: &[LoraAdapter],
    weights: &[f64],
) -> Result<(Matrix, Matrix, Matrix)> {
    let (m, n) = check_adapter_shapes(adapters, "naive_lora_average")?;
    let rank = check_uniform_rank(adapters)?;
    check_weights(weights, adapters.len())?;
    let scaling = adapters[0].scaling();
    if adapters
        .iter()
        .any(|ad| (ad.scaling() - scaling).abs() > 1e-12)
    {
        return Err(Error::Config(
            "naive averaging requires a uniform adapter scaling".into(),
        ));
    }
    let mut a_glob = Matrix::zeros(rank, n);
    let mut b_glob = Matrix::zeros(m, rank);
    for (ad, &u) in adapters.iter().zip(weights) {
        a_glob = axpy(&a_glob, &ad.a, u)?;
        b_glob = axpy(&b_glob, &ad.b, u)?;
    }
    let delta = b_glob.matmul(&a_glob)?.scale(scaling);
    Ok((a_glob, b_glob, delta))
}

/// Splits the naive product into its per-client diagonal part and the
/// cross-client part:
/// `signal = sum_i u_i^2 B_i A_i`, `noise = sum_{i != j} u_i u_j B_i A_j`.
/// `signal + noise` reconstructs `B_glob * A_glob` (the naive update before
/// scaling) exactly up to floating-point reassociation.
pub fn noise_decomposition(
    adapters: &[LoraAdapter],
    weights: &[f64],
) -> Result<(Matrix, Matrix)> {
    let (m, n) = check_adapter_shapes(adapters, "noise_decomposition")?;
    check_uniform_rank(adapters)?;
    check_weights(weights, adapters.len())?;
    let mut signal = Matrix::zeros(m, n);
    let mut noise = Matrix::zeros(m, n);
    for (i, (ad_i, &u_i)) in adapters.iter().zip(weights).enumerate() {
        for (j, (ad_j, &u_j)) in adapters.iter().zip(weights).enumerate() {
            let cross = ad_i.b.matmul(&ad_j.a)?;
            if i == j {
                signal = axpy(&signal, &cross, u_i * u_j)?;
            } else {
                noise = axpy(&noise, &cross, u_i * u_j)?;
            }
        }
    }
    Ok((signal, noise))
}

/// Transmission volume per round, in parameter counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransmissionCounts {
    /// Per client: adapter `r_i (m + n)` plus the classifier head `m + 1`.
    pub uplink: Vec<u64>,
    /// Per client; stacking ships the merged dense base, naive ships the
    /// averaged low-rank pair.
    pub downlink: Vec<u64>,
    pub total: u64,
}

/// Closed-form parameter counts for one global round.
pub fn transmitted_parameter_count(
    hidden_dim: usize,
    feature_dim: usize,
    ranks: &[usize],
    mode: AggregationMode,
) -> TransmissionCounts {
    let (m, n) = (hidden_dim as u64, feature_dim as u64);
    let head = m + 1;
    let uplink: Vec<u64> = ranks.iter().map(|&r| r as u64 * (m + n) + head).collect();
    let per_downlink = match mode {
        AggregationMode::Stacking => m * n + head,
        AggregationMode::Naive => ranks.first().map(|&r| r as u64).unwrap_or(0) * (m + n) + head,
    };
    let downlink = vec![per_downlink; ranks.len()];
    let total = uplink.iter().sum::<u64>() + per_downlink * ranks.len() as u64;
    TransmissionCounts {
        uplink,
        downlink,
        total,
    }
}

/// Runs one global round: broadcast, local training on every client, exact
/// aggregation, then evaluation of the new global model on each client's
/// held-out questions. Any client failure aborts the round; there is no
/// partial aggregation.
pub fn run_round(
    global: &mut GlobalState,
    clients: &mut [ClientState],
    cfg: &FederationConfig,
) -> Result<RoundReport> {
    if clients.is_empty() {
        return Err(Error::EmptyInput { op: "run_round" });
    }
    let weights: Vec<f64> = clients.iter().map(|c| c.weight).collect();
    check_weights(&weights, clients.len())?;

    let round = global.round + 1;
    let w_base = global.w_base.clone();
    let b0 = global.b0.clone();
    let w_cls = global.w_cls.clone();
    let b_cls = global.b_cls;
    let (m, n) = (w_base.rows(), w_base.cols());

    struct ClientUpdate {
        adapter: LoraAdapter,
        head: (Vec<f64>, f64),
        final_loss: f64,
    }

    // Clients train concurrently; each is deterministic in isolation, so the
    // collected order (client index) fixes the aggregation order.
    let outcomes: Vec<Result<ClientUpdate>> = clients
        .par_iter_mut()
        .map(|client| {
            client.model.w0 = w_base.clone();
            client.model.b0 = b0.clone();
            if cfg.broadcast_classifier {
                client.model.w_cls = w_cls.clone();
                client.model.b_cls = b_cls;
            }
            let alpha = cfg.alpha.unwrap_or(client.rank as f64);
            let adapter = init_lora(client.rank, alpha, n, m, adapter_seed(client.seed, round))?;
            client.model.adapter = Some(adapter);
            let mut train_cfg = cfg.train.clone();
            train_cfg.shuffle_seed = shuffle_seed(client.seed, round);
            let report = train_local(&mut client.model, &client.data, &train_cfg)?;
            Ok(ClientUpdate {
                adapter: report.adapter,
                head: (report.w_cls, report.b_cls),
                final_loss: *report.epoch_losses.last().expect("at least one epoch"),
            })
        })
        .collect();

    let mut adapters = Vec::with_capacity(clients.len());
    let mut heads = Vec::with_capacity(clients.len());
    let mut losses = Vec::with_capacity(clients.len());
    for (client, outcome) in clients.iter().zip(outcomes) {
        let update = outcome.map_err(|e| Error::ClientFailed {
            client_id: client.client_id.clone(),
            source: Box::new(e),
        })?;
        adapters.push(update.adapter);
        heads.push(update.head);
        losses.push(update.final_loss);
    }

    let (delta_w, noise_norm) = match cfg.aggregation {
        AggregationMode::Stacking => (
            stack_aggregate(&adapters, &weights, cfg.weighted_stacking)?,
            None,
        ),
        AggregationMode::Naive => {
            let delta = naive_lora_average(&adapters, &weights)?.2;
            let (_, noise) = noise_decomposition(&adapters, &weights)?;
            (delta, Some(noise.frobenius_norm()))
        }
    };
    global.w_base = axpy(&global.w_base, &delta_w, 1.0)?;
    let (new_w_cls, new_b_cls) = average_classifiers(&heads, &weights)?;
    global.w_cls = new_w_cls;
    global.b_cls = new_b_cls;
    global.round = round;

    let ranks: Vec<usize> = clients.iter().map(|c| c.rank).collect();
    let counts = transmitted_parameter_count(m, n, &ranks, cfg.aggregation);
    let eval_model = global.model();
    let mut client_rounds = Vec::with_capacity(clients.len());
    for (i, client) in clients.iter().enumerate() {
        let metrics = selection::evaluate_records(&eval_model, &client.test_set).map_err(|e| {
            Error::ClientFailed {
                client_id: client.client_id.clone(),
                source: Box::new(e),
            }
        })?;
        client_rounds.push(ClientRound {
            client_id: client.client_id.clone(),
            final_epoch_loss: losses[i],
            uplink_params: counts.uplink[i],
            downlink_params: counts.downlink[i],
            metrics,
        });
    }

    let report = RoundReport {
        round,
        delta_w_norm: delta_w.frobenius_norm(),
        noise_norm,
        clients: client_rounds,
    };
    global.history.push(report.clone());
    Ok(report)
}

/// Runs `rounds` sequential global rounds. Reports accumulate in
/// `global.history`; determinism under fixed seeds makes any prefix of a
/// longer run identical to a shorter one.
pub fn run_federation(
    global: &mut GlobalState,
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &FederationConfig,
) -> Result<()> {
    if rounds < 1 {
        return Err(Error::Config("round count must be >= 1".into()));
    }
    for _ in 0..rounds {
        run_round(global, clients, cfg)?;
    }
    Ok(())
}
