//! The four engine commands: `simulate`, `compare-aggregation`,
//! `generate-synthetic`, and `evaluate`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cli::checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, ClientSnapshot, CHECKPOINT_VERSION,
};
use crate::cli::config::{config_hash, Aggregation, Mode, RunConfig};
use crate::corpus::{self, QuestionRecord};
use crate::discriminator::{init_model, DiscriminatorModel};
use crate::error::{Error, Result};
use crate::federation::{
    data_volume_weights, run_federation, ClientState, GlobalState, RoundReport,
};
use crate::selection::{self, MetricsReport};
use crate::synth::{generate_federation, OracleStats};

/// Output paths and final state of a `simulate` run.
#[derive(Debug)]
pub struct SimulationArtifacts {
    pub global: GlobalState,
    pub oracle: Option<Vec<(String, OracleStats)>>,
    pub metrics_csv: PathBuf,
    pub report_json: PathBuf,
    pub checkpoint: PathBuf,
}

/// One arm of a stacking-vs-naive comparison.
#[derive(Clone, Debug, Serialize)]
pub struct AggregationArm {
    pub final_mean_accuracy: f64,
    pub per_round_mean_accuracy: Vec<f64>,
    /// Cross-client noise norm per round; empty under stacking.
    pub per_round_noise_norm: Vec<f64>,
}

/// Side-by-side result of `compare-aggregation`.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub stacking: AggregationArm,
    pub naive: Option<AggregationArm>,
    /// Why the naive arm could not run, when it could not.
    pub naive_error: Option<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    sum / count as f64
}

fn built_clients_from_records(
    cfg: &RunConfig,
    base: &DiscriminatorModel,
    per_client: Vec<(String, crate::corpus::DiscriminationSet, Vec<QuestionRecord>)>,
) -> Vec<ClientState> {
    let sizes: Vec<usize> = per_client.iter().map(|(_, data, _)| data.len()).collect();
    let weights = data_volume_weights(&sizes);
    per_client
        .into_iter()
        .enumerate()
        .map(|(i, (client_id, data, test_set))| ClientState {
            client_id,
            data,
            test_set,
            rank: cfg.ranks[i],
            weight: weights[i],
            model: base.clone(),
            seed: cfg.client_seed(i),
        })
        .collect()
}

type BuiltFederation = (
    GlobalState,
    Vec<ClientState>,
    Option<Vec<(String, OracleStats)>>,
);

/// Materializes the federation for a run: synthetic generation or JSONL
/// ingestion, plus the shared simulated-pretrained base.
fn build_federation(cfg: &RunConfig) -> Result<BuiltFederation> {
    let base = init_model(cfg.feature_dim, cfg.hidden_dim, cfg.base_model_seed());
    let global = GlobalState::from_model(&base);
    match cfg.mode {
        Mode::Synthetic => {
            let fed = generate_federation(&cfg.synth_config())?;
            let oracle: Vec<(String, OracleStats)> = fed
                .clients
                .iter()
                .zip(&fed.oracle)
                .map(|(c, o)| (c.client_id.clone(), *o))
                .collect();
            let per_client = fed
                .clients
                .into_iter()
                .map(|c| (c.client_id, c.train, c.test))
                .collect();
            Ok((
                global,
                built_clients_from_records(cfg, &base, per_client),
                Some(oracle),
            ))
        }
        Mode::Ingest => {
            let dim = cfg.feature_dim;
            let seed = cfg.feature_seed();
            let mut per_client = Vec::with_capacity(cfg.ingest.clients.len());
            for (i, paths) in cfg.ingest.clients.iter().enumerate() {
                let mut train = corpus::load_jsonl(&paths.train_path)?;
                let mut test = match &paths.test_path {
                    Some(path) => corpus::load_jsonl(path)?,
                    None => {
                        let fraction = cfg.ingest.test_fraction.unwrap_or(0.2);
                        let held_out = ((train.len() as f64 * fraction).round() as usize)
                            .clamp(1, train.len().saturating_sub(1).max(1));
                        if train.len() < 2 {
                            return Err(Error::Validation(format!(
                                "client {i}: need at least 2 questions to hold out a test split"
                            )));
                        }
                        train.split_off(train.len() - held_out)
                    }
                };
                if test.is_empty() {
                    return Err(Error::Validation(format!(
                        "client {i}: empty test set"
                    )));
                }
                let data = corpus::build_discrimination_set(&train, dim, seed)?;
                corpus::annotate_records(&mut test, dim, seed)?;
                let client_id = paths
                    .train_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("client{i}"));
                per_client.push((client_id, data, test));
            }
            Ok((
                global,
                built_clients_from_records(cfg, &base, per_client),
                None,
            ))
        }
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("fedcot-run"))
}

/// A completed in-memory run: final state, trained clients, and (in
/// synthetic mode) the planted oracle ceilings.
#[derive(Debug)]
pub struct SimulationRun {
    pub global: GlobalState,
    pub clients: Vec<ClientState>,
    pub oracle: Option<Vec<(String, OracleStats)>>,
}

/// Runs the federation without touching the filesystem; the embedding entry
/// point behind `cmd_simulate` and the C ABI.
pub fn run_simulation(cfg: &RunConfig) -> Result<SimulationRun> {
    cfg.validate()?;
    let (mut global, mut clients, oracle) = build_federation(cfg)?;
    run_federation(&mut global, &mut clients, cfg.rounds, &cfg.federation_config())?;
    Ok(SimulationRun {
        global,
        clients,
        oracle,
    })
}

fn write_metrics_csv(history: &[RoundReport], path: &Path) -> Result<()> {
    let mut out = String::from(
        "round,client_id,epoch_loss,delta_w_norm,uplink_params,downlink_params,\
         accuracy,p_at_1,p_at_k,delta,majority_vote_acc\n",
    );
    for report in history {
        for client in &report.clients {
            let m = &client.metrics;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                report.round,
                client.client_id,
                client.final_epoch_loss,
                report.delta_w_norm,
                client.uplink_params,
                client.downlink_params,
                m.accuracy,
                m.p_at_1,
                m.p_at_k,
                m.delta,
                m.majority_vote_accuracy
            )
            .expect("writing to string");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize)]
struct ClientRoundJson<'a> {
    client_id: &'a str,
    epoch_loss: f64,
    uplink_params: u64,
    downlink_params: u64,
    metrics: MetricsReport,
}

#[derive(Serialize)]
struct RoundJson<'a> {
    round: usize,
    delta_w_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_norm: Option<f64>,
    mean_accuracy: f64,
    mean_p_at_1: f64,
    mean_p_at_k: f64,
    mean_majority_vote_accuracy: f64,
    clients: Vec<ClientRoundJson<'a>>,
}

#[derive(Serialize)]
struct OracleJson<'a> {
    client_id: &'a str,
    p_at_1: f64,
    p_at_k: f64,
    delta: f64,
}

#[derive(Serialize)]
struct RunReportJson<'a> {
    config_hash: &'a str,
    rounds: usize,
    history: Vec<RoundJson<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<Vec<OracleJson<'a>>>,
}

fn round_json(report: &RoundReport) -> RoundJson<'_> {
    RoundJson {
        round: report.round,
        delta_w_norm: report.delta_w_norm,
        noise_norm: report.noise_norm,
        mean_accuracy: mean(report.clients.iter().map(|c| c.metrics.accuracy)),
        mean_p_at_1: mean(report.clients.iter().map(|c| c.metrics.p_at_1)),
        mean_p_at_k: mean(report.clients.iter().map(|c| c.metrics.p_at_k)),
        mean_majority_vote_accuracy: mean(
            report.clients.iter().map(|c| c.metrics.majority_vote_accuracy),
        ),
        clients: report
            .clients
            .iter()
            .map(|c| ClientRoundJson {
                client_id: &c.client_id,
                epoch_loss: c.final_epoch_loss,
                uplink_params: c.uplink_params,
                downlink_params: c.downlink_params,
                metrics: c.metrics,
            })
            .collect(),
    }
}

/// The report.json payload as a string; shared by the file writer and the
/// C ABI.
pub fn report_json_string(
    hash: &str,
    global: &GlobalState,
    oracle: &Option<Vec<(String, OracleStats)>>,
) -> String {
    let report = RunReportJson {
        config_hash: hash,
        rounds: global.round,
        history: global.history.iter().map(round_json).collect(),
        oracle: oracle.as_ref().map(|entries| {
            entries
                .iter()
                .map(|(id, o)| OracleJson {
                    client_id: id,
                    p_at_1: o.p_at_1,
                    p_at_k: o.p_at_k,
                    delta: o.delta,
                })
                .collect()
        }),
    };
    serde_json::to_string_pretty(&report).expect("report serializes")
}

fn write_report_json(
    hash: &str,
    global: &GlobalState,
    oracle: &Option<Vec<(String, OracleStats)>>,
    path: &Path,
) -> Result<()> {
    fs::write(path, report_json_string(hash, global, oracle) + "\n")?;
    Ok(())
}

fn snapshot(global: &GlobalState, clients: &[ClientState], cfg: &RunConfig, hash: &str) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        round: global.round,
        feature_seed: cfg.feature_seed(),
        config_hash: hash.to_string(),
        w_base: global.w_base.clone(),
        b0: global.b0.clone(),
        w_cls: global.w_cls.clone(),
        b_cls: global.b_cls,
        clients: clients
            .iter()
            .map(|c| {
                let adapter = c
                    .model
                    .adapter
                    .as_ref()
                    .expect("clients have adapters after a round");
                ClientSnapshot {
                    seed: c.seed,
                    rank: c.rank,
                    alpha: adapter.alpha,
                    adapter_a: adapter.a.clone(),
                    adapter_b: adapter.b.clone(),
                }
            })
            .collect(),
    }
}

/// Runs the federation end to end and writes `metrics.csv`, `report.json`,
/// and `checkpoint.ckpt` into the output directory. With `resume`, the run
/// continues from a checkpoint instead of round zero and reproduces the
/// uninterrupted trajectory bit-exactly.
pub fn cmd_simulate(cfg: &RunConfig, resume: Option<&Path>) -> Result<SimulationArtifacts> {
    cfg.validate()?;
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir)?;
    let hash = config_hash(cfg);
    let (mut global, mut clients, oracle) = build_federation(cfg)?;

    if let Some(ckpt_path) = resume {
        let ckpt = load_checkpoint(ckpt_path)?;
        if ckpt.config_hash != hash {
            return Err(Error::CheckpointConfigMismatch {
                expected: hash,
                found: ckpt.config_hash,
            });
        }
        if ckpt.round >= cfg.rounds {
            return Err(Error::Config(format!(
                "checkpoint is already at round {} of {}",
                ckpt.round, cfg.rounds
            )));
        }
        global.round = ckpt.round;
        global.w_base = ckpt.w_base;
        global.b0 = ckpt.b0;
        global.w_cls = ckpt.w_cls;
        global.b_cls = ckpt.b_cls;
        log::info!("resumed at round {} from {}", global.round, ckpt_path.display());
    }

    let remaining = cfg.rounds - global.round;
    run_federation(&mut global, &mut clients, remaining, &cfg.federation_config())?;
    for report in &global.history {
        log::info!(
            "round {}: mean accuracy {:.4}, |dW| {:.4}",
            report.round,
            mean(report.clients.iter().map(|c| c.metrics.accuracy)),
            report.delta_w_norm
        );
    }

    let metrics_csv = dir.join("metrics.csv");
    write_metrics_csv(&global.history, &metrics_csv)?;
    let report_json = dir.join("report.json");
    write_report_json(&hash, &global, &oracle, &report_json)?;
    let checkpoint = dir.join("checkpoint.ckpt");
    save_checkpoint(&snapshot(&global, &clients, cfg, &hash), &checkpoint)?;

    Ok(SimulationArtifacts {
        global,
        oracle,
        metrics_csv,
        report_json,
        checkpoint,
    })
}

fn arm_summary(global: &GlobalState) -> AggregationArm {
    AggregationArm {
        final_mean_accuracy: mean(
            global
                .history
                .last()
                .expect("at least one round")
                .clients
                .iter()
                .map(|c| c.metrics.accuracy),
        ),
        per_round_mean_accuracy: global
            .history
            .iter()
            .map(|r| mean(r.clients.iter().map(|c| c.metrics.accuracy)))
            .collect(),
        per_round_noise_norm: global.history.iter().filter_map(|r| r.noise_norm).collect(),
    }
}

/// Runs stacking and naive aggregation from identical seeds and reports the
/// per-round noise norm and final accuracies side by side. A naive arm with
/// heterogeneous ranks fails cleanly; the stacking arm still runs.
pub fn cmd_compare_aggregation(cfg: &RunConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir)?;

    let mut stacking_cfg = cfg.clone();
    stacking_cfg.aggregation = Aggregation::Stacking;
    let (mut global, mut clients, _) = build_federation(&stacking_cfg)?;
    run_federation(
        &mut global,
        &mut clients,
        cfg.rounds,
        &stacking_cfg.federation_config(),
    )?;
    let stacking = arm_summary(&global);

    let mut naive_cfg = cfg.clone();
    naive_cfg.aggregation = Aggregation::Naive;
    let (naive, naive_error) = {
        let (mut global, mut clients, _) = build_federation(&naive_cfg)?;
        match run_federation(
            &mut global,
            &mut clients,
            cfg.rounds,
            &naive_cfg.federation_config(),
        ) {
            Ok(()) => (Some(arm_summary(&global)), None),
            Err(e @ Error::RankMismatch { .. }) => (None, Some(e.to_string())),
            Err(other) => return Err(other),
        }
    };

    let report = ComparisonReport {
        stacking,
        naive,
        naive_error,
    };
    let json = serde_json::to_string_pretty(&report).expect("comparison serializes");
    fs::write(dir.join("comparison.json"), json + "\n")?;
    Ok(report)
}

/// Emits the synthetic federation as JSONL corpus files (one train and one
/// test file per client), in the schema `load_jsonl` reads back.
pub fn cmd_generate_synthetic(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.mode != Mode::Synthetic {
        return Err(Error::Config(
            "generate-synthetic requires mode = \"synthetic\"".into(),
        ));
    }
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir)?;
    let fed = generate_federation(&cfg.synth_config())?;
    let mut paths = Vec::new();
    for client in &fed.clients {
        let train = dir.join(format!("{}_train.jsonl", client.client_id));
        corpus::write_jsonl(&client.train_questions, &train)?;
        paths.push(train);
        let test = dir.join(format!("{}_test.jsonl", client.client_id));
        corpus::write_jsonl(&client.test, &test)?;
        paths.push(test);
    }
    Ok(paths)
}

/// Scores a checkpointed global discriminator against JSONL corpora,
/// re-featurizing with the checkpoint's recorded hashing parameters.
pub fn cmd_evaluate(
    checkpoint: &Path,
    corpora: &[PathBuf],
    out: Option<&Path>,
) -> Result<Vec<(String, MetricsReport)>> {
    if corpora.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate" });
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let model = DiscriminatorModel {
        w0: ckpt.w_base,
        b0: ckpt.b0,
        adapter: None,
        w_cls: ckpt.w_cls,
        b_cls: ckpt.b_cls,
    };
    let dim = model.feature_dim();
    let mut results = Vec::with_capacity(corpora.len());
    for path in corpora {
        let mut records = corpus::load_jsonl(path)?;
        corpus::annotate_records(&mut records, dim, ckpt.feature_seed)?;
        let metrics = selection::evaluate_records(&model, &records)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        log::info!(
            "{name}: accuracy {:.4}, p@1 {:.4}, p@k {:.4}",
            metrics.accuracy,
            metrics.p_at_1,
            metrics.p_at_k
        );
        results.push((name, metrics));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct EvalJson<'a> {
            corpus: &'a str,
            metrics: MetricsReport,
        }
        let rows: Vec<EvalJson> = results
            .iter()
            .map(|(name, metrics)| EvalJson {
                corpus: name,
                metrics: *metrics,
            })
            .collect();
        let json = serde_json::to_string_pretty(&rows).expect("eval serializes");
        fs::write(dir.join("evaluation.json"), json + "\n")?;
    }
    Ok(results)
}
