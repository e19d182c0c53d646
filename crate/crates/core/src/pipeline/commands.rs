use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, RewardVariant, SweepCell, FORMAT_VERSION};
use super::formats::{
    csv_with_header, read_checkpoint, read_dataset, read_models, rows_to_bytes, sibling, unix_now, write_atomic,
    write_checkpoint, write_dataset, write_models, Checkpoint, ReportFormat, RewardModelsFile, RunManifest,
};
use crate::error::{Error, Result};
use crate::mdp::PreferenceVector;
use crate::ope::{evaluate_policy_metrics, per_decision_is, target_propensities, trajectory_is, MetricEstimates, OpeEstimate};
use crate::reward::{build_scalar_rewards, fit_click_model, fit_session_model, ClickFit, RewardSpec, SessionFit};
use crate::sim::{baseline_policy, feature_schema, generate_dataset, true_policy_value, Dataset, DecisionPolicy, PolicyValue};
use crate::trainer::{train, QPolicy, Smoothing, SmoothedPolicy, StepRecord, TrainConfig, TrainReport};

/// Click and session models fitted on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModels {
    pub click: ClickFit,
    pub session: SessionFit,
}

pub fn fit_reward_models(dataset: &Dataset) -> Result<RewardModels> {
    Ok(RewardModels {
        click: fit_click_model(dataset)?,
        session: fit_session_model(dataset)?,
    })
}

/// Reward spec for `variant`; models are required unless the variant is observed.
pub fn reward_spec_for(variant: RewardVariant, prefs: PreferenceVector, models: Option<&RewardModels>) -> Result<RewardSpec> {
    let need = || {
        models.ok_or_else(|| Error::Config(format!("reward variant {variant:?} needs fitted reward models")))
    };
    let spec = match variant {
        RewardVariant::Observed => RewardSpec::observed(prefs),
        RewardVariant::PredictedClicks => RewardSpec::predicted_clicks(prefs, need()?.click.model.clone()),
        RewardVariant::PredictedSessions => {
            let m = need()?;
            RewardSpec::predicted_sessions(prefs, m.click.model.clone(), m.session.model.clone())
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Builds scalar rewards under `spec` and trains.
pub fn train_policy(dataset: &Dataset, spec: &RewardSpec, config: &TrainConfig) -> Result<(QPolicy, TrainReport)> {
    let rewards = build_scalar_rewards(dataset, spec)?;
    train(dataset, &rewards, config)
}

/// One row of an OPE report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub metric: String,
    pub estimator: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub effective_sample_size: Option<f64>,
    pub n_units: Option<usize>,
    pub n_trajectories: Option<usize>,
    pub self_normalized_value: Option<f64>,
    pub max_weight: Option<f64>,
    pub mean_weight: Option<f64>,
    pub weight_variance: Option<f64>,
    pub top1pct_mass: Option<f64>,
}

impl EstimateRow {
    fn from_estimate(metric: &str, e: &OpeEstimate) -> Self {
        Self {
            metric: metric.into(),
            estimator: e.estimator_kind.to_string(),
            value: e.value,
            stderr: Some(e.stderr),
            effective_sample_size: Some(e.effective_sample_size),
            n_units: Some(e.n_units),
            n_trajectories: Some(e.n_trajectories),
            self_normalized_value: Some(e.self_normalized_value),
            max_weight: Some(e.diagnostics.max_weight),
            mean_weight: Some(e.diagnostics.mean_weight),
            weight_variance: Some(e.diagnostics.weight_variance),
            top1pct_mass: Some(e.diagnostics.top1pct_mass),
        }
    }
}

/// Per-metric one-step rows, the CTR proxy, and the scalarized return under
/// all three estimators.
pub fn evaluation_rows(
    dataset: &Dataset,
    policy: &QPolicy,
    smoothing: &Smoothing,
    prefs: &PreferenceVector,
    gamma: f64,
) -> Result<(MetricEstimates, Vec<EstimateRow>)> {
    let probs = target_propensities(dataset, policy, smoothing)?;
    let metrics = crate::ope::evaluate_with_probs(dataset, &probs, prefs, gamma)?;
    let scalar: Vec<Vec<f64>> = build_scalar_rewards(dataset, &RewardSpec::observed(*prefs))?;
    let trajs = &dataset.trajectories;
    let mut rows = vec![
        EstimateRow::from_estimate("volume", &metrics.volume),
        EstimateRow::from_estimate("sessions", &metrics.sessions),
        EstimateRow::from_estimate("clicks", &metrics.clicks),
    ];
    if let Some(ctr) = metrics.ctr_proxy {
        rows.push(EstimateRow {
            metric: "ctr_proxy".into(),
            estimator: "one_step_is".into(),
            value: ctr,
            stderr: None,
            effective_sample_size: None,
            n_units: None,
            n_trajectories: None,
            self_normalized_value: None,
            max_weight: None,
            mean_weight: None,
            weight_variance: None,
            top1pct_mass: None,
        });
    }
    rows.push(EstimateRow::from_estimate("scalarized", &metrics.scalarized));
    rows.push(EstimateRow::from_estimate("scalarized", &per_decision_is(trajs, &scalar, &probs, gamma)?));
    rows.push(EstimateRow::from_estimate("scalarized", &trajectory_is(trajs, &scalar, &probs, gamma)?));
    Ok((metrics, rows))
}

fn finish(manifest: &mut RunManifest, output: &Path) -> Result<()> {
    manifest.outputs.insert(0, output.display().to_string());
    manifest.write_next_to(output)?;
    Ok(())
}

/// Simulates the logged dataset under epsilon-greedy exploration around the
/// configured baseline and writes it to `out`.
pub fn cmd_gen_data(config: &PipelineConfig, out: &Path) -> Result<Dataset> {
    config.validate()?;
    let mut manifest = RunManifest::new("gen-data", config.digest(), config.sim.rng_seed, unix_now());
    let mut dataset = generate_dataset(&config.sim, &baseline_policy(&config.sim))?;
    dataset.provenance.config_digest = config.digest();
    write_dataset(out, &dataset)?;
    finish(&mut manifest, out)?;
    Ok(dataset)
}

/// Fits the click and session models on a dataset file.
pub fn cmd_fit_reward_models(config: &PipelineConfig, dataset_path: &Path, out: &Path) -> Result<RewardModelsFile> {
    config.validate()?;
    let mut manifest = RunManifest::new("fit-reward-models", config.digest(), config.train.seed, unix_now());
    let dataset = read_dataset(dataset_path)?;
    let models = fit_reward_models(&dataset)?;
    let file = RewardModelsFile {
        format_version: FORMAT_VERSION,
        kind: "reward_models".into(),
        schema: dataset.schema.clone(),
        click: models.click,
        session: models.session,
        config_digest: config.digest(),
    };
    write_models(out, &file)?;
    manifest.inputs.push(dataset_path.display().to_string());
    finish(&mut manifest, out)?;
    Ok(file)
}

const LOSS_HEADER: [&str; 5] = ["step", "loss", "bellman", "penalty", "synced"];
const EPOCH_HEADER: [&str; 4] = ["epoch", "mean_q_data", "mean_logsumexp", "mean_max_q"];

/// Trains on a dataset file and writes the checkpoint to `out`, the
/// per-step losses to `<stem>.losses.csv` and per-epoch diagnostics to
/// `<stem>.epochs.csv`.
pub fn cmd_train(config: &PipelineConfig, dataset_path: &Path, models_path: Option<&Path>, out: &Path) -> Result<Checkpoint> {
    config.validate()?;
    let mut manifest = RunManifest::new("train", config.digest(), config.train.seed, unix_now());
    let dataset = read_dataset(dataset_path)?;
    manifest.inputs.push(dataset_path.display().to_string());
    let models = match (models_path, config.reward.variant.needs_models()) {
        (Some(p), _) => {
            let file = read_models(p)?;
            file.schema.ensure_same(&dataset.schema, "reward models")?;
            manifest.inputs.push(p.display().to_string());
            Some(RewardModels { click: file.click, session: file.session })
        }
        (None, true) => Some(fit_reward_models(&dataset)?),
        (None, false) => None,
    };
    let spec = reward_spec_for(config.reward.variant, config.reward.prefs, models.as_ref())?;
    let (policy, report) = train_policy(&dataset, &spec, &config.train)?;
    let checkpoint = Checkpoint::new(&policy, spec, config.train.clone(), config.digest());
    let losses: Vec<(usize, f64, f64, f64, bool)> = report
        .steps
        .iter()
        .map(|s: &StepRecord| (s.step, s.loss, s.bellman, s.penalty, s.synced))
        .collect();
    let epochs: Vec<_> = report
        .epochs
        .iter()
        .map(|e| (e.epoch, e.mean_q_data, e.mean_logsumexp, e.mean_max_q))
        .collect();
    let loss_path = sibling(out, ".losses.csv");
    let epoch_path = sibling(out, ".epochs.csv");
    write_atomic(&loss_path, &csv_with_header(&LOSS_HEADER, &losses)?)?;
    write_atomic(&epoch_path, &csv_with_header(&EPOCH_HEADER, &epochs)?)?;
    write_checkpoint(out, &checkpoint)?;
    manifest.outputs = vec![loss_path.display().to_string(), epoch_path.display().to_string()];
    finish(&mut manifest, out)?;
    Ok(checkpoint)
}

/// Off-policy evaluation of a checkpoint on a dataset file.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    checkpoint_path: &Path,
    dataset_path: &Path,
    out: &Path,
    format: ReportFormat,
) -> Result<Vec<EstimateRow>> {
    config.validate()?;
    let mut manifest = RunManifest::new("evaluate", config.digest(), 0, unix_now());
    let checkpoint = read_checkpoint(checkpoint_path)?;
    let dataset = read_dataset(dataset_path)?;
    let policy = checkpoint.policy()?;
    let (_, rows) = evaluation_rows(&dataset, &policy, &config.ope.smoothing, &config.reward.prefs, config.train.gamma)?;
    write_atomic(out, &rows_to_bytes(&rows, format)?)?;
    manifest.inputs = vec![checkpoint_path.display().to_string(), dataset_path.display().to_string()];
    finish(&mut manifest, out)?;
    Ok(rows)
}

/// One trained-and-evaluated sweep cell replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub replication: usize,
    pub seed: u64,
    pub w_s: f64,
    pub w_c: f64,
    pub w_v: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub status: String,
    pub error: Option<String>,
    pub volume: Option<f64>,
    pub volume_stderr: Option<f64>,
    pub sessions: Option<f64>,
    pub sessions_stderr: Option<f64>,
    pub clicks: Option<f64>,
    pub clicks_stderr: Option<f64>,
    pub ctr_proxy: Option<f64>,
    pub scalarized: Option<f64>,
    pub scalarized_stderr: Option<f64>,
    pub scalarized_ess: Option<f64>,
}

/// Trains and evaluates one sweep job; failures are reported in the row.
pub fn run_sweep_job(
    config: &PipelineConfig,
    dataset: &Dataset,
    models: Option<&RewardModels>,
    (cell_index, cell): (usize, &SweepCell),
    (replication, seed): (usize, u64),
) -> (SweepRow, Option<QPolicy>) {
    let mut row = SweepRow {
        cell: cell_index,
        replication,
        seed,
        w_s: cell.prefs.w_s,
        w_c: cell.prefs.w_c,
        w_v: cell.prefs.w_v,
        alpha: cell.alpha,
        gamma: cell.gamma,
        learning_rate: cell.learning_rate,
        status: "ok".into(),
        error: None,
        volume: None,
        volume_stderr: None,
        sessions: None,
        sessions_stderr: None,
        clicks: None,
        clicks_stderr: None,
        ctr_proxy: None,
        scalarized: None,
        scalarized_stderr: None,
        scalarized_ess: None,
    };
    let train_cfg = TrainConfig {
        alpha: cell.alpha,
        gamma: cell.gamma,
        learning_rate: cell.learning_rate,
        seed,
        ..config.train.clone()
    };
    let outcome = (|| {
        let spec = reward_spec_for(config.reward.variant, cell.prefs, models)?;
        let (policy, _) = train_policy(dataset, &spec, &train_cfg)?;
        let est = evaluate_policy_metrics(dataset, &policy, &config.ope.smoothing, &cell.prefs, cell.gamma)?;
        Ok::<_, Error>((policy, est))
    })();
    match outcome {
        Ok((policy, m)) => {
            row.volume = Some(m.volume.value);
            row.volume_stderr = Some(m.volume.stderr);
            row.sessions = Some(m.sessions.value);
            row.sessions_stderr = Some(m.sessions.stderr);
            row.clicks = Some(m.clicks.value);
            row.clicks_stderr = Some(m.clicks.stderr);
            row.ctr_proxy = m.ctr_proxy;
            row.scalarized = Some(m.scalarized.value);
            row.scalarized_stderr = Some(m.scalarized.stderr);
            row.scalarized_ess = Some(m.scalarized.effective_sample_size);
            (row, Some(policy))
        }
        Err(e) => {
            row.status = "failed".into();
            row.error = Some(e.to_string());
            (row, None)
        }
    }
}

/// Trains every grid cell × seed on `dataset` using up to `workers` threads
/// and returns rows ordered by cell, then replication.
pub fn run_sweep(config: &PipelineConfig, dataset: &Dataset, workers: Option<usize>) -> Result<Vec<(SweepRow, Option<QPolicy>)>> {
    config.validate()?;
    let models = if config.reward.variant.needs_models() {
        Some(fit_reward_models(dataset)?)
    } else {
        None
    };
    let cells = config.sweep.cells(&config.reward, &config.train);
    let seeds = config.sweep.seeds(config.train.seed);
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..seeds.len()).map(move |r| (c, r))).collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("--workers must be >= 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(c, r)| run_sweep_job(config, dataset, models.as_ref(), (c, &cells[c]), (r, seeds[r])))
            .collect()
    }))
}

pub fn cmd_sweep(
    config: &PipelineConfig,
    dataset_path: &Path,
    out: &Path,
    format: ReportFormat,
    workers: Option<usize>,
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mut manifest = RunManifest::new("sweep", config.digest(), config.train.seed, unix_now());
    let dataset = read_dataset(dataset_path)?;
    let rows: Vec<SweepRow> = run_sweep(config, &dataset, workers)?.into_iter().map(|(r, _)| r).collect();
    write_atomic(out, &rows_to_bytes(&rows, format)?)?;
    manifest.inputs.push(dataset_path.display().to_string());
    finish(&mut manifest, out)?;
    Ok(rows)
}

/// Ground-truth simulator evaluation with normal 95% intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_episodes: usize,
    pub seed: u64,
    pub smoothed: bool,
    pub mean_return: f64,
    pub return_ci_low: f64,
    pub return_ci_high: f64,
    pub visits: f64,
    pub visits_ci_low: f64,
    pub visits_ci_high: f64,
    pub sessions: f64,
    pub volume: f64,
    pub volume_ci_low: f64,
    pub volume_ci_high: f64,
    pub clicks: f64,
    pub ctr: Option<f64>,
    pub wau_rate: f64,
}

impl SimReport {
    pub fn new(v: &PolicyValue, seed: u64, smoothed: bool) -> Self {
        let z = 1.96;
        Self {
            n_episodes: v.n_episodes,
            seed,
            smoothed,
            mean_return: v.mean_return,
            return_ci_low: v.mean_return - z * v.stderr,
            return_ci_high: v.mean_return + z * v.stderr,
            visits: v.visits,
            visits_ci_low: v.visits - z * v.visits_stderr,
            visits_ci_high: v.visits + z * v.visits_stderr,
            sessions: v.sessions,
            volume: v.volume,
            volume_ci_low: v.volume - z * v.volume_stderr,
            volume_ci_high: v.volume + z * v.volume_stderr,
            clicks: v.clicks,
            ctr: v.ctr,
            wau_rate: v.wau_rate,
        }
    }
}

/// Monte-Carlo value of `policy` on the configured simulator, deployed
/// greedily or with the evaluation smoothing.
pub fn simulate_policy(config: &PipelineConfig, policy: &QPolicy, n_episodes: usize, smoothed: bool) -> Result<PolicyValue> {
    policy.schema.ensure_same(&feature_schema(), "checkpoint")?;
    let smoothed_policy = SmoothedPolicy { policy, smoothing: config.ope.smoothing };
    let deployed: &dyn DecisionPolicy = if smoothed { &smoothed_policy } else { policy };
    true_policy_value(
        deployed,
        &config.sim,
        n_episodes,
        config.train.gamma,
        &config.reward.prefs,
        config.ope.eval_seed,
    )
}

pub fn cmd_eval_sim(
    config: &PipelineConfig,
    checkpoint_path: &Path,
    out: &Path,
    format: ReportFormat,
    n_episodes: Option<usize>,
) -> Result<SimReport> {
    config.validate()?;
    let mut manifest = RunManifest::new("eval-sim", config.digest(), config.ope.eval_seed, unix_now());
    let checkpoint = read_checkpoint(checkpoint_path)?;
    let policy = checkpoint.policy()?;
    let n = n_episodes.unwrap_or(config.ope.eval_episodes);
    let value = simulate_policy(config, &policy, n, config.ope.smooth_ground_truth)?;
    let report = SimReport::new(&value, config.ope.eval_seed, config.ope.smooth_ground_truth);
    write_atomic(out, &rows_to_bytes(std::slice::from_ref(&report), format)?)?;
    manifest.inputs.push(checkpoint_path.display().to_string());
    finish(&mut manifest, out)?;
    Ok(report)
}
