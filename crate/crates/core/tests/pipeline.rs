use std::path::{Path, PathBuf};

use notirl::mdp::Action;
use notirl::numerics::{Activation, MlpParams};
use notirl::pipeline::{
    cmd_eval_sim, cmd_evaluate, cmd_fit_reward_models, cmd_gen_data, cmd_sweep, cmd_train, read_checkpoint, read_dataset,
    read_models, write_checkpoint, Checkpoint, PipelineConfig, ReportFormat, RewardVariant, RunManifest, SweepSpec,
};
use notirl::reward::RewardSpec;
use notirl::sim::feature_schema;
use notirl::trainer::{FeatureScaler, QPolicy, TrainConfig};
use notirl::Error;
use tempfile::TempDir;

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.sim.n_users = 80;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 64;
    cfg.ope.eval_episodes = 200;
    cfg
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let w = Work::new();
    let mut cfg = small_config();
    cfg.reward.variant = RewardVariant::PredictedSessions;
    let ds = cmd_gen_data(&cfg, &w.path("data.ndjson")).unwrap();
    assert!(ds.n_transitions() > 0);
    assert!(RunManifest::path_for(&w.path("data.ndjson")).exists());

    let models = cmd_fit_reward_models(&cfg, &w.path("data.ndjson"), &w.path("models.json")).unwrap();
    assert_eq!(read_models(&w.path("models.json")).unwrap(), models);

    let ck = cmd_train(&cfg, &w.path("data.ndjson"), Some(&w.path("models.json")), &w.path("policy.json")).unwrap();
    assert!(ck.reward_spec.use_predicted_sessions);
    let losses = read(&w.path("policy.losses.csv"));
    let steps = (ds.n_transitions() / 64) * 2;
    assert_eq!(losses.lines().count(), steps + 1);
    assert_eq!(losses.lines().next().unwrap(), "step,loss,bellman,penalty,synced");
    assert_eq!(read(&w.path("policy.epochs.csv")).lines().count(), 3);

    let rows = cmd_evaluate(&cfg, &w.path("policy.json"), &w.path("data.ndjson"), &w.path("report.csv"), ReportFormat::Csv).unwrap();
    let metrics: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
    assert!(metrics.starts_with(&["volume", "sessions", "clicks"]));
    assert_eq!(rows.iter().filter(|r| r.metric == "scalarized").count(), 3);
    assert_eq!(read(&w.path("report.csv")).lines().count(), rows.len() + 1);

    let sim = cmd_eval_sim(&cfg, &w.path("policy.json"), &w.path("sim.json"), ReportFormat::Json, Some(50)).unwrap();
    assert_eq!(sim.n_episodes, 50);
    assert!(sim.volume_ci_low <= sim.volume && sim.volume <= sim.volume_ci_high);
    let manifest: serde_json::Value = serde_json::from_str(&read(&RunManifest::path_for(&w.path("sim.json")))).unwrap();
    assert_eq!(manifest["config_digest"], cfg.digest());
}

#[test]
fn missing_checkpoint_fails_without_output() {
    let w = Work::new();
    let cfg = small_config();
    cmd_gen_data(&cfg, &w.path("data.ndjson")).unwrap();
    let err = cmd_evaluate(&cfg, &w.path("nope.json"), &w.path("data.ndjson"), &w.path("report.csv"), ReportFormat::Csv).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
    assert_ne!(err.exit_code(), 0);
    assert!(!w.path("report.csv").exists());
    assert!(!RunManifest::path_for(&w.path("report.csv")).exists());
}

#[test]
fn zero_epochs_gives_header_only_loss_log() {
    let w = Work::new();
    let mut cfg = small_config();
    cfg.train.epochs = 0;
    cmd_gen_data(&cfg, &w.path("data.ndjson")).unwrap();
    cmd_train(&cfg, &w.path("data.ndjson"), None, &w.path("policy.json")).unwrap();
    assert_eq!(read(&w.path("policy.losses.csv")), "step,loss,bellman,penalty,synced\n");
    assert!(read_checkpoint(&w.path("policy.json")).is_ok());
}

#[test]
fn sweep_grid_has_one_row_per_cell_and_seed() {
    let w = Work::new();
    let mut cfg = small_config();
    cfg.train.epochs = 1;
    cfg.sweep = SweepSpec { w_s: vec![0.5, 1.0, 2.0, 4.0], replications: 10, ..SweepSpec::default() };
    cmd_gen_data(&cfg, &w.path("data.ndjson")).unwrap();
    let rows = cmd_sweep(&cfg, &w.path("data.ndjson"), &w.path("sweep.csv"), ReportFormat::Csv, Some(2)).unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r.status == "ok" && r.volume.is_some()));
    assert_eq!(rows[0].seed, cfg.train.seed);
    assert_eq!(rows[9].seed, cfg.train.seed + 9);
    assert_eq!(rows[10].w_s, 1.0);
    assert_eq!(read(&w.path("sweep.csv")).lines().count(), 41);

    // thread count does not change results
    let again = cmd_sweep(&cfg, &w.path("data.ndjson"), &w.path("sweep1.csv"), ReportFormat::Csv, Some(1)).unwrap();
    assert_eq!(rows, again);
}

#[test]
fn single_cell_sweep_matches_train_then_evaluate() {
    let w = Work::new();
    let cfg = small_config();
    cmd_gen_data(&cfg, &w.path("data.ndjson")).unwrap();
    let sweep = cmd_sweep(&cfg, &w.path("data.ndjson"), &w.path("sweep.json"), ReportFormat::Json, None).unwrap();
    assert_eq!(sweep.len(), 1);
    cmd_train(&cfg, &w.path("data.ndjson"), None, &w.path("policy.json")).unwrap();
    let rows = cmd_evaluate(&cfg, &w.path("policy.json"), &w.path("data.ndjson"), &w.path("report.csv"), ReportFormat::Csv).unwrap();
    let value = |metric: &str| rows.iter().find(|r| r.metric == metric).unwrap().value;
    assert_eq!(sweep[0].volume, Some(value("volume")));
    assert_eq!(sweep[0].sessions, Some(value("sessions")));
    assert_eq!(sweep[0].scalarized, Some(value("scalarized")));
}

#[test]
fn never_send_checkpoint_has_zero_simulated_volume() {
    let w = Work::new();
    let cfg = small_config();
    let schema = feature_schema();
    let mut params = MlpParams::zeros(&[schema.len(), 2], Activation::Relu).unwrap();
    let mut flat = params.flatten();
    let n = flat.len();
    flat[n - 2 + Action::NotSend.index()] = 1.0;
    params.set_flat(&flat).unwrap();
    let policy = QPolicy::new(params, schema.clone(), FeatureScaler::identity(schema.len())).unwrap();
    let ck = Checkpoint::new(&policy, RewardSpec::observed(cfg.reward.prefs), TrainConfig::default(), cfg.digest());
    write_checkpoint(&w.path("never.json"), &ck).unwrap();
    let report = cmd_eval_sim(&cfg, &w.path("never.json"), &w.path("sim.csv"), ReportFormat::Csv, Some(100)).unwrap();
    assert_eq!(report.volume, 0.0);
    assert_eq!(report.clicks, 0.0);
}

#[test]
fn dataset_file_round_trips() {
    let w = Work::new();
    let cfg = small_config();
    let ds = cmd_gen_data(&cfg, &w.path("data.ndjson")).unwrap();
    assert_eq!(read_dataset(&w.path("data.ndjson")).unwrap(), ds);
    let first = read(&w.path("data.ndjson")).lines().next().unwrap().to_string();
    let header: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(header["kind"], "dataset");
    assert_eq!(header["n_transitions"], ds.n_transitions());
}

#[test]
fn corrupt_dataset_is_a_format_error() {
    let w = Work::new();
    let cfg = small_config();
    cmd_gen_data(&cfg, &w.path("data.ndjson")).unwrap();
    let text = read(&w.path("data.ndjson"));
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"episode_id\": 0}";
    std::fs::write(w.path("bad.ndjson"), lines.join("\n")).unwrap();
    let err = read_dataset(&w.path("bad.ndjson")).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn empty_population_gives_header_only_dataset() {
    let w = Work::new();
    let mut cfg = small_config();
    cfg.sim.n_users = 0;
    let ds = cmd_gen_data(&cfg, &w.path("empty.ndjson")).unwrap();
    assert_eq!(ds.n_transitions(), 0);
    assert_eq!(read(&w.path("empty.ndjson")).lines().count(), 1);
    assert_eq!(read_dataset(&w.path("empty.ndjson")).unwrap(), ds);
}
