//! On-disk formats: newline-delimited JSON datasets, JSON checkpoints and
//! reward-model files, CSV/JSON reports and run manifests.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::config::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::mdp::{Action, FeatureSchema, RewardVector, StateFeatures, Trajectory, Transition};
use crate::numerics::{Activation, DenseMatrix, MlpParams};
use crate::reward::{ClickFit, RewardSpec, SessionFit};
use crate::sim::{Dataset, Provenance};
use crate::trainer::{FeatureScaler, QPolicy, TrainConfig};

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("output path {} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_header(path: &Path, kind: &str, found_kind: &str, version: u32) -> Result<()> {
    if found_kind != kind {
        return Err(Error::format(path, format!("expected a {kind} file, found {found_kind}")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("format_version {version} is not supported (expected {FORMAT_VERSION})"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format_version: u32,
    kind: String,
    schema: FeatureSchema,
    provenance: Provenance,
    n_trajectories: usize,
    n_transitions: usize,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRecord {
    episode_id: u64,
    user_id: u64,
    t_k: f64,
    t_next: f64,
    state: Vec<f64>,
    next_state: Vec<f64>,
    action: Action,
    m_s: f64,
    m_c: f64,
    m_v: f64,
    propensity: f64,
    terminal: bool,
}

/// Dataset as newline-delimited JSON: a header line, then one transition per line.
pub fn dataset_to_string(dataset: &Dataset) -> String {
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        kind: "dataset".into(),
        schema: dataset.schema.clone(),
        provenance: dataset.provenance.clone(),
        n_trajectories: dataset.trajectories.len(),
        n_transitions: dataset.n_transitions(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for traj in &dataset.trajectories {
        for t in &traj.steps {
            let rec = TransitionRecord {
                episode_id: t.episode_id,
                user_id: traj.user_id,
                t_k: t.t_k,
                t_next: t.t_next,
                state: t.state.0.clone(),
                next_state: t.next_state.0.clone(),
                action: t.action,
                m_s: t.reward.m_s,
                m_c: t.reward.m_c,
                m_v: t.reward.m_v,
                propensity: t.behavior_propensity,
                terminal: t.terminal,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_atomic(path, dataset_to_string(dataset).as_bytes())
}

/// Reads a dataset file; consecutive records with the same `episode_id`
/// form one trajectory. Every trajectory is validated.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format(path, "missing header line"))?
        .map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader =
        serde_json::from_str(&first).map_err(|e| Error::format(path, format!("header: {e}")))?;
    check_header(path, "dataset", &header.kind, header.format_version)?;
    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(header.n_trajectories);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 2)))?;
        let t = Transition {
            state: StateFeatures(rec.state),
            action: rec.action,
            t_k: rec.t_k,
            t_next: rec.t_next,
            reward: RewardVector::new(rec.m_s, rec.m_c, rec.m_v),
            next_state: StateFeatures(rec.next_state),
            behavior_propensity: rec.propensity,
            episode_id: rec.episode_id,
            terminal: rec.terminal,
        };
        match trajectories.last_mut() {
            Some(traj) if traj.episode_id == rec.episode_id => traj.steps.push(t),
            _ => trajectories.push(Trajectory {
                episode_id: rec.episode_id,
                user_id: rec.user_id,
                steps: vec![t],
            }),
        }
    }
    let dataset = Dataset {
        schema: header.schema,
        trajectories,
        provenance: header.provenance,
    };
    if dataset.trajectories.len() != header.n_trajectories || dataset.n_transitions() != header.n_transitions {
        return Err(Error::format(
            path,
            format!(
                "header promises {} trajectories / {} transitions, file has {} / {}",
                header.n_trajectories,
                header.n_transitions,
                dataset.trajectories.len(),
                dataset.n_transitions()
            ),
        ));
    }
    dataset.validate()?;
    Ok(dataset)
}

/// Serialized Q-policy plus everything needed to reproduce its training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    /// Layer `i` weight matrix, `layer_dims[i] × layer_dims[i+1]`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub schema: FeatureSchema,
    pub scaler: FeatureScaler,
    pub reward_spec: RewardSpec,
    pub train_config: TrainConfig,
    pub config_digest: String,
}

impl Checkpoint {
    pub fn new(policy: &QPolicy, reward_spec: RewardSpec, train_config: TrainConfig, config_digest: String) -> Self {
        let p = &policy.params;
        Self {
            format_version: FORMAT_VERSION,
            kind: "checkpoint".into(),
            layer_dims: p.layer_dims().to_vec(),
            activation: p.activation(),
            weights: p.weights().iter().map(|w| w.as_slice().to_vec()).collect(),
            biases: p.biases().to_vec(),
            schema: policy.schema.clone(),
            scaler: policy.scaler.clone(),
            reward_spec,
            train_config,
            config_digest,
        }
    }

    pub fn policy(&self) -> Result<QPolicy> {
        if self.weights.len() + 1 != self.layer_dims.len() {
            return Err(Error::Dimension(format!(
                "{} weight matrices for {} layer dims",
                self.weights.len(),
                self.layer_dims.len()
            )));
        }
        let weights = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| DenseMatrix::new(self.layer_dims[i], self.layer_dims[i + 1], w.clone()))
            .collect::<Result<Vec<_>>>()?;
        let params = MlpParams::new(self.layer_dims.clone(), weights, self.biases.clone(), self.activation)?;
        QPolicy::new(params, self.schema.clone(), self.scaler.clone())
    }
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    bytes
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &to_json_bytes(checkpoint))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    check_header(path, "checkpoint", &ck.kind, ck.format_version)?;
    ck.policy()?;
    Ok(ck)
}

/// Fitted reward models with their diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardModelsFile {
    pub format_version: u32,
    pub kind: String,
    pub schema: FeatureSchema,
    pub click: ClickFit,
    pub session: SessionFit,
    pub config_digest: String,
}

pub fn write_models(path: &Path, models: &RewardModelsFile) -> Result<()> {
    write_atomic(path, &to_json_bytes(models))
}

pub fn read_models(path: &Path) -> Result<RewardModelsFile> {
    let m: RewardModelsFile = read_json(path)?;
    check_header(path, "reward_models", &m.kind, m.format_version)?;
    Ok(m)
}

/// Output encoding of tabular reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[derive(clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

/// CSV with a header row, or a JSON array of row objects.
pub fn rows_to_bytes<T: Serialize>(rows: &[T], format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => Ok(to_json_bytes(&rows)),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| Error::Data(format!("csv encoding: {e}")))?;
            }
            w.into_inner().map_err(|e| Error::Data(format!("csv encoding: {e}")))
        }
    }
}

/// CSV body with an explicit header, so empty tables still carry column names.
pub fn csv_with_header<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Data(format!("csv encoding: {e}")))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("csv encoding: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv encoding: {e}")))
}

/// Provenance record written next to every output as `<output>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub stage: String,
    pub toolkit_version: String,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(stage: &str, config_digest: String, seed: u64, started_at: f64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            stage: stage.into(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            config_digest,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at,
            finished_at: started_at,
        }
    }

    /// Sibling path `<primary output>.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn write_next_to(&mut self, output: &Path) -> Result<PathBuf> {
        self.finished_at = unix_now();
        let path = Self::path_for(output);
        write_atomic(&path, &to_json_bytes(self))?;
        Ok(path)
    }
}

/// `dir/stem.suffix` next to `path`, for secondary outputs.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    let mut name = stem;
    name.push(suffix);
    path.with_file_name(name)
}
