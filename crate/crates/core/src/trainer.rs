//! Offline Q-learning with a conservative penalty.
//!
//! The Bellman target is either the DQN target `r + γ^Δt·max_a Q(s',a;θ)` or
//! the double-DQN target `r + γ^Δt·Q(s', argmax_a Q(s',a;θ); θ⁻)`, with `Δt`
//! the elapsed hours between decisions and the bootstrap dropped on terminal
//! transitions. The training loss for a minibatch of size `B` is
//!
//! ```text
//! α·(1/B)Σ [logsumexp Q(s_i,·) − Q(s_i,a_i)] + ½·(1/B)Σ (Q(s_i,a_i) − Y_i)²
//! ```
//!
//! with targets `Y` held constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{check_gamma, Action, FeatureSchema, StateFeatures};
use crate::numerics::{logsumexp_nonempty, softmax, Activation, DenseMatrix, MlpGrads, MlpParams, OptKind, OptState};
use crate::sim::{DecisionContext, DecisionPolicy, Dataset};

/// Which bootstrap target the Bellman term regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Dqn,
    #[default]
    Ddqn,
}

/// Hyperparameters of one training run.
///
/// The run is fully determined by `seed`: network initialization draws from
/// `ChaCha8Rng::seed_from_u64(seed)` on stream 0 and minibatch indices from
/// the same seed on stream 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Discount per unit of elapsed time (per hour for logged data).
    pub gamma: f64,
    /// Weight of the conservative penalty; 0 gives plain (double) DQN.
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hard-copy the online network into the target network every this many steps.
    pub target_sync_every: usize,
    pub learning_rate: f64,
    pub optimizer: OptKind,
    pub momentum: f64,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub target_kind: TargetKind,
    /// Standardize features with dataset mean and standard deviation.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.02,
            batch_size: 128,
            epochs: 30,
            target_sync_every: 200,
            learning_rate: 0.01,
            optimizer: OptKind::Sgd,
            momentum: 0.9,
            hidden_dims: vec![64, 32],
            activation: Activation::Relu,
            target_kind: TargetKind::Ddqn,
            standardize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma).map_err(|_| Error::Config(format!("train.gamma must be in (0, 1], got {}", self.gamma)))?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("train.alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.target_sync_every == 0 {
            return Err(Error::Config("train.target_sync_every must be >= 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("train.hidden_dims entries must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("train.momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(Action::COUNT))
            .collect()
    }
}

/// Per-feature affine map `(x − mean) / scale` applied before the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    /// Mean and standard deviation of logged states; constant features get scale 1.
    pub fn fit(dataset: &Dataset) -> Self {
        let d = dataset.schema.len();
        let n = dataset.n_transitions();
        if n == 0 {
            return Self::identity(d);
        }
        let mut mean = vec![0.0; d];
        for t in dataset.transitions() {
            for (m, v) in mean.iter_mut().zip(t.state.values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for t in dataset.transitions() {
            for ((s, v), m) in var.iter_mut().zip(t.state.values()).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) / s;
        }
    }
}

/// Transitions in network-ready form: scaled states, actions, scalar
/// rewards, elapsed times and terminal flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: DenseMatrix,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub next_states: DenseMatrix,
    pub dt: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl Batch {
    /// Flattens `dataset` in trajectory order; `rewards[i][k]` is the scalar
    /// reward of step `k` of trajectory `i`.
    pub fn from_dataset(dataset: &Dataset, rewards: &[Vec<f64>], scaler: &FeatureScaler) -> Result<Self> {
        if rewards.len() != dataset.trajectories.len()
            || rewards.iter().zip(&dataset.trajectories).any(|(r, t)| r.len() != t.len())
        {
            return Err(Error::Dimension("reward layout does not match the dataset's trajectories".into()));
        }
        let d = dataset.schema.len();
        if scaler.width() != d {
            return Err(Error::Schema(format!("scaler has width {}, dataset schema {d}", scaler.width())));
        }
        let n = dataset.n_transitions();
        let mut states = DenseMatrix::zeros(n, d);
        let mut next_states = DenseMatrix::zeros(n, d);
        let mut batch = Self {
            states: DenseMatrix::zeros(0, d),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            next_states: DenseMatrix::zeros(0, d),
            dt: Vec::with_capacity(n),
            terminal: Vec::with_capacity(n),
        };
        for (i, (t, r)) in dataset.transitions().zip(rewards.iter().flatten()).enumerate() {
            if t.state.len() != d || t.next_state.len() != d {
                return Err(Error::Schema(format!(
                    "episode {} has a state of width {}, schema has {d}",
                    t.episode_id,
                    t.state.len()
                )));
            }
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("scalar reward of episode {}", t.episode_id)));
            }
            scaler.apply_into(t.state.values(), states.row_mut(i));
            scaler.apply_into(t.next_state.values(), next_states.row_mut(i));
            batch.actions.push(t.action);
            batch.rewards.push(*r);
            batch.dt.push(t.dt());
            batch.terminal.push(t.terminal);
        }
        batch.states = states;
        batch.next_states = next_states;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Rows `idx` (repeats allowed) as a new batch.
    pub fn gather(&self, idx: &[usize]) -> Self {
        let d = self.states.cols();
        let mut states = DenseMatrix::zeros(idx.len(), d);
        let mut next_states = DenseMatrix::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            states.row_mut(r).copy_from_slice(self.states.row(i));
            next_states.row_mut(r).copy_from_slice(self.next_states.row(i));
        }
        Self {
            states,
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states,
            dt: idx.iter().map(|&i| self.dt[i]).collect(),
            terminal: idx.iter().map(|&i| self.terminal[i]).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if self.states.rows() != n || self.next_states.rows() != n || self.rewards.len() != n
            || self.dt.len() != n || self.terminal.len() != n
        {
            return Err(Error::Dimension("batch columns have different lengths".into()));
        }
        if n == 0 {
            return Err(Error::Empty("batch has no transitions".into()));
        }
        Ok(())
    }
}

fn check_q(q: &DenseMatrix, what: &str) -> Result<()> {
    if let Some(i) = q.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} Q value at batch index {}", i / q.cols())));
    }
    Ok(())
}

/// Index of the larger Q value; ties go to `NOT_SEND`.
pub fn greedy_from_q(q: [f64; 2]) -> Action {
    if q[Action::Send.index()] > q[Action::NotSend.index()] {
        Action::Send
    } else {
        Action::NotSend
    }
}

fn row_pair(q: &DenseMatrix, i: usize) -> [f64; 2] {
    let r = q.row(i);
    [r[0], r[1]]
}

fn bootstrap(batch: &Batch, gamma: f64, i: usize, value: f64) -> f64 {
    if batch.terminal[i] {
        batch.rewards[i]
    } else {
        batch.rewards[i] + gamma.powf(batch.dt[i]) * value
    }
}

/// `r + γ^Δt · max_a Q(s', a; θ)` per transition.
pub fn dqn_target(batch: &Batch, q_params: &MlpParams, gamma: f64) -> Result<Vec<f64>> {
    batch.check()?;
    check_gamma(gamma)?;
    let q_next = q_params.forward(&batch.next_states)?;
    check_q(&q_next, "next-state")?;
    Ok((0..batch.len())
        .map(|i| {
            let q = row_pair(&q_next, i);
            bootstrap(batch, gamma, i, q[0].max(q[1]))
        })
        .collect())
}

/// `r + γ^Δt · Q(s', argmax_a Q(s', a; θ); θ⁻)` per transition.
pub fn ddqn_target(batch: &Batch, q_params: &MlpParams, target_params: &MlpParams, gamma: f64) -> Result<Vec<f64>> {
    batch.check()?;
    check_gamma(gamma)?;
    let q_online = q_params.forward(&batch.next_states)?;
    check_q(&q_online, "next-state")?;
    let q_target = target_params.forward(&batch.next_states)?;
    check_q(&q_target, "target-network")?;
    Ok((0..batch.len())
        .map(|i| {
            let a = greedy_from_q(row_pair(&q_online, i));
            bootstrap(batch, gamma, i, q_target.get(i, a.index()))
        })
        .collect())
}

/// `logsumexp(Q(s,·)) − Q(s, a_data)`.
pub fn cql_penalty(q_row: &[f64], logged_action: Action) -> f64 {
    logsumexp_nonempty(q_row) - q_row[logged_action.index()]
}

/// Loss value, its two components and the parameter gradient.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    /// `½·mean((Q(s,a) − Y)²)`.
    pub bellman: f64,
    /// `mean(logsumexp Q(s,·) − Q(s,a))`, before multiplying by α.
    pub penalty: f64,
    pub grads: MlpGrads,
}

/// Gradient of the loss with respect to the network outputs, plus the
/// per-row penalty and squared error. Exposed for analytic sign checks.
pub fn cql_output_grads(q: &DenseMatrix, actions: &[Action], targets: &[f64], alpha: f64) -> (DenseMatrix, Vec<f64>, Vec<f64>) {
    let b = actions.len() as f64;
    let mut grads = DenseMatrix::zeros(q.rows(), q.cols());
    let mut penalties = Vec::with_capacity(actions.len());
    let mut sq = Vec::with_capacity(actions.len());
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let row = q.row(i);
        let p = softmax(row);
        let g = grads.row_mut(i);
        for (j, pj) in p.iter().enumerate() {
            g[j] = alpha * pj / b;
        }
        let delta = row[a.index()] - y;
        g[a.index()] += (delta - alpha) / b;
        penalties.push(cql_penalty(row, a));
        sq.push(delta * delta);
    }
    (grads, penalties, sq)
}

/// The conservative loss against precomputed (constant) targets.
pub fn cql_loss_with_targets(batch: &Batch, q_params: &MlpParams, targets: &[f64], alpha: f64) -> Result<LossEval> {
    batch.check()?;
    if targets.len() != batch.len() {
        return Err(Error::Dimension(format!("{} targets for a batch of {}", targets.len(), batch.len())));
    }
    let trace = q_params.forward_trace(&batch.states)?;
    let q = trace.output();
    let (dq, penalties, sq) = cql_output_grads(q, &batch.actions, targets, alpha);
    if let Some(i) = (0..batch.len()).find(|&i| !(penalties[i].is_finite() && sq[i].is_finite())) {
        return Err(Error::NonFinite(format!("loss at batch index {i}")));
    }
    let b = batch.len() as f64;
    let penalty = penalties.iter().sum::<f64>() / b;
    let bellman = 0.5 * sq.iter().sum::<f64>() / b;
    let grads = q_params.backward_with_trace(&batch.states, &trace, &dq)?;
    Ok(LossEval {
        loss: alpha * penalty + bellman,
        bellman,
        penalty,
        grads,
    })
}

/// Targets from `config.target_kind`, then [`cql_loss_with_targets`].
pub fn cql_loss(batch: &Batch, q_params: &MlpParams, target_params: &MlpParams, config: &TrainConfig) -> Result<LossEval> {
    let targets = match config.target_kind {
        TargetKind::Dqn => dqn_target(batch, q_params, config.gamma)?,
        TargetKind::Ddqn => ddqn_target(batch, q_params, target_params, config.gamma)?,
    };
    cql_loss_with_targets(batch, q_params, &targets, config.alpha)
}

/// How a greedy Q-policy is turned into a stochastic one for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Smoothing {
    /// `1 − ε + ε/2` on the greedy action, `ε/2` on the other.
    EpsilonGreedy { epsilon: f64 },
    /// `softmax(Q / τ)`.
    Softmax { temperature: f64 },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::EpsilonGreedy { epsilon: 0.05 }
    }
}

impl Smoothing {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Smoothing::EpsilonGreedy { epsilon } if !(epsilon > 0.0 && epsilon <= 1.0) => Err(Error::Support(format!(
                "evaluation epsilon must be in (0, 1] so every action keeps support, got {epsilon}"
            ))),
            Smoothing::Softmax { temperature } if !(temperature > 0.0 && temperature.is_finite()) => {
                Err(Error::Config(format!("softmax temperature must be > 0, got {temperature}")))
            }
            _ => Ok(()),
        }
    }

    /// Action distribution for a row of Q values.
    pub fn probs(&self, q: [f64; 2]) -> [f64; 2] {
        match *self {
            Smoothing::EpsilonGreedy { epsilon } => {
                let best = greedy_from_q(q);
                Action::ALL.map(|a| crate::sim::epsilon_greedy_propensity(best, a, epsilon))
            }
            Smoothing::Softmax { temperature } => {
                let p = softmax(&[q[0] / temperature, q[1] / temperature]);
                [p[0], p[1]]
            }
        }
    }
}

/// A trained Q-network together with its input schema and feature scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPolicy {
    pub params: MlpParams,
    pub schema: FeatureSchema,
    pub scaler: FeatureScaler,
}

impl QPolicy {
    pub fn new(params: MlpParams, schema: FeatureSchema, scaler: FeatureScaler) -> Result<Self> {
        if params.output_dim() != Action::COUNT {
            return Err(Error::Dimension(format!("Q-network must have {} outputs, has {}", Action::COUNT, params.output_dim())));
        }
        if params.input_dim() != schema.len() || scaler.width() != schema.len() {
            return Err(Error::Schema(format!(
                "network input {} / scaler width {} do not match schema width {}",
                params.input_dim(),
                scaler.width(),
                schema.len()
            )));
        }
        Ok(Self { params, schema, scaler })
    }

    pub fn q_values(&self, s: &StateFeatures) -> Result<[f64; 2]> {
        if s.len() != self.schema.len() {
            return Err(Error::Schema(format!("state has {} features, policy schema has {}", s.len(), self.schema.len())));
        }
        let mut x = vec![0.0; s.len()];
        self.scaler.apply_into(s.values(), &mut x);
        let q = self.params.forward_one(&x)?;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q value of policy".into()));
        }
        Ok([q[0], q[1]])
    }
}

/// `argmax_a Q(s, a)`, ties to `NOT_SEND`.
pub fn greedy_action(policy: &QPolicy, s: &StateFeatures) -> Result<Action> {
    Ok(greedy_from_q(policy.q_values(s)?))
}

/// Smoothed action distribution of `policy` at `s`.
pub fn policy_propensity(policy: &QPolicy, s: &StateFeatures, smoothing: &Smoothing) -> Result<[f64; 2]> {
    smoothing.validate()?;
    Ok(smoothing.probs(policy.q_values(s)?))
}

impl DecisionPolicy for QPolicy {
    fn action_probs(&self, ctx: &DecisionContext<'_>) -> Result<[f64; 2]> {
        let mut p = [0.0; 2];
        p[greedy_action(self, ctx.state)?.index()] = 1.0;
        Ok(p)
    }

    fn describe(&self) -> String {
        format!("greedy Q-network {:?}", self.params.layer_dims())
    }
}

/// A Q-policy deployed with smoothing, as evaluated off-policy.
pub struct SmoothedPolicy<'a> {
    pub policy: &'a QPolicy,
    pub smoothing: Smoothing,
}

impl DecisionPolicy for SmoothedPolicy<'_> {
    fn action_probs(&self, ctx: &DecisionContext<'_>) -> Result<[f64; 2]> {
        policy_propensity(self.policy, ctx.state, &self.smoothing)
    }

    fn describe(&self) -> String {
        format!("{} with {:?}", self.policy.describe(), self.smoothing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub bellman: f64,
    pub penalty: f64,
    pub synced: bool,
}

/// Full-dataset diagnostics after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_q_data: f64,
    pub mean_logsumexp: f64,
    pub mean_max_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub total_steps: usize,
    pub steps_per_epoch: usize,
    pub target_syncs: usize,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// `(mean Q(s,a_data), mean logsumexp Q(s,·), mean max_a Q(s,a))` over `data`.
pub fn q_diagnostics(params: &MlpParams, data: &Batch) -> Result<(f64, f64, f64)> {
    data.check()?;
    let q = params.forward(&data.states)?;
    check_q(&q, "dataset")?;
    let n = data.len() as f64;
    let (mut qd, mut lse, mut mx) = (0.0, 0.0, 0.0);
    for (i, a) in data.actions.iter().enumerate() {
        let row = q.row(i);
        qd += row[a.index()];
        lse += logsumexp_nonempty(row);
        mx += row[0].max(row[1]);
    }
    Ok((qd / n, lse / n, mx / n))
}

/// Rng streams used by a training run.
pub fn training_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = ChaCha8Rng::seed_from_u64(seed);
    batches.set_stream(1);
    (init, batches)
}

/// Step-by-step training state: online and target networks, optimizer and
/// minibatch rng.
pub struct Trainer {
    config: TrainConfig,
    data: Batch,
    schema: FeatureSchema,
    scaler: FeatureScaler,
    online: MlpParams,
    target: MlpParams,
    opt: OptState,
    rng: ChaCha8Rng,
    step: usize,
    steps_per_epoch: usize,
    total_steps: usize,
    syncs: usize,
}

impl Trainer {
    pub fn new(dataset: &Dataset, rewards: &[Vec<f64>], config: &TrainConfig) -> Result<Self> {
        let scaler = if config.standardize {
            FeatureScaler::fit(dataset)
        } else {
            FeatureScaler::identity(dataset.schema.len())
        };
        let data = Batch::from_dataset(dataset, rewards, &scaler)?;
        Self::from_batch(data, dataset.schema.clone(), scaler, config)
    }

    pub fn from_batch(data: Batch, schema: FeatureSchema, scaler: FeatureScaler, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.states.cols() != schema.len() {
            return Err(Error::Schema(format!("batch width {} vs schema {}", data.states.cols(), schema.len())));
        }
        if data.len() < config.batch_size {
            return Err(Error::Data(format!(
                "dataset has {} transitions, fewer than batch_size {}",
                data.len(),
                config.batch_size
            )));
        }
        let (mut init_rng, rng) = training_rngs(config.seed);
        let online = MlpParams::init(&config.layer_dims(schema.len()), config.activation, &mut init_rng)?;
        let target = online.clone();
        let opt = OptState::new(config.optimizer, config.learning_rate, config.momentum, &online)?;
        let steps_per_epoch = data.len() / config.batch_size;
        Ok(Self {
            config: config.clone(),
            data,
            schema,
            scaler,
            online,
            target,
            opt,
            rng,
            step: 0,
            steps_per_epoch,
            total_steps: steps_per_epoch * config.epochs,
            syncs: 0,
        })
    }

    pub fn online(&self) -> &MlpParams {
        &self.online
    }

    pub fn target(&self) -> &MlpParams {
        &self.target
    }

    pub fn data(&self) -> &Batch {
        &self.data
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// `floor(|D| / m) · E`.
    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    /// Draws the next minibatch's indices (uniform, with replacement).
    pub fn sample_indices(&mut self) -> Vec<usize> {
        let n = self.data.len();
        (0..self.config.batch_size).map(|_| self.rng.random_range(0..n)).collect()
    }

    /// One optimizer step, followed by a target sync when due.
    pub fn step(&mut self) -> Result<StepRecord> {
        let idx = self.sample_indices();
        let batch = self.data.gather(&idx);
        let step = self.step;
        let diverged = |e: Error| match e {
            Error::NonFinite(detail) => Error::Diverged { step, detail },
            other => other,
        };
        let eval = cql_loss(&batch, &self.online, &self.target, &self.config).map_err(diverged)?;
        if !eval.loss.is_finite() {
            return Err(Error::Diverged { step, detail: format!("loss {}", eval.loss) });
        }
        self.opt.step(&mut self.online, &eval.grads).map_err(diverged)?;
        self.step += 1;
        let synced = self.step.is_multiple_of(self.config.target_sync_every);
        if synced {
            self.target.copy_from(&self.online);
            self.syncs += 1;
        }
        Ok(StepRecord {
            step,
            loss: eval.loss,
            bellman: eval.bellman,
            penalty: eval.penalty,
            synced,
        })
    }

    pub fn policy(&self) -> Result<QPolicy> {
        QPolicy::new(self.online.clone(), self.schema.clone(), self.scaler.clone())
    }

    /// Runs all remaining steps.
    pub fn run(mut self) -> Result<(QPolicy, TrainReport)> {
        let mut steps = Vec::with_capacity(self.total_steps);
        let mut epochs = Vec::with_capacity(self.config.epochs);
        while self.step < self.total_steps {
            steps.push(self.step()?);
            if self.step.is_multiple_of(self.steps_per_epoch) {
                let (mean_q_data, mean_logsumexp, mean_max_q) = q_diagnostics(&self.online, &self.data)
                    .map_err(|e| Error::Diverged { step: self.step, detail: e.to_string() })?;
                epochs.push(EpochRecord {
                    epoch: self.step / self.steps_per_epoch,
                    mean_q_data,
                    mean_logsumexp,
                    mean_max_q,
                });
            }
        }
        let report = TrainReport {
            total_steps: self.total_steps,
            steps_per_epoch: self.steps_per_epoch,
            target_syncs: self.syncs,
            steps,
            epochs,
        };
        Ok((self.policy()?, report))
    }
}

/// Trains a Q-policy on `dataset` with per-step scalar `rewards`.
pub fn train(dataset: &Dataset, rewards: &[Vec<f64>], config: &TrainConfig) -> Result<(QPolicy, TrainReport)> {
    Trainer::new(dataset, rewards, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{RewardVector, Trajectory, Transition};
    use crate::sim::Provenance;
    use proptest::prelude::*;

    /// A 1-input linear network whose two outputs are `w·x + b`.
    fn linear_net(w: [f64; 2], b: [f64; 2]) -> MlpParams {
        MlpParams::new(
            vec![1, 2],
            vec![DenseMatrix::new(1, 2, w.to_vec()).unwrap()],
            vec![b.to_vec()],
            Activation::Relu,
        )
        .unwrap()
    }

    fn one_batch(s: f64, a: Action, r: f64, s_next: f64, dt: f64, terminal: bool) -> Batch {
        Batch {
            states: DenseMatrix::new(1, 1, vec![s]).unwrap(),
            actions: vec![a],
            rewards: vec![r],
            next_states: DenseMatrix::new(1, 1, vec![s_next]).unwrap(),
            dt: vec![dt],
            terminal: vec![terminal],
        }
    }

    #[test]
    fn dqn_target_examples() {
        // state 1 encodes Q = (2, 1): max is 2
        let net = linear_net([2.0, 1.0], [0.0, 0.0]);
        let b = one_batch(0.0, Action::Send, 1.0, 1.0, 1.0, false);
        assert_eq!(dqn_target(&b, &net, 0.5).unwrap(), vec![2.0]);
        let terminal = one_batch(0.0, Action::Send, 1.0, 1.0, 1.0, true);
        assert_eq!(dqn_target(&terminal, &net, 0.5).unwrap(), vec![1.0]);
        let zero = MlpParams::zeros(&[1, 2], Activation::Relu).unwrap();
        assert_eq!(dqn_target(&b, &zero, 0.5).unwrap(), vec![1.0]);
        // Δt = 2 hours squares the discount
        let b2 = one_batch(0.0, Action::Send, 1.0, 1.0, 2.0, false);
        assert_eq!(dqn_target(&b2, &net, 0.5).unwrap(), vec![1.5]);
    }

    #[test]
    fn ddqn_uses_online_argmax_and_target_value() {
        let online = linear_net([5.0, 4.0], [0.0, 0.0]);
        let target = linear_net([1.0, 9.0], [0.0, 0.0]);
        let b = one_batch(0.0, Action::NotSend, 0.5, 1.0, 1.0, false);
        assert_eq!(ddqn_target(&b, &online, &target, 0.9).unwrap(), vec![0.5 + 0.9 * 1.0]);
        assert_eq!(ddqn_target(&b, &online, &online, 0.9).unwrap(), dqn_target(&b, &online, 0.9).unwrap());
        let b3 = one_batch(0.0, Action::NotSend, 0.5, 1.0, 7.3, false);
        assert_eq!(ddqn_target(&b3, &online, &target, 1.0).unwrap(), vec![1.5]);
    }

    #[test]
    fn non_finite_q_is_an_error() {
        let net = linear_net([f64::MAX, 1.0], [f64::MAX, 0.0]);
        let b = one_batch(0.0, Action::Send, 1.0, 2.0, 1.0, false);
        assert!(matches!(dqn_target(&b, &net, 0.5), Err(Error::NonFinite(_))));
    }

    #[test]
    fn penalty_examples() {
        assert!((cql_penalty(&[0.0, 0.0], Action::Send) - 2f64.ln()).abs() < 1e-15);
        assert!((cql_penalty(&[1.0, 0.0], Action::Send) - 0.313_261_687_518_222_8).abs() < 1e-12);
        let p = cql_penalty(&[10.0, 0.0], Action::Send);
        assert!((p - 4.5398899e-5).abs() < 1e-10, "{p}");
    }

    #[test]
    fn loss_composition_on_zero_network() {
        let zero = MlpParams::zeros(&[1, 2], Activation::Relu).unwrap();
        let b = one_batch(0.3, Action::Send, 0.0, 0.0, 1.0, true);
        let eval = cql_loss_with_targets(&b, &zero, &[0.0], 0.7).unwrap();
        assert!((eval.loss - 0.7 * 2f64.ln()).abs() < 1e-15);
        let eval = cql_loss_with_targets(&b, &zero, &[2.0], 0.0).unwrap();
        assert_eq!(eval.loss, 2.0);
        assert_eq!(eval.bellman, 2.0);
    }

    #[test]
    fn greedy_and_smoothing_examples() {
        assert_eq!(greedy_from_q([2.0, 1.0]), Action::Send);
        assert_eq!(greedy_from_q([1.0, 1.0]), Action::NotSend);
        assert_eq!(Smoothing::EpsilonGreedy { epsilon: 1.0 }.probs([3.0, 0.0]), [0.5, 0.5]);
        assert_eq!(Smoothing::Softmax { temperature: 2.0 }.probs([1.0, 1.0]), [0.5, 0.5]);
        let p = Smoothing::Softmax { temperature: 1.0 }.probs([1.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15 && (p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!(matches!(Smoothing::EpsilonGreedy { epsilon: 0.0 }.validate(), Err(Error::Support(_))));
    }

    proptest! {
        #[test]
        fn greedy_is_shift_invariant(q0 in -50.0f64..50.0, q1 in -50.0f64..50.0, c in -1e3f64..1e3) {
            let shifted = greedy_from_q([q0 + c, q1 + c]);
            // shifting can only create ties through rounding, which resolve the same way
            if (q0 - q1).abs() > 1e-9 {
                prop_assert_eq!(shifted, greedy_from_q([q0, q1]));
            }
        }

        #[test]
        fn penalty_nonnegative(q0 in -30.0f64..30.0, q1 in -30.0f64..30.0, send in any::<bool>()) {
            let a = if send { Action::Send } else { Action::NotSend };
            prop_assert!(cql_penalty(&[q0, q1], a) >= 0.0);
        }

        #[test]
        fn penalty_gradient_signs(q0 in -10.0f64..10.0, q1 in -10.0f64..10.0, send in any::<bool>()) {
            let a = if send { Action::Send } else { Action::NotSend };
            let q = DenseMatrix::new(1, 2, vec![q0, q1]).unwrap();
            // zero Bellman contribution: target equals Q(s,a)
            let y = [q.get(0, a.index())];
            let (g, _, _) = cql_output_grads(&q, &[a], &y, 1.0);
            prop_assert!(g.get(0, a.other().index()) > 0.0);
            prop_assert!(g.get(0, a.index()) < 0.0);
        }
    }

    fn bandit_dataset(n: usize) -> (Dataset, Vec<Vec<f64>>) {
        let trajectories: Vec<Trajectory> = (0..n)
            .map(|i| {
                let action = if i % 2 == 0 { Action::Send } else { Action::NotSend };
                Trajectory {
                    episode_id: i as u64,
                    user_id: i as u64,
                    steps: vec![Transition {
                        state: StateFeatures(vec![1.0]),
                        action,
                        t_k: 0.0,
                        t_next: 1.0,
                        reward: RewardVector::new(0.0, 0.0, 0.0),
                        next_state: StateFeatures(vec![1.0]),
                        behavior_propensity: 0.5,
                        episode_id: i as u64,
                        terminal: false,
                    }],
                }
            })
            .collect();
        let rewards = trajectories
            .iter()
            .map(|t| vec![if t.steps[0].action == Action::Send { 1.0 } else { 0.0 }])
            .collect();
        let ds = Dataset {
            schema: FeatureSchema::new(["bias"]),
            trajectories,
            provenance: Provenance::default(),
        };
        (ds, rewards)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            gamma: 1e-12,
            alpha: 0.0,
            batch_size: 16,
            epochs: 20,
            target_sync_every: 10,
            learning_rate: 0.05,
            optimizer: OptKind::Sgd,
            momentum: 0.0,
            hidden_dims: vec![8],
            standardize: false,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn bandit_q_values_converge_to_rewards() {
        let (ds, rewards) = bandit_dataset(400);
        let (policy, report) = train(&ds, &rewards, &small_config()).unwrap();
        let q = policy.q_values(&StateFeatures(vec![1.0])).unwrap();
        assert!((q[Action::Send.index()] - 1.0).abs() < 0.05, "{q:?}");
        assert!(q[Action::NotSend.index()].abs() < 0.05, "{q:?}");
        assert_eq!(greedy_action(&policy, &StateFeatures(vec![1.0])).unwrap(), Action::Send);
        assert_eq!(report.total_steps, 25 * 20);
        assert_eq!(report.steps.len(), report.total_steps);
        assert_eq!(report.epochs.len(), 20);
        assert!(report.steps.iter().all(|s| s.loss.is_finite()));
    }

    /// Two-feature trajectories with irregular gaps and a terminal last step.
    fn chain_dataset() -> (Dataset, Vec<Vec<f64>>) {
        let mut trajectories = Vec::new();
        let mut rewards = Vec::new();
        for e in 0..12u64 {
            let mut steps = Vec::new();
            let mut r = Vec::new();
            let mut t = 0.0;
            for k in 0..5 {
                let x = |k: usize| StateFeatures(vec![k as f64 * 0.3, ((e + k as u64) % 3) as f64 - 1.0]);
                let dt = 0.5 + ((e as usize + k) % 4) as f64;
                let action = if (e as usize + k) % 3 == 0 { Action::Send } else { Action::NotSend };
                steps.push(Transition {
                    state: x(k),
                    action,
                    t_k: t,
                    t_next: t + dt,
                    reward: RewardVector::new(0.0, 0.0, 0.0),
                    next_state: x(k + 1),
                    behavior_propensity: 0.5,
                    episode_id: e,
                    terminal: k == 4,
                });
                r.push(if action == Action::Send { 1.0 - 0.2 * k as f64 } else { 0.1 * e as f64 });
                t += dt;
            }
            trajectories.push(Trajectory { episode_id: e, user_id: e, steps });
            rewards.push(r);
        }
        let ds = Dataset { schema: FeatureSchema::new(["a", "b"]), trajectories, provenance: Provenance::default() };
        (ds, rewards)
    }

    #[test]
    fn zero_alpha_matches_plain_double_dqn() {
        let (ds, rewards) = chain_dataset();
        let cfg = TrainConfig {
            gamma: 0.9,
            alpha: 0.0,
            batch_size: 8,
            epochs: 6,
            target_sync_every: 5,
            learning_rate: 0.03,
            optimizer: OptKind::Sgd,
            hidden_dims: vec![6, 4],
            activation: Activation::Tanh,
            standardize: false,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&ds, &rewards, &cfg).unwrap();

        let flat: Vec<&Transition> = ds.transitions().collect();
        let flat_rewards: Vec<f64> = rewards.iter().flatten().copied().collect();
        let (mut init_rng, mut batch_rng) = training_rngs(cfg.seed);
        let mut online = MlpParams::init(&cfg.layer_dims(2), cfg.activation, &mut init_rng).unwrap();
        let mut target = online.clone();
        for step in 0..trainer.total_steps() {
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| batch_rng.random_range(0..flat.len())).collect();
            let mut states = DenseMatrix::zeros(idx.len(), 2);
            let mut dq = DenseMatrix::zeros(idx.len(), 2);
            for (row, &i) in idx.iter().enumerate() {
                let t = flat[i];
                let q = online.forward_one(t.state.values()).unwrap();
                let y = if t.terminal {
                    flat_rewards[i]
                } else {
                    let next_online = online.forward_one(t.next_state.values()).unwrap();
                    let a = if next_online[0] > next_online[1] { 0 } else { 1 };
                    let next_target = target.forward_one(t.next_state.values()).unwrap();
                    flat_rewards[i] + cfg.gamma.powf(t.dt()) * next_target[a]
                };
                states.row_mut(row).copy_from_slice(t.state.values());
                dq.set(row, t.action.index(), (q[t.action.index()] - y) / idx.len() as f64);
            }
            let g = online.backward(&states, &dq).unwrap().flatten();
            let updated: Vec<f64> = online.flatten().iter().zip(&g).map(|(p, g)| p - cfg.learning_rate * g).collect();
            online.set_flat(&updated).unwrap();
            if (step + 1) % cfg.target_sync_every == 0 {
                target = online.clone();
            }

            trainer.step().unwrap();
            let diff = trainer.online().flatten().iter().zip(online.flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "step {step}: parameters differ by {diff}");
            assert_eq!(trainer.target(), &target, "step {step}");
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_network() {
        let (ds, rewards) = bandit_dataset(40);
        let cfg = TrainConfig { epochs: 0, ..small_config() };
        let (policy, report) = train(&ds, &rewards, &cfg).unwrap();
        let (mut rng, _) = training_rngs(cfg.seed);
        let init = MlpParams::init(&cfg.layer_dims(1), cfg.activation, &mut rng).unwrap();
        assert_eq!(policy.params, init);
        assert!(report.steps.is_empty());
    }

    #[test]
    fn batch_larger_than_dataset_rejected() {
        let (ds, rewards) = bandit_dataset(4);
        assert!(matches!(train(&ds, &rewards, &small_config()), Err(Error::Data(_))));
    }

    #[test]
    fn target_network_only_changes_at_syncs() {
        let (ds, rewards) = bandit_dataset(64);
        let cfg = TrainConfig { target_sync_every: 3, ..small_config() };
        let mut tr = Trainer::new(&ds, &rewards, &cfg).unwrap();
        assert_eq!(tr.online(), tr.target());
        for _ in 0..12 {
            let before = tr.target().clone();
            let rec = tr.step().unwrap();
            if rec.synced {
                assert_eq!(tr.online(), tr.target());
                assert_eq!(tr.steps_done() % 3, 0);
            } else {
                assert_eq!(&before, tr.target());
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, rewards) = bandit_dataset(64);
        let cfg = TrainConfig { alpha: 0.5, ..small_config() };
        let a = train(&ds, &rewards, &cfg).unwrap();
        let b = train(&ds, &rewards, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_reports_step() {
        let (ds, rewards) = bandit_dataset(64);
        let cfg = TrainConfig { learning_rate: 1e6, gamma: 1.0, ..small_config() };
        match train(&ds, &rewards, &cfg) {
            Err(Error::Diverged { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reward_layout_mismatch_rejected() {
        let (ds, mut rewards) = bandit_dataset(20);
        rewards.pop();
        assert!(matches!(train(&ds, &rewards, &small_config()), Err(Error::Dimension(_))));
    }
}
