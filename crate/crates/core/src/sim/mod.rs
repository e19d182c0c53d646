//! Stochastic notification environment.
//!
//! Users receive candidates at random times, respond to sends with clicks and
//! short-lived visit boosts, and accumulate a latent fatigue that suppresses
//! clicks and organic visits over the following days. Logged datasets are
//! produced under an epsilon-greedy wrapping of a baseline policy, and
//! Monte-Carlo rollouts give ground-truth policy values.

mod config;
mod episode;
mod metrics;
mod policy;
mod user;

pub use config::{ArrivalProcess, BaselineConfig, DynamicsConfig, PopulationConfig, SimConfig};
pub use episode::{
    click_probability, feature_schema, simulate_episode, EventLog, SendEvent, FEATURE_NAMES, HOURS_CAP,
};
pub use metrics::{compute_metrics, session_count, Metrics, Period, SESSION_GAP_MINUTES};
pub use policy::{
    epsilon_greedy_propensity, moo_baseline_decide, DecisionContext, DecisionPolicy, EpsilonGreedy,
    FixedPolicy, MooBaseline, UniformPolicy,
};
pub use user::{sample_user, UserModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{discounted_return, scalarize, validate_trajectory, Action, FeatureSchema, PreferenceVector, Trajectory, Transition};

/// Independent rng stream for episode `index` under `seed`.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// Digest of the configuration that produced the data.
    pub config_digest: String,
    pub behavior_policy: String,
    pub seed: u64,
}

/// A logged offline dataset: one trajectory per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub trajectories: Vec<Trajectory>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.steps.iter())
    }

    pub fn count_action(&self, action: Action) -> usize {
        self.transitions().filter(|t| t.action == action).count()
    }

    /// Checks every trajectory invariant plus schema width and full support.
    pub fn validate(&self) -> Result<()> {
        for traj in &self.trajectories {
            if let Some(v) = validate_trajectory(traj).first() {
                return Err(Error::Data(format!("episode {}: {v}", traj.episode_id)));
            }
            if let Some(s) = traj.steps.iter().find(|s| s.state.len() != self.schema.len()) {
                return Err(Error::Schema(format!(
                    "episode {} has {} features, schema has {}",
                    s.episode_id,
                    s.state.len(),
                    self.schema.len()
                )));
            }
        }
        Ok(())
    }
}

/// Simulates `config.n_users` episodes under `policy`, one rng stream per user.
pub fn simulate_population(
    config: &SimConfig,
    policy: &dyn DecisionPolicy,
    seed: u64,
    n_users: usize,
) -> Result<Vec<(Trajectory, EventLog)>> {
    config.validate()?;
    (0..n_users as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = episode_rng(seed, i);
            let user = sample_user(config, &mut rng);
            simulate_episode(&user, policy, config, i, &mut rng)
        })
        .collect()
}

/// Logs one trajectory per user under epsilon-greedy exploration around
/// `base_policy`. Users who received no candidates are omitted.
pub fn generate_dataset(config: &SimConfig, base_policy: &dyn DecisionPolicy) -> Result<Dataset> {
    config.validate()?;
    if config.epsilon <= 0.0 {
        return Err(Error::Config(
            "sim.epsilon must be > 0 so every action has logged support".into(),
        ));
    }
    let behavior = EpsilonGreedy::new(PolicyRef(base_policy), config.epsilon)?;
    let episodes = simulate_population(config, &behavior, config.rng_seed, config.n_users)?;
    Ok(Dataset {
        schema: feature_schema(),
        trajectories: episodes
            .into_iter()
            .map(|(t, _)| t)
            .filter(|t| !t.is_empty())
            .collect(),
        provenance: Provenance {
            config_digest: String::new(),
            behavior_policy: behavior.describe(),
            seed: config.rng_seed,
        },
    })
}

/// The configured MOO baseline rule.
pub fn baseline_policy(config: &SimConfig) -> MooBaseline {
    MooBaseline {
        beta: config.baseline.beta,
        lambda: config.baseline.lambda,
    }
}

struct PolicyRef<'a>(&'a dyn DecisionPolicy);

impl DecisionPolicy for PolicyRef<'_> {
    fn action_probs(&self, ctx: &DecisionContext<'_>) -> Result<[f64; 2]> {
        self.0.action_probs(ctx)
    }

    fn describe(&self) -> String {
        self.0.describe()
    }
}

/// Monte-Carlo estimate of a policy's value on the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub n_episodes: usize,
    /// Mean discounted scalarized return per episode.
    pub mean_return: f64,
    pub stderr: f64,
    /// Per-episode means.
    pub visits: f64,
    pub visits_stderr: f64,
    pub sessions: f64,
    pub volume: f64,
    pub volume_stderr: f64,
    pub clicks: f64,
    pub ctr: Option<f64>,
    /// Fraction of users with at least one session in the first week.
    pub wau_rate: f64,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ground-truth value of `policy`: the mean over `n_episodes` simulated
/// users of the discounted return `Σ gamma^(t_{k+1}-t_0) ω·m_k`, plus
/// per-episode metric means.
pub fn true_policy_value(
    policy: &dyn DecisionPolicy,
    config: &SimConfig,
    n_episodes: usize,
    gamma: f64,
    prefs: &PreferenceVector,
    seed: u64,
) -> Result<PolicyValue> {
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be >= 1".into()));
    }
    prefs.validate()?;
    let episodes = simulate_population(config, policy, seed, n_episodes)?;
    let mut returns = Vec::with_capacity(n_episodes);
    let mut visits = Vec::with_capacity(n_episodes);
    let mut volume = Vec::with_capacity(n_episodes);
    let mut clicks = 0.0;
    let mut logs = Vec::with_capacity(n_episodes);
    for (traj, log) in episodes {
        let rewards: Vec<f64> = traj.steps.iter().map(|s| scalarize(prefs, &s.reward)).collect();
        returns.push(discounted_return(&traj, gamma, &rewards)?);
        visits.push(traj.steps.iter().map(|s| s.reward.m_s).sum());
        volume.push(log.sends.len() as f64);
        clicks += log.clicks().count() as f64;
        logs.push(log);
    }
    let (mean_return, stderr) = mean_and_stderr(&returns);
    let (visits_mean, visits_stderr) = mean_and_stderr(&visits);
    let (volume_mean, volume_stderr) = mean_and_stderr(&volume);
    let n = n_episodes as f64;
    let all = compute_metrics(&logs, Period { start: 0.0, end: config.horizon_hours() })?;
    let week = compute_metrics(&logs, Period::week(0.0))?;
    Ok(PolicyValue {
        n_episodes,
        mean_return,
        stderr,
        visits: visits_mean,
        visits_stderr,
        sessions: all.sessions as f64 / n,
        volume: volume_mean,
        volume_stderr,
        clicks: clicks / n,
        ctr: all.ctr,
        wau_rate: week.wau as f64 / n,
    })
}
