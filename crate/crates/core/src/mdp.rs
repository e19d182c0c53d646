//! States, actions, multi-component rewards, trajectories and
//! elapsed-time discounting.
//!
//! Timestamps are in hours and `gamma` is a per-hour discount factor: a reward
//! realized at `t_{k+1}` in an episode starting at `t_0` is weighted by
//! `gamma^(t_{k+1} - t_0)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Send decision for one notification candidate.
///
/// The Q-network output index follows declaration order: `Send` is 0,
/// `NotSend` is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "SEND")]
    Send,
    #[serde(rename = "NOT_SEND")]
    NotSend,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Send, Action::NotSend];
    pub const COUNT: usize = 2;

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Action::Send => 0,
            Action::NotSend => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn other(self) -> Action {
        match self {
            Action::Send => Action::NotSend,
            Action::NotSend => Action::Send,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Send => "SEND",
            Action::NotSend => "NOT_SEND",
        })
    }
}

/// Ordered feature names shared by every state in a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSchema(pub Vec<String>);

impl FeatureSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self(names.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn ensure_same(&self, other: &FeatureSchema, context: &str) -> Result<()> {
        if self != other {
            return Err(Error::Schema(format!(
                "{context}: feature schema {:?} does not match {:?}",
                self.0, other.0
            )));
        }
        Ok(())
    }
}

/// Feature vector for one decision point; its layout is given by the
/// dataset's [`FeatureSchema`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateFeatures(pub Vec<f64>);

impl StateFeatures {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Observed reward components of one decision step.
///
/// * `m_s`: site visits in `(t_k, t_{k+1}]`
/// * `m_c`: 1 if the notification sent at `t_k` was clicked
/// * `m_v`: −1 for a send, 0 otherwise (volume penalty)
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardVector {
    pub m_s: f64,
    pub m_c: f64,
    pub m_v: f64,
}

impl RewardVector {
    pub fn new(m_s: f64, m_c: f64, m_v: f64) -> Self {
        Self { m_s, m_c, m_v }
    }

    /// Rewards implied by an action with the given visit count and click flag.
    pub fn for_action(action: Action, visits: u32, clicked: bool) -> Self {
        match action {
            Action::Send => Self::new(visits as f64, if clicked { 1.0 } else { 0.0 }, -1.0),
            Action::NotSend => Self::new(visits as f64, 0.0, 0.0),
        }
    }
}

/// Linear preference weights over (sessions, clicks, volume).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceVector {
    pub w_s: f64,
    pub w_c: f64,
    pub w_v: f64,
}

impl PreferenceVector {
    pub fn new(w_s: f64, w_c: f64, w_v: f64) -> Result<Self> {
        let p = Self { w_s, w_c, w_v };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.w_s, self.w_c, self.w_v];
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("preference weights must be finite: {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("at least one preference weight must be nonzero".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w_s: self.w_s * c,
            w_c: self.w_c * c,
            w_v: self.w_v * c,
        }
    }
}

/// `ω·m = w_s·m_s + w_c·m_c + w_v·m_v`.
#[inline]
pub fn scalarize(prefs: &PreferenceVector, m: &RewardVector) -> f64 {
    prefs.w_s * m.m_s + prefs.w_c * m.m_c + prefs.w_v * m.m_v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: StateFeatures,
    pub action: Action,
    pub t_k: f64,
    pub t_next: f64,
    pub reward: RewardVector,
    pub next_state: StateFeatures,
    pub behavior_propensity: f64,
    pub episode_id: u64,
    pub terminal: bool,
}

impl Transition {
    /// Elapsed hours to the next decision point.
    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_next - self.t_k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: u64,
    pub user_id: u64,
    pub steps: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Decision time of the first step, the origin of the return's discounting.
    pub fn start_time(&self) -> Option<f64> {
        self.steps.first().map(|s| s.t_k)
    }

    /// `gamma^(t_{k+1} - t_0)` for every step.
    pub fn discount_factors(&self, gamma: f64) -> Vec<f64> {
        let t0 = self.start_time().unwrap_or(0.0);
        self.steps.iter().map(|s| gamma.powf(s.t_next - t0)).collect()
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must be in (0, 1], got {gamma}")));
    }
    Ok(())
}

/// `Σ_k gamma^(t_{k+1} − t_0) · r_k`.
pub fn discounted_return(traj: &Trajectory, gamma: f64, scalar_rewards: &[f64]) -> Result<f64> {
    check_gamma(gamma)?;
    if scalar_rewards.len() != traj.len() {
        return Err(Error::Dimension(format!(
            "episode {} has {} steps but {} rewards",
            traj.episode_id,
            traj.len(),
            scalar_rewards.len()
        )));
    }
    Ok(traj
        .discount_factors(gamma)
        .iter()
        .zip(scalar_rewards)
        .map(|(d, r)| d * r)
        .sum())
}

/// One broken invariant, located by step index.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub step: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Reports every broken transition/trajectory invariant. Empty means valid.
pub fn validate_trajectory(traj: &Trajectory) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |step: usize, message: String| out.push(Violation { step, message });
    let width = traj.steps.first().map(|s| s.state.len());
    for (k, s) in traj.steps.iter().enumerate() {
        if s.episode_id != traj.episode_id {
            push(k, format!("episode id {} differs from trajectory id {} at step {k}", s.episode_id, traj.episode_id));
        }
        if !(s.t_k.is_finite() && s.t_next.is_finite()) {
            push(k, format!("non-finite timestamp at step {k}"));
        } else if s.t_next <= s.t_k {
            push(k, format!("non-increasing timestamps at step {k}"));
        }
        if !(s.behavior_propensity > 0.0 && s.behavior_propensity <= 1.0) {
            push(k, format!("behavior propensity {} outside (0, 1] at step {k}", s.behavior_propensity));
        }
        for (name, st) in [("state", &s.state), ("next_state", &s.next_state)] {
            if Some(st.len()) != width {
                push(k, format!("{name} length {} differs from {} at step {k}", st.len(), width.unwrap_or(0)));
            }
            if st.values().iter().any(|v| !v.is_finite()) {
                push(k, format!("non-finite {name} feature at step {k}"));
            }
        }
        let r = &s.reward;
        if !(r.m_s >= 0.0 && r.m_s.is_finite()) {
            push(k, format!("negative or non-finite visit count {} at step {k}", r.m_s));
        }
        if r.m_c != 0.0 && r.m_c != 1.0 {
            push(k, format!("click reward {} not in {{0,1}} at step {k}", r.m_c));
        }
        if s.action == Action::NotSend && r.m_c != 0.0 {
            push(k, format!("click reward on NOT_SEND at step {k}"));
        }
        let want_v = if s.action == Action::Send { -1.0 } else { 0.0 };
        if r.m_v != want_v {
            push(k, format!("volume reward {} inconsistent with {} at step {k}", r.m_v, s.action));
        }
        if let Some(next) = traj.steps.get(k + 1) {
            if next.t_k <= s.t_k {
                push(k + 1, format!("decision times not strictly increasing at step {}", k + 1));
            }
            if s.next_state != next.state {
                push(k, format!("next_state of step {k} does not chain to state of step {}", k + 1));
            }
        }
    }
    out
}
