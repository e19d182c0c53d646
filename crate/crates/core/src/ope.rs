//! Importance-sampling off-policy evaluation.
//!
//! All three estimators average over logged trajectories `i` and discount
//! each reward by `γ^(t_{k+1} − t_0)` from the trajectory's first decision:
//!
//! * trajectory IS weights the whole return by `Π_k ρ_k`,
//! * per-decision IS weights reward `k` by `Π_{k'≤k} ρ_k'`,
//! * one-step IS weights reward `k` by `ρ_k` alone (biased, low variance),
//!
//! where `ρ_k = π(a_k|s_k) / π_β(a_k|s_k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{check_gamma, scalarize, PreferenceVector, Trajectory};
use crate::sim::Dataset;
use crate::trainer::{policy_propensity, QPolicy, Smoothing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    TrajectoryIs,
    PerDecisionIs,
    OneStepIs,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::TrajectoryIs => "trajectory_is",
            EstimatorKind::PerDecisionIs => "per_decision_is",
            EstimatorKind::OneStepIs => "one_step_is",
        })
    }
}

/// Shape of the importance-weight distribution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub max_weight: f64,
    pub mean_weight: f64,
    pub weight_variance: f64,
    /// Share of the total weight held by the largest 1% of weights.
    pub top1pct_mass: f64,
}

impl WeightDiagnostics {
    pub fn from_weights(weights: &[f64]) -> Self {
        if weights.is_empty() {
            return Self::default();
        }
        let n = weights.len() as f64;
        let total: f64 = weights.iter().sum();
        let mean = total / n;
        let var = weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = weights.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let top = (weights.len() as f64 * 0.01).ceil() as usize;
        let top_mass: f64 = sorted[..top].iter().sum();
        Self {
            max_weight: sorted[0],
            mean_weight: mean,
            weight_variance: var,
            top1pct_mass: if total > 0.0 { top_mass / total } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeEstimate {
    pub estimator_kind: EstimatorKind,
    pub value: f64,
    /// Sample standard deviation of per-trajectory terms over `√n_trajectories`.
    pub stderr: f64,
    pub effective_sample_size: f64,
    /// Number of importance weights: trajectories for trajectory IS,
    /// transitions otherwise.
    pub n_units: usize,
    pub n_trajectories: usize,
    /// Weighted average with weights normalized to their sum; a diagnostic,
    /// not the estimate.
    pub self_normalized_value: f64,
    pub diagnostics: WeightDiagnostics,
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Data("importance weights must be finite and >= 0".into()));
    }
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        return Err(Error::Support("all importance weights are zero".into()));
    }
    Ok(s * s / s2)
}

fn check_inputs(trajectories: &[Trajectory], rewards: &[Vec<f64>], target_probs: &[Vec<f64>]) -> Result<()> {
    if rewards.len() != trajectories.len() || target_probs.len() != trajectories.len() {
        return Err(Error::Dimension(format!(
            "{} trajectories, {} reward rows, {} target-probability rows",
            trajectories.len(),
            rewards.len(),
            target_probs.len()
        )));
    }
    if trajectories.is_empty() {
        return Err(Error::Empty("no trajectories to evaluate".into()));
    }
    let mut unsupported = 0usize;
    for ((traj, r), p) in trajectories.iter().zip(rewards).zip(target_probs) {
        if r.len() != traj.len() || p.len() != traj.len() {
            return Err(Error::Dimension(format!(
                "episode {}: {} steps but {} rewards and {} target probabilities",
                traj.episode_id,
                traj.len(),
                r.len(),
                p.len()
            )));
        }
        if let Some(v) = r.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("reward {v} in episode {}", traj.episode_id)));
        }
        if let Some(v) = p.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Data(format!("target probability {v} in episode {}", traj.episode_id)));
        }
        unsupported += traj
            .steps
            .iter()
            .filter(|s| !(s.behavior_propensity > 0.0 && s.behavior_propensity <= 1.0))
            .count();
    }
    if unsupported > 0 {
        return Err(Error::Support(format!(
            "{unsupported} transitions have a behavior propensity outside (0, 1]"
        )));
    }
    Ok(())
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

/// `(weight, discounted reward)` pairs of one trajectory under `kind`.
fn weighted_terms(kind: EstimatorKind, traj: &Trajectory, r: &[f64], p: &[f64], gamma: f64) -> Vec<(f64, f64)> {
    let discounts = traj.discount_factors(gamma);
    let mut cumulative = 1.0;
    let mut out = Vec::with_capacity(traj.len());
    for (k, s) in traj.steps.iter().enumerate() {
        let ratio = p[k] / s.behavior_propensity;
        cumulative *= ratio;
        let w = match kind {
            EstimatorKind::OneStepIs => ratio,
            _ => cumulative,
        };
        out.push((w, discounts[k] * r[k]));
    }
    out
}

fn estimate(
    kind: EstimatorKind,
    trajectories: &[Trajectory],
    rewards: &[Vec<f64>],
    target_probs: &[Vec<f64>],
    gamma: f64,
) -> Result<OpeEstimate> {
    check_gamma(gamma)?;
    check_inputs(trajectories, rewards, target_probs)?;
    let mut units = Vec::with_capacity(trajectories.len());
    let mut weights = Vec::new();
    let (mut sn_num, mut sn_den) = (0.0, 0.0);
    for ((traj, r), p) in trajectories.iter().zip(rewards).zip(target_probs) {
        let terms = weighted_terms(kind, traj, r, p, gamma);
        match kind {
            EstimatorKind::TrajectoryIs => {
                let w = terms.last().map_or(1.0, |t| t.0);
                let ret: f64 = terms.iter().map(|t| t.1).sum();
                units.push(w * ret);
                weights.push(w);
                sn_num += w * ret;
                sn_den += w;
            }
            _ => {
                units.push(terms.iter().map(|(w, g)| w * g).sum());
                for (w, g) in &terms {
                    weights.push(*w);
                    sn_num += w * g;
                    sn_den += w;
                }
            }
        }
    }
    let (value, stderr) = mean_and_stderr(&units);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{kind} estimate")));
    }
    let ess = effective_sample_size(&weights).unwrap_or(0.0);
    let self_normalized_value = match kind {
        EstimatorKind::TrajectoryIs if sn_den > 0.0 => sn_num / sn_den,
        // per-step weights normalized to sum to the number of trajectories
        _ if sn_den > 0.0 => sn_num / sn_den * weights.len() as f64 / trajectories.len() as f64,
        _ => 0.0,
    };
    Ok(OpeEstimate {
        estimator_kind: kind,
        value,
        stderr,
        effective_sample_size: ess,
        n_units: weights.len(),
        n_trajectories: trajectories.len(),
        self_normalized_value,
        diagnostics: WeightDiagnostics::from_weights(&weights),
    })
}

/// Full-trajectory importance sampling.
pub fn trajectory_is(trajectories: &[Trajectory], rewards: &[Vec<f64>], target_probs: &[Vec<f64>], gamma: f64) -> Result<OpeEstimate> {
    estimate(EstimatorKind::TrajectoryIs, trajectories, rewards, target_probs, gamma)
}

/// Per-decision importance sampling.
pub fn per_decision_is(trajectories: &[Trajectory], rewards: &[Vec<f64>], target_probs: &[Vec<f64>], gamma: f64) -> Result<OpeEstimate> {
    estimate(EstimatorKind::PerDecisionIs, trajectories, rewards, target_probs, gamma)
}

/// Importance sampling with one-step ratios.
pub fn one_step_is(trajectories: &[Trajectory], rewards: &[Vec<f64>], target_probs: &[Vec<f64>], gamma: f64) -> Result<OpeEstimate> {
    estimate(EstimatorKind::OneStepIs, trajectories, rewards, target_probs, gamma)
}

/// `π(a_k | s_k)` of every logged action under the smoothed policy.
pub fn target_propensities(dataset: &Dataset, policy: &QPolicy, smoothing: &Smoothing) -> Result<Vec<Vec<f64>>> {
    policy.schema.ensure_same(&dataset.schema, "checkpoint")?;
    smoothing.validate()?;
    dataset
        .trajectories
        .iter()
        .map(|traj| {
            traj.steps
                .iter()
                .map(|s| Ok(policy_propensity(policy, &s.state, smoothing)?[s.action.index()]))
                .collect()
        })
        .collect()
}

/// Per-metric one-step estimates used for policy selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimates {
    /// Expected sends per trajectory.
    pub volume: OpeEstimate,
    /// Expected visits per trajectory.
    pub sessions: OpeEstimate,
    /// Expected clicks per trajectory.
    pub clicks: OpeEstimate,
    /// Discounted scalarized return with the preference vector's weights.
    pub scalarized: OpeEstimate,
    /// `clicks / volume` of the estimates, when volume is positive.
    pub ctr_proxy: Option<f64>,
}

/// One-step estimates of per-trajectory volume, sessions and clicks
/// (undiscounted totals) and of the discounted scalarized return, given
/// target probabilities of the logged actions.
pub fn evaluate_with_probs(
    dataset: &Dataset,
    target_probs: &[Vec<f64>],
    prefs: &PreferenceVector,
    gamma: f64,
) -> Result<MetricEstimates> {
    prefs.validate()?;
    let component = |f: fn(&crate::mdp::RewardVector) -> f64| -> Vec<Vec<f64>> {
        dataset
            .trajectories
            .iter()
            .map(|t| t.steps.iter().map(|s| f(&s.reward)).collect())
            .collect()
    };
    let trajs = &dataset.trajectories;
    let volume = one_step_is(trajs, &component(|m| -m.m_v), target_probs, 1.0)?;
    let sessions = one_step_is(trajs, &component(|m| m.m_s), target_probs, 1.0)?;
    let clicks = one_step_is(trajs, &component(|m| m.m_c), target_probs, 1.0)?;
    let scalar: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| t.steps.iter().map(|s| scalarize(prefs, &s.reward)).collect())
        .collect();
    let scalarized = one_step_is(trajs, &scalar, target_probs, gamma)?;
    let ctr_proxy = (volume.value > 0.0).then(|| clicks.value / volume.value);
    Ok(MetricEstimates {
        volume,
        sessions,
        clicks,
        scalarized,
        ctr_proxy,
    })
}

/// [`evaluate_with_probs`] for a smoothed Q-policy.
pub fn evaluate_policy_metrics(
    dataset: &Dataset,
    policy: &QPolicy,
    smoothing: &Smoothing,
    prefs: &PreferenceVector,
    gamma: f64,
) -> Result<MetricEstimates> {
    let probs = target_propensities(dataset, policy, smoothing)?;
    evaluate_with_probs(dataset, &probs, prefs, gamma)
}

/// Target probabilities equal to the logged behavior propensities.
pub fn behavior_probs(dataset: &Dataset) -> Vec<Vec<f64>> {
    dataset
        .trajectories
        .iter()
        .map(|t| t.steps.iter().map(|s| s.behavior_propensity).collect())
        .collect()
}
