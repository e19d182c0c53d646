//! One user's week: candidate arrivals, send decisions and responses.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use super::config::{ArrivalProcess, DynamicsConfig, SimConfig};
use super::policy::{check_distribution, DecisionContext, DecisionPolicy};
use super::user::UserModel;
use crate::error::{Error, Result};
use crate::mdp::{Action, FeatureSchema, RewardVector, StateFeatures, Trajectory, Transition};

/// Cap applied to the "hours since" features.
pub const HOURS_CAP: f64 = 336.0;

pub const FEATURE_NAMES: [&str; 9] = [
    "badge_count",
    "hours_since_last_visit",
    "sends_past_day",
    "sends_past_week",
    "candidate_quality_score",
    "hours_since_last_send",
    "visits_past_day",
    "profile_visit_rate",
    "profile_click_affinity",
];

pub fn feature_schema() -> FeatureSchema {
    FeatureSchema::new(FEATURE_NAMES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SendEvent {
    pub time: f64,
    /// Decision step within the episode.
    pub step: usize,
    pub click_time: Option<f64>,
}

/// Everything observable that happened to one user during an episode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub user_id: u64,
    pub horizon: f64,
    /// Sorted visit times in hours.
    pub visits: Vec<f64>,
    pub sends: Vec<SendEvent>,
}

impl EventLog {
    pub fn clicks(&self) -> impl Iterator<Item = f64> + '_ {
        self.sends.iter().filter_map(|s| s.click_time)
    }
}

/// Click probability for a candidate of `quality` at fatigue `fatigue`.
///
/// Non-increasing in fatigue.
pub fn click_probability(dynamics: &DynamicsConfig, user: &UserModel, quality: f64, fatigue: f64) -> f64 {
    let logit = dynamics.click_intercept + dynamics.click_quality_weight * quality + user.click_affinity
        - dynamics.click_fatigue_weight * fatigue;
    let p = 1.0 / (1.0 + (-logit).exp());
    p * disable_factor(dynamics, user, fatigue)
}

fn disable_factor(dynamics: &DynamicsConfig, user: &UserModel, fatigue: f64) -> f64 {
    if fatigue > user.disable_threshold {
        dynamics.disable_response_factor
    } else {
        1.0
    }
}

fn visit_suppression(dynamics: &DynamicsConfig, user: &UserModel, fatigue: f64) -> f64 {
    (-dynamics.visit_fatigue_weight * fatigue).exp() * disable_factor(dynamics, user, fatigue)
}

/// Mutable latent state of the user during an episode.
struct LiveUser<'a> {
    user: &'a UserModel,
    dynamics: &'a DynamicsConfig,
    clock: f64,
    fatigue: f64,
    /// Extra visits per hour from recent sends, before suppression.
    boost: f64,
    last_visit: f64,
    visits: Vec<f64>,
    sends: Vec<SendEvent>,
}

impl<'a> LiveUser<'a> {
    fn fatigue_at(&self, t: f64) -> f64 {
        self.fatigue * 0.5f64.powf((t - self.clock) / self.dynamics.fatigue_half_life_hours)
    }

    fn boost_at(&self, t: f64) -> f64 {
        self.boost * (-(t - self.clock) / self.dynamics.boost_decay_hours).exp()
    }

    fn base_rate(&self) -> f64 {
        self.user.base_visit_rate / 24.0
    }

    fn visit_rate(&self, t: f64) -> f64 {
        (self.base_rate() + self.boost_at(t)) * visit_suppression(self.dynamics, self.user, self.fatigue_at(t))
    }

    fn record_visit(&mut self, t: f64) {
        self.visits.push(t);
        if t > self.last_visit {
            self.last_visit = t;
        }
    }

    /// Simulates visits in `(clock, to]` and moves the clock to `to`.
    fn advance<R: Rng + ?Sized>(&mut self, to: f64, rng: &mut R) -> u32 {
        let mut count = 0;
        // Thinning: the unsuppressed rate bounds the true rate and only
        // decays, so the bound at the current candidate time covers the rest.
        let mut t = self.clock;
        loop {
            let bound = self.base_rate() + self.boost_at(t);
            if bound <= 0.0 {
                break;
            }
            t += Exp::new(bound).expect("positive rate").sample(rng);
            if t > to {
                break;
            }
            if rng.random::<f64>() * bound < self.visit_rate(t) {
                self.record_visit(t);
                count += 1;
            }
        }
        let d = self.dynamics;
        if d.noise_burst_rate > 0.0 && d.noise_burst_visits > 0.0 {
            let gap = Exp::new(d.noise_burst_rate / 24.0).expect("positive rate");
            let size = Poisson::new(d.noise_burst_visits).expect("positive mean");
            let mut t = self.clock;
            loop {
                t += gap.sample(rng);
                if t > to {
                    break;
                }
                let n = size.sample(rng) as u32;
                for j in 0..n {
                    self.record_visit((t + j as f64 / 60.0).min(to));
                }
                count += n;
            }
        }
        self.fatigue = self.fatigue_at(to);
        self.boost = self.boost_at(to);
        self.clock = to;
        count
    }

    fn features(&self, t: f64, quality: f64) -> StateFeatures {
        let last_send = self.sends.last().map(|s| s.time);
        let badge = self.sends.iter().filter(|s| s.time > self.last_visit).count();
        let sends_within = |h: f64| self.sends.iter().filter(|s| s.time > t - h && s.time < t).count();
        let visits_day = self.visits.iter().filter(|&&v| v > t - 24.0 && v <= t).count();
        StateFeatures(vec![
            badge as f64,
            (t - self.last_visit).min(HOURS_CAP),
            sends_within(24.0) as f64,
            sends_within(168.0) as f64,
            quality,
            last_send.map_or(HOURS_CAP, |s| (t - s).min(HOURS_CAP)),
            visits_day as f64,
            self.user.base_visit_rate,
            self.user.click_affinity,
        ])
    }
}

fn arrival_times<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Vec<f64> {
    let horizon = config.horizon_hours();
    let per_hour = config.candidate_arrival_rate / 24.0;
    let mut out = Vec::new();
    match config.arrival_process {
        ArrivalProcess::Poisson => {
            let gap = Exp::new(per_hour).expect("validated rate");
            let mut t = 0.0;
            loop {
                t += gap.sample(rng);
                if t >= horizon {
                    break;
                }
                out.push(t);
            }
        }
        ArrivalProcess::Regular => {
            let spacing = 1.0 / per_hour;
            let mut t = spacing / 2.0;
            while t < horizon {
                out.push(t);
                t += spacing;
            }
        }
    }
    out
}

/// Simulates one episode under `policy`.
///
/// The logged propensity of each step is the probability `policy` assigned
/// to the sampled action. The final step's reward window ends at the horizon
/// and it is flagged terminal.
pub fn simulate_episode<R: Rng + ?Sized>(
    user: &UserModel,
    policy: &dyn DecisionPolicy,
    config: &SimConfig,
    user_id: u64,
    rng: &mut R,
) -> Result<(Trajectory, EventLog)> {
    let d = &config.dynamics;
    let horizon = config.horizon_hours();
    let arrivals = arrival_times(config, rng);
    let quality_dist = Beta::new(d.quality_alpha, d.quality_beta).expect("validated beta");
    let qualities: Vec<f64> = arrivals.iter().map(|_| quality_dist.sample(rng)).collect();

    let initial_gap = if user.base_visit_rate > 0.0 {
        Exp::new(user.base_visit_rate / 24.0).expect("positive").sample(rng).min(HOURS_CAP)
    } else {
        HOURS_CAP
    };
    let mut live = LiveUser {
        user,
        dynamics: d,
        clock: 0.0,
        fatigue: user.fatigue,
        boost: 0.0,
        last_visit: -initial_gap,
        visits: Vec::new(),
        sends: Vec::new(),
    };

    let mut steps = Vec::with_capacity(arrivals.len());
    if let Some(&first) = arrivals.first() {
        live.advance(first, rng);
    }
    let mut state = arrivals.first().map(|&t| live.features(t, qualities[0]));
    for (k, &t_k) in arrivals.iter().enumerate() {
        let s = state.take().expect("state computed for every arrival");
        let fatigue = live.fatigue_at(t_k);
        let p_click = click_probability(d, user, qualities[k], fatigue);
        let session_lift = user.notification_boost * visit_suppression(d, user, fatigue)
            + if d.click_visit { p_click } else { 0.0 };
        let ctx = DecisionContext {
            state: &s,
            p_click,
            session_lift,
        };
        let probs = check_distribution(policy.action_probs(&ctx)?)?;
        let action = if rng.random::<f64>() < probs[Action::Send.index()] {
            Action::Send
        } else {
            Action::NotSend
        };
        let propensity = probs[action.index()];
        let t_next = arrivals.get(k + 1).copied().unwrap_or(horizon);

        let mut visits = 0;
        let mut clicked = false;
        if action == Action::Send {
            clicked = rng.random::<f64>() < p_click;
            live.fatigue += d.fatigue_per_send;
            live.boost += user.notification_boost / d.boost_decay_hours;
            let click_time = clicked.then(|| t_k + d.click_visit_delay_hours.min((t_next - t_k) / 2.0));
            live.sends.push(SendEvent { time: t_k, step: k, click_time });
            if let (Some(ct), true) = (click_time, d.click_visit) {
                live.record_visit(ct);
                visits += 1;
            }
        }
        visits += live.advance(t_next, rng);

        let terminal = k + 1 == arrivals.len();
        let next_quality = if terminal { 0.0 } else { qualities[k + 1] };
        let next_state = live.features(t_next, next_quality);
        if next_state.values().iter().any(|v| !v.is_finite()) || !p_click.is_finite() {
            return Err(Error::NonFinite(format!(
                "simulator state for user {user_id} at step {k}"
            )));
        }
        steps.push(Transition {
            state: s,
            action,
            t_k,
            t_next,
            reward: RewardVector::for_action(action, visits, clicked),
            next_state: next_state.clone(),
            behavior_propensity: propensity,
            episode_id: user_id,
            terminal,
        });
        state = Some(next_state);
    }
    // visits after the last decision (or in an episode without candidates)
    if live.clock < horizon {
        live.advance(horizon, rng);
    }
    let mut visits = live.visits;
    visits.sort_by(f64::total_cmp);
    Ok((
        Trajectory {
            episode_id: user_id,
            user_id,
            steps,
        },
        EventLog {
            user_id,
            horizon,
            visits,
            sends: live.sends,
        },
    ))
}
