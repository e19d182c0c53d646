use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// Homogeneous Poisson arrivals at `candidate_arrival_rate` per day.
    #[default]
    Poisson,
    /// Evenly spaced arrivals, the first half a spacing after time zero.
    Regular,
}

/// Population distributions that users are drawn from.
///
/// Positive quantities use a gamma distribution parameterized by mean and
/// standard deviation; signed quantities use a normal. A zero standard
/// deviation pins every user to the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub base_visit_rate_mean: f64,
    pub base_visit_rate_sd: f64,
    pub click_affinity_mean: f64,
    pub click_affinity_sd: f64,
    pub initial_fatigue_mean: f64,
    pub initial_fatigue_sd: f64,
    pub notification_boost_mean: f64,
    pub notification_boost_sd: f64,
    pub disable_threshold_mean: f64,
    pub disable_threshold_sd: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            base_visit_rate_mean: 2.0,
            base_visit_rate_sd: 0.8,
            click_affinity_mean: 0.0,
            click_affinity_sd: 0.6,
            initial_fatigue_mean: 1.0,
            initial_fatigue_sd: 0.8,
            notification_boost_mean: 0.5,
            notification_boost_sd: 0.2,
            disable_threshold_mean: 5.0,
            disable_threshold_sd: 1.0,
        }
    }
}

/// Response dynamics shared by all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Fatigue added by each send.
    pub fatigue_per_send: f64,
    pub fatigue_half_life_hours: f64,
    /// Time constant of the exponentially decaying visit boost after a send.
    pub boost_decay_hours: f64,
    pub click_intercept: f64,
    pub click_quality_weight: f64,
    pub click_fatigue_weight: f64,
    /// Visit-rate suppression per unit fatigue, `exp(-w·fatigue)`.
    pub visit_fatigue_weight: f64,
    /// Multiplier on click probability and visit rate once fatigue exceeds
    /// the user's disable threshold.
    pub disable_response_factor: f64,
    /// A click produces a visit shortly after the send.
    pub click_visit: bool,
    pub click_visit_delay_hours: f64,
    /// Beta(a, b) distribution of candidate quality scores.
    pub quality_alpha: f64,
    pub quality_beta: f64,
    /// Action-independent bursts of visits, per day. Zero disables them.
    pub noise_burst_rate: f64,
    /// Mean number of visits in a noise burst.
    pub noise_burst_visits: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            fatigue_per_send: 1.0,
            fatigue_half_life_hours: 36.0,
            boost_decay_hours: 3.0,
            click_intercept: -2.0,
            click_quality_weight: 3.0,
            click_fatigue_weight: 0.35,
            visit_fatigue_weight: 0.08,
            disable_response_factor: 0.3,
            click_visit: true,
            click_visit_delay_hours: 0.05,
            quality_alpha: 2.0,
            quality_beta: 3.0,
            noise_burst_rate: 0.0,
            noise_burst_visits: 0.0,
        }
    }
}

impl DynamicsConfig {
    /// Switches off fatigue effects and the post-send visit boost.
    pub fn without_fatigue(mut self) -> Self {
        self.fatigue_per_send = 0.0;
        self.click_fatigue_weight = 0.0;
        self.visit_fatigue_weight = 0.0;
        self.disable_response_factor = 1.0;
        self
    }
}

/// Parameters of the MOO baseline send rule
/// (`SEND` iff `session_lift + beta·p_click > lambda`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub beta: f64,
    pub lambda: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            lambda: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_users: usize,
    pub horizon_days: f64,
    /// Candidates per day.
    pub candidate_arrival_rate: f64,
    pub arrival_process: ArrivalProcess,
    /// Exploration rate of the epsilon-greedy behavior policy.
    pub epsilon: f64,
    pub rng_seed: u64,
    pub population: PopulationConfig,
    pub dynamics: DynamicsConfig,
    pub baseline: BaselineConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_users: 1000,
            horizon_days: 7.0,
            candidate_arrival_rate: 4.0,
            arrival_process: ArrivalProcess::Poisson,
            epsilon: 0.3,
            rng_seed: 0,
            population: PopulationConfig::default(),
            dynamics: DynamicsConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("sim.{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("sim.{name} must be finite and > 0, got {v}")));
    }
    Ok(())
}

fn finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Config(format!("sim.{name} must be finite, got {v}")));
    }
    Ok(())
}

impl SimConfig {
    pub fn horizon_hours(&self) -> f64 {
        self.horizon_days * 24.0
    }

    pub fn validate(&self) -> Result<()> {
        positive("horizon_days", self.horizon_days)?;
        positive("candidate_arrival_rate", self.candidate_arrival_rate)?;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("sim.epsilon must be in [0, 1], got {}", self.epsilon)));
        }
        let p = &self.population;
        nonneg("population.base_visit_rate_mean", p.base_visit_rate_mean)?;
        nonneg("population.base_visit_rate_sd", p.base_visit_rate_sd)?;
        finite("population.click_affinity_mean", p.click_affinity_mean)?;
        nonneg("population.click_affinity_sd", p.click_affinity_sd)?;
        nonneg("population.initial_fatigue_mean", p.initial_fatigue_mean)?;
        nonneg("population.initial_fatigue_sd", p.initial_fatigue_sd)?;
        nonneg("population.notification_boost_mean", p.notification_boost_mean)?;
        nonneg("population.notification_boost_sd", p.notification_boost_sd)?;
        finite("population.disable_threshold_mean", p.disable_threshold_mean)?;
        nonneg("population.disable_threshold_sd", p.disable_threshold_sd)?;
        for (name, mean, sd) in [
            ("base_visit_rate", p.base_visit_rate_mean, p.base_visit_rate_sd),
            ("initial_fatigue", p.initial_fatigue_mean, p.initial_fatigue_sd),
            ("notification_boost", p.notification_boost_mean, p.notification_boost_sd),
        ] {
            if mean == 0.0 && sd > 0.0 {
                return Err(Error::Config(format!(
                    "sim.population.{name}: a zero mean needs a zero sd"
                )));
            }
        }
        let d = &self.dynamics;
        nonneg("dynamics.fatigue_per_send", d.fatigue_per_send)?;
        positive("dynamics.fatigue_half_life_hours", d.fatigue_half_life_hours)?;
        positive("dynamics.boost_decay_hours", d.boost_decay_hours)?;
        finite("dynamics.click_intercept", d.click_intercept)?;
        finite("dynamics.click_quality_weight", d.click_quality_weight)?;
        nonneg("dynamics.click_fatigue_weight", d.click_fatigue_weight)?;
        nonneg("dynamics.visit_fatigue_weight", d.visit_fatigue_weight)?;
        if !(d.disable_response_factor > 0.0 && d.disable_response_factor <= 1.0) {
            return Err(Error::Config(format!(
                "sim.dynamics.disable_response_factor must be in (0, 1], got {}",
                d.disable_response_factor
            )));
        }
        positive("dynamics.click_visit_delay_hours", d.click_visit_delay_hours)?;
        positive("dynamics.quality_alpha", d.quality_alpha)?;
        positive("dynamics.quality_beta", d.quality_beta)?;
        nonneg("dynamics.noise_burst_rate", d.noise_burst_rate)?;
        nonneg("dynamics.noise_burst_visits", d.noise_burst_visits)?;
        finite("baseline.beta", self.baseline.beta)?;
        if self.baseline.lambda.is_nan() {
            return Err(Error::Config("sim.baseline.lambda must not be NaN".into()));
        }
        Ok(())
    }
}
