use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::config::SimConfig;

/// Latent response parameters of one simulated user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    /// Organic visits per day at zero fatigue.
    pub base_visit_rate: f64,
    /// Logit offset of the click model.
    pub click_affinity: f64,
    /// Fatigue at the start of the episode.
    pub fatigue: f64,
    /// Expected extra visits triggered by one send at zero fatigue.
    pub notification_boost: f64,
    /// Fatigue level past which click and visit responses collapse.
    pub disable_threshold: f64,
}

fn gamma_mean_sd<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd == 0.0 || mean == 0.0 {
        return mean;
    }
    let shape = (mean / sd).powi(2);
    let scale = sd * sd / mean;
    Gamma::new(shape, scale)
        .expect("validated gamma parameters")
        .sample(rng)
}

fn normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("validated normal parameters").sample(rng)
}

/// Draws one user from the configured population.
pub fn sample_user<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> UserModel {
    let p = &config.population;
    UserModel {
        base_visit_rate: gamma_mean_sd(p.base_visit_rate_mean, p.base_visit_rate_sd, rng),
        click_affinity: normal(p.click_affinity_mean, p.click_affinity_sd, rng),
        fatigue: gamma_mean_sd(p.initial_fatigue_mean, p.initial_fatigue_sd, rng),
        notification_boost: gamma_mean_sd(p.notification_boost_mean, p.notification_boost_sd, rng),
        disable_threshold: normal(p.disable_threshold_mean, p.disable_threshold_sd, rng),
    }
}
