//! Evaluates a trained policy offline with the three importance-sampling
//! estimators and reports weight diagnostics.
//!
//! cargo run --release --example off_policy_evaluation

use notirl::ope::{behavior_probs, evaluate_with_probs, one_step_is, per_decision_is, target_propensities, trajectory_is, OpeEstimate};
use notirl::pipeline::{train_policy, PipelineConfig};
use notirl::reward::{build_scalar_rewards, RewardSpec};
use notirl::sim::{baseline_policy, generate_dataset};

fn show(e: &OpeEstimate) {
    println!(
        "{:<18} {:>8.3} ± {:<6.3} ESS {:>9.1} of {:>6}  self-normalized {:>8.3}  max weight {:>8.2}",
        e.estimator_kind.to_string(),
        e.value,
        e.stderr,
        e.effective_sample_size,
        e.n_units,
        e.self_normalized_value,
        e.diagnostics.max_weight
    );
}

fn main() -> notirl::Result<()> {
    let cfg = PipelineConfig::default();
    let ds = generate_dataset(&cfg.sim, &baseline_policy(&cfg.sim))?;
    let spec = RewardSpec::observed(cfg.reward.prefs);
    let (policy, _) = train_policy(&ds, &spec, &cfg.train)?;
    let rewards = build_scalar_rewards(&ds, &spec)?;
    let gamma = cfg.train.gamma;
    let trajs = &ds.trajectories;

    println!("behavior policy (all weights 1):");
    let mu = behavior_probs(&ds);
    show(&one_step_is(trajs, &rewards, &mu, gamma)?);

    println!("\nlearned policy with {:?}:", cfg.ope.smoothing);
    let pi = target_propensities(&ds, &policy, &cfg.ope.smoothing)?;
    show(&trajectory_is(trajs, &rewards, &pi, gamma)?);
    show(&per_decision_is(trajs, &rewards, &pi, gamma)?);
    show(&one_step_is(trajs, &rewards, &pi, gamma)?);

    let (b, p) = (evaluate_with_probs(&ds, &mu, &cfg.reward.prefs, gamma)?, evaluate_with_probs(&ds, &pi, &cfg.reward.prefs, gamma)?);
    println!("\nper-user metrics    behavior   learned");
    println!("volume             {:>9.2} {:>9.2}", b.volume.value, p.volume.value);
    println!("visits             {:>9.2} {:>9.2}", b.sessions.value, p.sessions.value);
    println!("clicks             {:>9.2} {:>9.2}", b.clicks.value, p.clicks.value);
    Ok(())
}
