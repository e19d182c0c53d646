//! Trains a conservative double-DQN policy on simulated logs and shows how
//! the penalty weight changes the learned Q-values and send rate.
//!
//! cargo run --release --example train_cql

use notirl::mdp::Action;
use notirl::pipeline::PipelineConfig;
use notirl::reward::{build_scalar_rewards, RewardSpec};
use notirl::sim::{baseline_policy, generate_dataset};
use notirl::trainer::{greedy_action, train, TrainConfig};

fn main() -> notirl::Result<()> {
    let cfg = PipelineConfig::default();
    let ds = generate_dataset(&cfg.sim, &baseline_policy(&cfg.sim))?;
    let rewards = build_scalar_rewards(&ds, &RewardSpec::observed(cfg.reward.prefs))?;
    let logged = ds.transitions().filter(|t| t.action == Action::Send).count() as f64 / ds.n_transitions() as f64;
    println!("logged send rate {logged:.3}");

    for alpha in [0.0, 0.02, 1.0] {
        let tc = TrainConfig { alpha, ..cfg.train.clone() };
        let (policy, report) = train(&ds, &rewards, &tc)?;
        let last = report.epochs.last().expect("at least one epoch");
        let mut sends = 0usize;
        for t in ds.transitions() {
            sends += usize::from(greedy_action(&policy, &t.state)? == Action::Send);
        }
        println!(
            "alpha {alpha:<5} steps {:>5}  syncs {:>3}  final loss {:>7.4}  mean max Q {:>7.3}  mean Q(data) {:>7.3}  greedy send rate {:.3}",
            report.total_steps,
            report.target_syncs,
            report.steps.last().map_or(f64::NAN, |s| s.loss),
            last.mean_max_q,
            last.mean_q_data,
            sends as f64 / ds.n_transitions() as f64
        );
    }
    Ok(())
}
