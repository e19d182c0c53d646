//! Compares one-step offline estimates with Monte-Carlo values of the same
//! smoothed policies on the simulator.
//!
//! cargo run --release --example offline_vs_ground_truth

use notirl::mdp::PreferenceVector;
use notirl::ope::evaluate_policy_metrics;
use notirl::pipeline::{simulate_policy, train_policy, PipelineConfig};
use notirl::reward::RewardSpec;
use notirl::sim::{baseline_policy, generate_dataset};

fn main() -> notirl::Result<()> {
    let cfg = PipelineConfig::default();
    let ds = generate_dataset(&cfg.sim, &baseline_policy(&cfg.sim))?;
    let eval = cfg.reward.prefs;
    println!("{:>5} {:>5} {:>6} | {:>10} {:>10} | {:>10} {:>10}", "w_s", "w_v", "alpha", "OPE vol", "sim vol", "OPE ret", "sim ret");
    for (w_s, w_v, alpha) in [(0.0, 0.5, 0.02), (1.0, 0.5, 0.02), (2.0, 0.5, 0.02), (4.0, 0.2, 0.02), (2.0, 0.5, 1.0)] {
        let spec = RewardSpec::observed(PreferenceVector { w_s, w_c: eval.w_c, w_v });
        let tc = notirl::trainer::TrainConfig { alpha, ..cfg.train.clone() };
        let (policy, _) = train_policy(&ds, &spec, &tc)?;
        let est = evaluate_policy_metrics(&ds, &policy, &cfg.ope.smoothing, &eval, tc.gamma)?;
        let gt = simulate_policy(&cfg, &policy, 2000, true)?;
        println!(
            "{w_s:>5} {w_v:>5} {alpha:>6} | {:>10.2} {:>10.2} | {:>10.3} {:>10.3}",
            est.volume.value, gt.volume, est.scalarized.value, gt.mean_return
        );
    }
    Ok(())
}
