//! Simulates a logged dataset under the epsilon-greedy baseline and writes it
//! as NDJSON.
//!
//! cargo run --release --example simulate_dataset -- [out.ndjson]

use notirl::mdp::Action;
use notirl::pipeline::{write_dataset, PipelineConfig};
use notirl::sim::{baseline_policy, generate_dataset};

fn main() -> notirl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "dataset.ndjson".into());
    let cfg = PipelineConfig::default();
    let ds = generate_dataset(&cfg.sim, &baseline_policy(&cfg.sim))?;

    let n = ds.n_transitions() as f64;
    let sends = ds.transitions().filter(|t| t.action == Action::Send).count() as f64;
    let clicks: f64 = ds.transitions().map(|t| t.reward.m_c).sum();
    let visits: f64 = ds.transitions().map(|t| t.reward.m_s).sum();
    let min_prop = ds.transitions().map(|t| t.behavior_propensity).fold(1.0, f64::min);
    let mean_gap = ds.transitions().map(|t| t.dt()).sum::<f64>() / n;

    println!("{} users, {} decision points", ds.trajectories.len(), ds.n_transitions());
    println!("send rate        {:.3}", sends / n);
    println!("click rate       {:.3} per send", clicks / sends);
    println!("visits per user  {:.2}", visits / ds.trajectories.len() as f64);
    println!("mean gap         {mean_gap:.2} h");
    println!("min propensity   {min_prop:.3}");
    println!("behavior         {}", ds.provenance.behavior_policy);

    write_dataset(out.as_ref(), &ds)?;
    println!("wrote {out}");
    Ok(())
}
