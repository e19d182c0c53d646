//! Sweeps the session weight and shows the estimated send volume moving
//! with it.
//!
//! cargo run --release --example preference_sweep

use notirl::pipeline::{run_sweep, PipelineConfig, SweepSpec};
use notirl::sim::{baseline_policy, generate_dataset};

fn main() -> notirl::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.sim.n_users = 500;
    cfg.train.epochs = 20;
    let ds = generate_dataset(&cfg.sim, &baseline_policy(&cfg.sim))?;
    let w_s = [0.0, 1.0, 2.0, 4.0];
    cfg.sweep = SweepSpec { w_s: w_s.to_vec(), replications: 3, ..SweepSpec::default() };

    let rows = run_sweep(&cfg, &ds, None)?;
    println!("{:>5} {:>5} {:>9} {:>9} {:>9} {:>11}", "w_s", "seed", "volume", "visits", "clicks", "scalarized");
    for (row, _) in &rows {
        if row.status != "ok" {
            println!("{:>5} {:>5} failed: {}", row.w_s, row.seed, row.error.as_deref().unwrap_or(""));
            continue;
        }
        println!(
            "{:>5} {:>5} {:>9.2} {:>9.2} {:>9.2} {:>11.3}",
            row.w_s,
            row.seed,
            row.volume.unwrap_or(f64::NAN),
            row.sessions.unwrap_or(f64::NAN),
            row.clicks.unwrap_or(f64::NAN),
            row.scalarized.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
