//! Fits the click model (logistic) and the per-action session models
//! (linear) on simulated logs and prints their coefficients.
//!
//! cargo run --release --example fit_reward_models

use notirl::mdp::Action;
use notirl::pipeline::{fit_reward_models, PipelineConfig};
use notirl::reward::{predict_click, predict_sessions};
use notirl::sim::{baseline_policy, generate_dataset};

fn main() -> notirl::Result<()> {
    let cfg = PipelineConfig::default();
    let ds = generate_dataset(&cfg.sim, &baseline_policy(&cfg.sim))?;
    let fit = fit_reward_models(&ds)?;
    let (click, session) = (&fit.click.model, &fit.session.model);

    println!("click model on {} sends, final log-loss {:.4}", fit.click.n_samples, fit.click.loss_history.last().copied().unwrap_or(f64::NAN));
    println!(
        "session model mse {:.3} (send, n={}) / {:.3} (not send, n={})",
        fit.session.mse_send, fit.session.n_send, fit.session.mse_not_send, fit.session.n_not_send
    );
    println!("\n{:<26} {:>10} {:>12} {:>12}", "feature", "click", "visits|send", "visits|not");
    for (i, name) in ds.schema.names().iter().enumerate() {
        println!(
            "{name:<26} {:>10.4} {:>12.4} {:>12.4}",
            click.weights[i], session.send.weights[i], session.not_send.weights[i]
        );
    }
    println!("{:<26} {:>10.4} {:>12.4} {:>12.4}", "intercept", click.intercept, session.send.intercept, session.not_send.intercept);

    let (mut p_click, mut lift) = (0.0, 0.0);
    for t in ds.transitions() {
        p_click += predict_click(click, &t.state, Action::Send)?;
        lift += predict_sessions(session, &t.state, Action::Send)? - predict_sessions(session, &t.state, Action::NotSend)?;
    }
    let n = ds.n_transitions() as f64;
    println!("\nmean predicted click probability if sent: {:.3}", p_click / n);
    println!("mean predicted visit lift of a send:       {:.3}", lift / n);
    Ok(())
}
