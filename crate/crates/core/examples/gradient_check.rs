//! Checks the analytic gradient of the conservative loss against central
//! finite differences on a small random network.
//!
//! cargo run --release --example gradient_check

use notirl::mdp::Action;
use notirl::numerics::{Activation, DenseMatrix, MlpParams};
use notirl::trainer::{cql_loss_with_targets, Batch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> notirl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = MlpParams::init(&[3, 6, 4, 2], Activation::Tanh, &mut rng)?;
    let rows = 5;
    let states = DenseMatrix::new(rows, 3, (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let batch = Batch {
        next_states: states.clone(),
        states,
        actions: (0..rows).map(|i| if i % 2 == 0 { Action::Send } else { Action::NotSend }).collect(),
        rewards: vec![0.0; rows],
        dt: vec![1.0; rows],
        terminal: vec![true; rows],
    };
    let targets: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();

    for alpha in [0.0, 0.5, 2.0] {
        let analytic = cql_loss_with_targets(&batch, &params, &targets, alpha)?.grads.flatten();
        let flat = params.flatten();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..flat.len() {
            let loss = |delta: f64| -> notirl::Result<f64> {
                let mut p = params.clone();
                let mut f = flat.clone();
                f[i] += delta;
                p.set_flat(&f)?;
                Ok(cql_loss_with_targets(&batch, &p, &targets, alpha)?.loss)
            };
            let numeric = (loss(h)? - loss(-h)?) / (2.0 * h);
            worst = worst.max((numeric - analytic[i]).abs());
        }
        println!("alpha {alpha}: {} parameters, max |analytic - numeric| = {worst:.2e}", flat.len());
    }
    Ok(())
}
