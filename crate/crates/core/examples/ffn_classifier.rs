//! Trains a feedforward network with Adam and early stopping, then prints
//! the learning curve.
//!
//!     cargo run --release --example ffn_classifier

use pathoprobe::corpus_store::Label;
use pathoprobe::ffn::{train_ffn, Activation, FfnConfig};
use pathoprobe::model::ProbabilisticClassifier;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pathoprobe::Result<()> {
    // two interleaved rings: not linearly separable
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let label = if i % 2 == 0 { Label::Control } else { Label::Pathologic };
        let radius = if label == Label::Control { 1.0 } else { 2.0 } + rng.random_range(-0.2..0.2);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        rows.push(vec![radius * angle.cos(), radius * angle.sin()]);
        labels.push(label);
    }
    let x: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let config = FfnConfig {
        activation: Activation::Tanh,
        hidden_layers: 2,
        hidden_units: 32,
        learning_rate: 1e-2,
        seed: 7,
        ..FfnConfig::default()
    };
    let (model, log) = train_ffn(&x, &labels, &config)?;

    for e in log.epochs.iter().filter(|e| e.epoch == 1 || e.epoch % 20 == 0) {
        println!("epoch {:>3}: train {:.4}  val {:.4}", e.epoch, e.train_loss, e.val_loss);
    }
    println!(
        "best epoch {} (val {:.4}), early stop: {}, {} train / {} validation rows",
        log.best_epoch, log.best_val_loss, log.early_stopped, log.n_train, log.n_val
    );
    let correct = x.iter().zip(&labels).filter(|(r, l)| model.predict(r).unwrap() == **l).count();
    println!("training accuracy {:.3}", correct as f64 / x.len() as f64);
    Ok(())
}
