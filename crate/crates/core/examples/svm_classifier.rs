//! Trains an RBF support vector machine with Platt-calibrated probabilities
//! on two Gaussian clouds.
//!
//!     cargo run --release --example svm_classifier

use pathoprobe::corpus_store::Label;
use pathoprobe::model::ProbabilisticClassifier;
use pathoprobe::svm::{train_svm, SvmParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> pathoprobe::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..80 {
        let label = if i % 2 == 0 { Label::Control } else { Label::Pathologic };
        let shift = if label == Label::Pathologic { 1.5 } else { -1.5 };
        rows.push((0..5).map(|d| noise.sample(&mut rng) + if d == 0 { shift } else { 0.0 }).collect::<Vec<f64>>());
        labels.push(label);
    }
    let x: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let model = train_svm(&x, &labels, SvmParams::new(10.0, 0.1))?;

    println!(
        "{} support vectors after {} SMO updates, bias {:.4}, sum of alpha*y {:.1e}",
        model.support_vectors.len(),
        model.iterations,
        model.bias,
        model.dual_coef_sum()
    );
    println!("platt: A = {:.4}, B = {:.4}", model.platt.a, model.platt.b);
    let correct = x.iter().zip(&labels).filter(|(r, l)| model.predict(r).unwrap() == **l).count();
    println!("training accuracy {:.3}", correct as f64 / x.len() as f64);
    for probe in [[-3.0, 0.0, 0.0, 0.0, 0.0], [0.0; 5], [3.0, 0.0, 0.0, 0.0, 0.0]] {
        println!(
            "x0 = {:+.1}: decision {:+.3}, p(pathologic) {:.3}",
            probe[0],
            model.decision_value(&probe)?,
            model.predict_proba(&probe)?
        );
    }
    Ok(())
}
