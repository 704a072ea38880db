//! Checks reverse-mode gradients of a small conv block against central
//! differences in 64-bit arithmetic.
//!
//! cargo run --release --example gradient_check

use jointseg::tensor::gradcheck::check_gradients;
use jointseg::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

fn main() -> jointseg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [
        random(&[2, 8, 8], &mut rng),
        random(&[3, 2, 3, 3], &mut rng),
        random(&[3], &mut rng),
    ];
    let weights = random(&[3, 4, 4], &mut rng);

    // conv -> sigmoid -> pool -> weighted sum
    let report = check_gradients(&inputs, 1e-5, |_, n| (0..n).collect(), |g, ids| {
        let y = g.conv2d(ids[0], ids[1], ids[2], 1)?;
        let y = g.sigmoid(y);
        let y = g.max_pool2(y)?;
        let w = g.constant(weights.clone());
        let y = g.mul(y, w)?;
        Ok(g.reduce_sum(y))
    })?;

    println!(
        "{} coordinates, {} skipped at pooling ties, max relative error {:.2e}",
        report.coordinates, report.skipped, report.max_rel_error
    );
    if let Some((input, idx, a, n)) = report.worst {
        println!("worst: input {input}[{idx}] analytic {a:.9} numeric {n:.9}");
    }
    println!("{}", if report.passes(1e-4) { "ok" } else { "FAILED" });
    Ok(())
}
