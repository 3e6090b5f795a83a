//! Learn `(log ω, log s)` so the zero-noise partition recovers a random target.
//!
//! cargo run --release --example supervised_fit -- [seeds] [steps]

use drpm::learn::{fit_supervised, window_means, FitConfig, SupervisedTarget};
use drpm::noise::rng_from_seed;
use drpm::AssignmentMatrix;
use rand::Rng;

fn main() -> drpm::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let steps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let (n, k) = (8, 3);

    for seed in 0..seeds {
        let mut rng = rng_from_seed(1000 + seed);
        let labels = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let target = SupervisedTarget::new(AssignmentMatrix::from_labels(labels, k)?, 1.0)?;
        let config = FitConfig {
            steps,
            seed,
            ..FitConfig::default()
        };
        let fit = fit_supervised(&target, n, k, &config)?;
        let (first, last) = window_means(&fit.trace, 100);
        println!(
            "seed {seed}: target {} predicted {} match={} loss {first:.4} -> {last:.4}",
            target.target, fit.partition, fit.matched
        );
    }
    Ok(())
}
