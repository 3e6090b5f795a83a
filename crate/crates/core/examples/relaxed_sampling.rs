//! Relaxed partition samples across temperatures, next to their hard twin.
//!
//! cargo run --release --example relaxed_sampling

use drpm::noise::rng_from_seed;
use drpm::partition::sample_partition_relaxed;
use drpm::DrpmParams;

fn main() -> drpm::Result<()> {
    let params = DrpmParams::with_defaults(vec![1.0, 2.0, 1.0], vec![2.0, 0.5, 1.0, 1.5, 0.8])?;
    for tau in [2.0, 1.0, 0.3, 0.05] {
        // same seed, so every tau shares the hard twin
        let r = sample_partition_relaxed(&params, tau, &mut rng_from_seed(21))?;
        let dev = r
            .values
            .iter()
            .zip(r.hard.rows())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, h)| (x - h as f64).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        println!("tau {tau}: hard {} max |relaxed - hard| {dev:.2e}", r.hard);
        for row in &r.values {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            println!("  [{}]", cells.join(" "));
        }
    }
    Ok(())
}
