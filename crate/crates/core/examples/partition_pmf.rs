//! Exact partition probabilities, bounds, and a Monte Carlo check.
//!
//! cargo run --release --example partition_pmf -- [partition]

use drpm::estimate::mc_hit_rate;
use drpm::partition::{partition_log_pmf_exact, partition_pmf_bounds, BoundsMode};
use drpm::{AssignmentMatrix, DrpmParams};

fn main() -> drpm::Result<()> {
    let y: AssignmentMatrix = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "1100,0010,0001".to_string())
        .parse()?;
    let params = DrpmParams::with_defaults(vec![1.0, 0.5, 2.0], vec![3.0, 1.0, 0.7, 1.2])?;
    let exact = partition_log_pmf_exact(&params, &y)?.exp();
    println!("p({y}) = {exact:.6}");

    for mode in [BoundsMode::Heuristic, BoundsMode::Enumerate] {
        let b = partition_pmf_bounds(&params, &y, mode)?;
        println!("{mode:?}: {:.6} <= p <= {:.6}", b.log_lower.exp(), b.log_upper.exp());
    }

    let m = 1_000_000;
    println!("monte carlo over {m} draws: {:.6}", mc_hit_rate(&params, &y, m, 5));
    Ok(())
}
