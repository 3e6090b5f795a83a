//! Plackett-Luce sampling via perturbed scores and its NeuralSort relaxation.
//!
//! cargo run --release --example plackett_luce

use drpm::noise::rng_from_seed;
use drpm::permutation::{all_permutations, neuralsort_relaxed, pl_log_pmf, pl_sample};
use drpm::{PermutationMatrix, PlScores};
use std::collections::HashMap;

fn main() -> drpm::Result<()> {
    let scores = PlScores::new(vec![4.0, 2.0, 1.0, 0.5])?;
    let draws = 200_000;
    let mut rng = rng_from_seed(3);
    let mut seen: HashMap<Vec<usize>, u64> = HashMap::new();
    for _ in 0..draws {
        *seen.entry(pl_sample(&scores, &mut rng).order().to_vec()).or_default() += 1;
    }

    let mut total = 0.0;
    println!("{:>14} {:>9} {:>9}", "order", "exact", "sampled");
    for order in all_permutations(scores.len()) {
        let p = pl_log_pmf(&scores, &PermutationMatrix::from_order(order.clone())?)?.exp();
        total += p;
        let freq = *seen.get(&order).unwrap_or(&0) as f64 / draws as f64;
        if p > 0.02 {
            println!("{:>14} {p:>9.5} {freq:>9.5}", format!("{order:?}"));
        }
    }
    println!("sum over all 24 orders: {total:.12}");

    let values = scores.perturbed(&[0.0; 4]);
    for tau in [1.0, 0.1, 0.01] {
        let r = neuralsort_relaxed(&values, tau)?;
        println!("tau {tau}: hard {:?}", r.hard.order());
        for row in &r.values {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            println!("  [{}]", cells.join(" "));
        }
    }
    Ok(())
}
