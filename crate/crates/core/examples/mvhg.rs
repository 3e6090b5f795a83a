//! Fisher noncentral MVHG: exact PMF, sequential sampling, relaxed counts.
//!
//! cargo run --release --example mvhg

use drpm::mvhg::MvhgParams;
use drpm::noise::rng_from_seed;
use std::collections::BTreeMap;

fn main() -> drpm::Result<()> {
    let mvhg = MvhgParams::new(vec![4, 4, 4], 6, vec![0.5, 1.0, 3.0])?;
    let support = mvhg.support()?;
    println!("support size {} (normalizer {:.6})", support.len(), mvhg.log_normalizer());

    let draws = 200_000;
    let mut rng = rng_from_seed(7);
    let mut seen = BTreeMap::new();
    for _ in 0..draws {
        *seen.entry(mvhg.sample_hard(&mut rng)).or_insert(0u64) += 1;
    }
    println!("{:>12} {:>10} {:>10}", "counts", "exact", "sampled");
    for counts in &support {
        let freq = *seen.get(counts).unwrap_or(&0) as f64 / draws as f64;
        println!("{:>12} {:>10.5} {:>10.5}", format!("{:?}", counts.0), mvhg.pmf(counts), freq);
    }

    for tau in [1.0, 0.3, 0.05] {
        let r = mvhg.sample_relaxed(tau, &mut rng_from_seed(11))?;
        let soft: Vec<String> = r.expected_counts().iter().map(|c| format!("{c:.3}")).collect();
        println!("tau {tau}: relaxed counts [{}] hard {:?}", soft.join(", "), r.hard.0);
    }
    Ok(())
}
