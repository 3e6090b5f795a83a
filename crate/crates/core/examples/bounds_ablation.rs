//! Bounds quality over every partition for the four parameter configurations.
//!
//! cargo run --release --example bounds_ablation -- [n] [K] [M]

use drpm::estimate::{bounds_report, tv_distance, BoundsConfig};

fn main() -> drpm::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let k: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let m: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(200_000);

    for config in BoundsConfig::ALL {
        let params = config.params(n, k, 2024)?;
        let report = bounds_report(&params, m, 77)?;
        let deciles = report.deciles();
        let tv = match report.exact_table() {
            Some(exact) => tv_distance(&report.histogram(), &exact)?,
            None => f64::NAN,
        };
        println!(
            "{:>10}: sandwiched {:.4}, max upper gap {:.2e}, p_U/p bottom decile {:.3} top decile {:.3}, TV {tv:.4}",
            config.name(),
            report.sandwich_fraction(),
            report.max_upper_gap(),
            deciles.bottom(),
            deciles.top(),
        );
    }
    Ok(())
}
