//! Tape gradients against central differences for every registered objective.
//!
//! cargo run --example gradient_check -- [draws] [seed]

use drpm::grad::{draw_untied_noise, gradcheck, required_margin, Objective, ParamPoint, FD_STEP};
use drpm::noise::stream_rng;
use drpm::partition::ModelShape;
use rand::Rng;

fn main() -> drpm::Result<()> {
    let mut args = std::env::args().skip(1);
    let draws: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    for name in Objective::NAMES {
        for tau in [1.0, 0.5] {
            let mut worst = 0.0f64;
            let mut redrawn = 0;
            for d in 0..draws {
                let mut rng = stream_rng(seed, d);
                let n = rng.gen_range(2..=6);
                let k = rng.gen_range(1..=4);
                let shape = ModelShape::new(vec![n; k], n, 1.0)?;
                let point = ParamPoint::random(n, k, 1.0, &mut rng);
                let obj = Objective::from_name(name, &shape)?;
                let margin = required_margin(&obj, &shape, FD_STEP);
                let (noise, r) = draw_untied_noise(&shape, &point, seed ^ 0x5eed, d, margin);
                redrawn += r;
                let report = gradcheck(&obj, &shape, &point, &noise, tau, FD_STEP)?;
                if report.max_rel_err > worst {
                    worst = report.max_rel_err;
                }
            }
            let verdict = if worst < drpm::grad::GRADCHECK_TOL { "pass" } else { "FAIL" };
            println!("{name:16} tau={tau:.1} max_rel_err={worst:.2e} redrawn={redrawn} {verdict}");
        }
    }
    Ok(())
}
