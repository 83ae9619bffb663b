//! Repeated simulate-then-fit runs of the n=400, q=40 design with the
//! quality summaries: deviation from the true parameters, squared factor
//! correlations and convergence speed.
//!
//! cargo run --release --example replicate_study -- [replicates] [seed]

use sem_em::evaluate::replicate_study;
use sem_em::simulate::SimConfig;
use sem_em::{Dimensions, EmConfig};

fn main() -> sem_em::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let replicates = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let sim = SimConfig::new(Dimensions::uniform(400, 2, 40, 2)?, seed);
    let study = replicate_study(&sim, &EmConfig::default(), replicates)?;

    println!("replicate  iterations  deviation  r2(g)   r2(f1)  r2(f2)");
    for r in &study.replicates {
        let r2 = &r.sq_correlations;
        println!(
            "{:>9}  {:>10}  {:>9.4}  {:.4}  {:.4}  {:.4}",
            r.index,
            r.iterations.unwrap_or(0),
            r.avg_abs_rel_deviation.unwrap_or(f64::NAN),
            r2[0],
            r2[1],
            r2[2]
        );
    }
    if let Some(q) = study.parameter_deviation {
        println!(
            "per-parameter mean deviation quartiles: {:.4} {:.4} {:.4}",
            q.q1, q.median, q.q3
        );
    }
    if let Some(q) = study.sq_correlation {
        println!("squared correlation quartiles: {:.4} {:.4} {:.4}", q.q1, q.median, q.q3);
    }
    println!(
        "converged within 10 iterations: {:.0}%",
        100.0 * study.fraction_converged_within(10)
    );
    for band in &study.bands {
        println!(
            "{:<9} mean {:.4} ± {:.4}",
            band.name,
            band.mean,
            band.half_width.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
