//! Simulate one dataset of the integer-sequence design, fit it, and compare
//! the estimates and factor scores with the truth.
//!
//! cargo run --release --example simulate_and_fit -- [n] [q] [seed]

use sem_em::evaluate::{abs_rel_deviation, factor_sq_correlation};
use sem_em::simulate::{simulate_dataset, SimConfig};
use sem_em::{fit, Dimensions, EmConfig};

fn main() -> sem_em::Result<()> {
    env_logger::init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(400);
    let q = args.get(1).copied().unwrap_or(40);
    let seed = args.get(2).copied().unwrap_or(1) as u64;

    let sim = simulate_dataset(&SimConfig::new(Dimensions::uniform(n, 2, q, 2)?, seed))?;
    let result = fit(&sim.data, &EmConfig::default())?;

    println!("iterations: {} (converged: {})", result.iterations, result.converged);
    for t in &result.trace {
        println!(
            "  {:>3}  change {:>10.3e}  log-lik {:.4}",
            t.iteration, t.relative_change, t.observed_loglik
        );
    }
    println!("c = {:?}  (true 1, 1)", result.theta.c.as_slice());
    println!(
        "sigma2: Y {:.4}, X1 {:.4}, X2 {:.4}  (true 1)",
        result.theta.sigma2_y, result.theta.sigma2_m[0], result.theta.sigma2_m[1]
    );
    let dev = abs_rel_deviation(&sim.theta, &result.theta)?;
    println!("average absolute relative deviation: {:.4}", dev.average);
    let r2 = factor_sq_correlation(&sim.latents, &result.moments)?;
    println!("squared correlations g, f1, f2: {:.4} {:.4} {:.4}", r2[0], r2[1], r2[2]);
    Ok(())
}
