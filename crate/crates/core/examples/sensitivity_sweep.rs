//! How estimation quality moves with the number of units and the block
//! width: one replicated study per grid value.
//!
//! cargo run --release --example sensitivity_sweep -- [replicates]

use sem_em::evaluate::sensitivity_sweep;
use sem_em::simulate::SimConfig;
use sem_em::{Dimensions, EmConfig};

fn main() -> sem_em::Result<()> {
    env_logger::init();
    let replicates = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let base = SimConfig::new(Dimensions::uniform(400, 2, 40, 2)?, 0);
    let cells = sensitivity_sweep(
        &[50, 100, 200, 400],
        &[5, 10, 20, 40],
        &base,
        &EmConfig::default(),
        replicates,
    )?;

    println!("axis    n    q   median r2   c1 (95% band)        sigma2_Y (95% band)");
    for cell in &cells {
        let s = &cell.summary;
        let band = |name: &str| {
            s.band(name)
                .map(|b| format!("{:.3} ± {:.3}", b.mean, b.half_width.unwrap_or(f64::NAN)))
                .unwrap_or_default()
        };
        println!(
            "{:<4} {:>4} {:>4}   {:>9.4}   {:<19}  {}",
            format!("{:?}", cell.axis),
            cell.n,
            cell.q,
            s.sq_correlation.map_or(f64::NAN, |q| q.median),
            band("c1"),
            band("sigma2_Y")
        );
    }
    Ok(())
}
