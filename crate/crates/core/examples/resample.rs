//! Stability of a fit under re-sampling: refit random half-size subsamples
//! and compare parameters and factor scores with the full-data fit.

use sem_em::evaluate::kfold_resample;
use sem_em::simulate::{simulate_dataset, SimConfig};
use sem_em::{Dimensions, EmConfig};

fn main() -> sem_em::Result<()> {
    env_logger::init();
    let data = simulate_dataset(&SimConfig::new(Dimensions::uniform(400, 2, 40, 2)?, 5))?.data;
    let report = kfold_resample(&data, &EmConfig::default(), 5, 200, 9)?;

    println!(
        "full fit: {} iterations, converged {}",
        report.full_iterations, report.full_converged
    );
    println!("sample  param MSE   param corr  factor MSE  factor corr");
    for s in &report.samples {
        println!(
            "{:>6}  {:>9.3e}  {:>10.5}  {:>10.3e}  {:>11.5}",
            s.index,
            s.param_mse.unwrap_or(f64::NAN),
            s.param_corr.unwrap_or(f64::NAN),
            s.factor_mse.unwrap_or(f64::NAN),
            s.factor_corr.unwrap_or(f64::NAN)
        );
    }
    if let (Some(mse), Some(corr)) = (report.param_mse, report.param_corr) {
        println!(
            "median parameter MSE {:.3e}, median parameter correlation {:.5}",
            mse.median, corr.median
        );
    }
    Ok(())
}
