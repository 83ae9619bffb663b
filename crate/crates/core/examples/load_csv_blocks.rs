//! Reading blocks from CSV through a manifest, with a categorical covariate
//! expanded to indicators, then fitting and writing the report files.
//!
//! cargo run --example load_csv_blocks -- [output-dir]

use std::fs;
use std::path::PathBuf;

use sem_em::em::EPSILON_APPLICATION;
use sem_em::io::{load_dataset, write_fit, write_simulated, BlockManifest, MANIFEST_FILE};
use sem_em::simulate::{simulate_dataset, SimConfig};
use sem_em::{fit, Dimensions, EmConfig};

fn main() -> sem_em::Result<()> {
    env_logger::init();
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sem-em-blocks"));

    // Simulated blocks, with a five-level soil type added to the covariates
    // of Y: each level shifts the Y columns by its own amount.
    let n = 250;
    let config = SimConfig::new(Dimensions::uniform(n, 2, 12, 1)?, 3);
    let mut sim = simulate_dataset(&config)?;
    let soils = ["loam", "clay", "sand", "silt", "peat"];
    let shift = [2.0, 3.5, 0.5, -1.0, 5.0];
    let soil_of = |i: usize| (i * 7) % 5;
    let mut t_csv = String::from("t1,soil\n");
    for i in 0..n {
        let s = soil_of(i);
        for j in 0..12 {
            sim.data.y[(i, j)] += shift[s] * [1.0, -0.5, 0.8, 1.5][j % 4];
        }
        t_csv.push_str(&format!("{},{}\n", sim.data.t[(i, 0)], soils[s]));
    }
    write_simulated(&sim, &config, &dir)?;
    fs::write(dir.join("t_soil.csv"), t_csv)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        r#"{
  "y": "y.csv",
  "x": ["x1.csv", "x2.csv"],
  "t": "t_soil.csv",
  "t_m": ["t1.csv", "t2.csv"],
  "categorical": { "T": [{ "column": "soil", "levels": ["loam", "clay", "sand", "silt", "peat"] }] }
}
"#,
    )?;

    let loaded = load_dataset(&BlockManifest::read(&dir)?)?;
    println!("dimensions: {:?}", loaded.dims);
    println!("covariates of Y: {:?}", loaded.names.t);

    // Each covariate column opens a direction along which g and D trade off,
    // and EM moves slowly there, so allow many iterations.
    let em = EmConfig {
        epsilon: EPSILON_APPLICATION,
        max_iter: 10_000,
        ..EmConfig::default()
    };
    let result = fit(&loaded.data, &em)?;
    let out = dir.join("fit");
    write_fit(&result, &loaded.data, &loaded.names, &em, &out)?;
    println!(
        "{} iterations, converged {}; wrote {}",
        result.iterations,
        result.converged,
        out.display()
    );
    Ok(())
}
