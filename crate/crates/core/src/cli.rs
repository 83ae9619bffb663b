//! Command-line front end: `simulate`, `fit`, `replicate`, `sensitivity`
//! and `resample`.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when the command
//! itself fails.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::em::{fit, EmConfig, EPSILON_APPLICATION, EPSILON_SIMULATION};
use crate::error::Result;
use crate::evaluate::{kfold_resample, replicate_study, sensitivity_sweep};
use crate::io::{
    load_dataset, write_fit, write_resample, write_sensitivity, write_simulated, write_study, BlockManifest,
};
use crate::model::Dimensions;
use crate::simulate::{simulate_dataset, CovariateMode, SimConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sem-em",
    version,
    about = "EM estimation of a latent-factor structural equation model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset and write its blocks, latents and parameters.
    Simulate {
        #[command(flatten)]
        design: Design,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model to the blocks listed in a manifest.
    Fit {
        /// Manifest file, or a directory containing manifest.json.
        #[arg(long, alias = "data")]
        manifest: PathBuf,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate and fit many datasets and summarise estimation quality.
    Replicate {
        #[command(flatten)]
        design: Design,
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicate studies over a grid of unit counts and block widths.
    Sensitivity {
        #[command(flatten)]
        design: Design,
        #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 200, 400])]
        n_values: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20, 40])]
        q_values: Vec<usize>,
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refit random subsamples and compare them with the full-data fit.
    Resample {
        #[arg(long, alias = "data")]
        manifest: PathBuf,
        /// Number of subsamples.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Units per subsample; defaults to half the data.
        #[arg(long)]
        sample_size: Option<usize>,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Design {
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Width of every observed block.
    #[arg(long, default_value_t = 40)]
    q: usize,
    /// Width of every covariate block.
    #[arg(long, default_value_t = 2)]
    r: usize,
    /// Make the first covariate column constant 1.
    #[arg(long)]
    intercept: bool,
}

impl Design {
    fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        let dims = Dimensions::uniform(self.n, self.p, self.q, self.r)?;
        let t_mode = if self.intercept {
            CovariateMode::InterceptPlusGaussian
        } else {
            CovariateMode::AllGaussian
        };
        Ok(SimConfig {
            t_mode,
            ..SimConfig::new(dims, seed)
        })
    }
}

#[derive(Debug, Args)]
struct EmArgs {
    /// Stopping threshold on the summed relative parameter change.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add a small diagonal jitter when the observed covariance is not
    /// numerically positive definite.
    #[arg(long)]
    jitter: bool,
}

impl EmArgs {
    fn config(&self, default_epsilon: f64) -> EmConfig {
        EmConfig {
            epsilon: self.epsilon.unwrap_or(default_epsilon),
            max_iter: self.max_iter,
            seed: self.seed,
            jitter: self.jitter,
            ..EmConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    /// Run the full 100 replicates per cell.
    #[arg(long, conflicts_with = "replicates")]
    full: bool,
    #[command(flatten)]
    em: EmArgs,
}

impl StudyArgs {
    fn replicates(&self) -> usize {
        if self.full {
            100
        } else {
            self.replicates
        }
    }
}

fn execute(command: Command) -> Result<String> {
    match command {
        Command::Simulate { design, seed, out } => {
            let config = design.sim_config(seed)?;
            let sim = simulate_dataset(&config)?;
            write_simulated(&sim, &config, &out)?;
            Ok(format!("wrote {} units to {}", config.dims.n, out.display()))
        }
        Command::Fit { manifest, em, out } => {
            let loaded = load_dataset(&BlockManifest::read(&manifest)?)?;
            let config = em.config(EPSILON_APPLICATION);
            let result = fit(&loaded.data, &config)?;
            write_fit(&result, &loaded.data, &loaded.names, &config, &out)?;
            Ok(format!(
                "{} after {} iterations, log-likelihood {:.6}; results in {}",
                if result.converged {
                    "converged"
                } else {
                    "stopped without converging"
                },
                result.iterations,
                result.final_loglik(),
                out.display()
            ))
        }
        Command::Replicate { design, study, out } => {
            let sim = design.sim_config(study.em.seed)?;
            let em = study.em.config(EPSILON_SIMULATION);
            let summary = replicate_study(&sim, &em, study.replicates())?;
            write_study(&summary, &sim, &em, &out)?;
            let median = |q: Option<crate::evaluate::Quartiles>| q.map_or(f64::NAN, |q| q.median);
            Ok(format!(
                "{} replicates ({} failed): median deviation {:.4}, median squared correlation {:.4}",
                summary.replicates.len(),
                summary.failures,
                median(summary.parameter_deviation),
                median(summary.sq_correlation)
            ))
        }
        Command::Sensitivity {
            design,
            n_values,
            q_values,
            study,
            out,
        } => {
            let base = design.sim_config(study.em.seed)?;
            let em = study.em.config(EPSILON_SIMULATION);
            let cells = sensitivity_sweep(&n_values, &q_values, &base, &em, study.replicates())?;
            write_sensitivity(&cells, &base, &em, &out)?;
            Ok(format!("{} design cells written to {}", cells.len(), out.display()))
        }
        Command::Resample {
            manifest,
            k,
            sample_size,
            em,
            out,
        } => {
            let loaded = load_dataset(&BlockManifest::read(&manifest)?)?;
            let config = em.config(EPSILON_APPLICATION);
            let size = sample_size.unwrap_or(loaded.dims.n / 2);
            let report = kfold_resample(&loaded.data, &config, k, size, em.seed)?;
            write_resample(&report, &config, em.seed, &out)?;
            let median = |q: Option<crate::evaluate::Quartiles>| q.map_or(f64::NAN, |q| q.median);
            Ok(format!(
                "{k} samples of {size}: median parameter MSE {:.3e}, median parameter correlation {:.4}",
                median(report.param_mse),
                median(report.param_corr)
            ))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(message) => {
            println!("{message}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
