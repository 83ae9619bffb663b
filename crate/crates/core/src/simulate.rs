//! Synthetic datasets drawn from the model.
//!
//! Factor, disturbance, noise and covariate draws each come from their own
//! ChaCha stream of the configured seed, so changing one block's width does
//! not reshuffle the draws of another.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Dimensions, Latents, Theta};

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaMode {
    /// Integer sequences filled row-wise, unit structural coefficients and
    /// unit variances; see [`paper_theta`].
    PaperIntegers,
    Custom(Theta),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMode {
    /// Every covariate entry is standard normal.
    #[default]
    AllGaussian,
    /// Column 1 is the constant 1, the rest standard normal.
    InterceptPlusGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dims: Dimensions,
    pub seed: u64,
    pub theta_mode: ThetaMode,
    pub t_mode: CovariateMode,
}

impl SimConfig {
    pub fn new(dims: Dimensions, seed: u64) -> Self {
        SimConfig {
            dims,
            seed,
            theta_mode: ThetaMode::PaperIntegers,
            t_mode: CovariateMode::AllGaussian,
        }
    }

    pub fn theta(&self) -> Theta {
        match &self.theta_mode {
            ThetaMode::PaperIntegers => paper_theta(&self.dims),
            ThetaMode::Custom(theta) => theta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: Dataset,
    pub latents: Latents,
    pub theta: Theta,
}

fn integer_sequence(rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |r, j| (r * cols + j + 1) as f64)
}

/// `D`, `Dᵐ` filled row-wise with `1, 2, …`; `b`, `aᵐ` = `1..q`; every
/// `cᵐ = 1`; every variance 1.
pub fn paper_theta(dims: &Dimensions) -> Theta {
    let seq = |q: usize| DVector::from_fn(q, |j, _| (j + 1) as f64);
    Theta {
        d: integer_sequence(dims.r_t, dims.q_y),
        d_m: (0..dims.p)
            .map(|m| integer_sequence(dims.r_m[m], dims.q_m[m]))
            .collect(),
        b: seq(dims.q_y),
        a: dims.q_m.iter().map(|&q| seq(q)).collect(),
        c: DVector::from_element(dims.p, 1.0),
        sigma2_y: 1.0,
        sigma2_m: vec![1.0; dims.p],
    }
}

const STREAM_FACTORS: u64 = 0;
const STREAM_STRUCTURAL: u64 = 1;
const STREAM_NOISE: u64 = 16;
const STREAM_COVARIATES: u64 = 1 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

fn covariates(rng: &mut ChaCha8Rng, n: usize, r: usize, mode: CovariateMode) -> DMatrix<f64> {
    let mut t = normal_matrix(rng, n, r, 1.0);
    if mode == CovariateMode::InterceptPlusGaussian {
        t.column_mut(0).fill(1.0);
    }
    t
}

pub fn simulate_dataset(config: &SimConfig) -> Result<Simulated> {
    let dims = &config.dims;
    dims.validate()?;
    let theta = config.theta();
    theta.check_shape(dims)?;
    let variances = std::iter::once(theta.sigma2_y).chain(theta.sigma2_m.iter().copied());
    if variances.clone().any(|v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Config(
            "simulation variances must be finite and nonnegative".into(),
        ));
    }
    let n = dims.n;
    let seed = config.seed;

    let mut factor_rng = stream(seed, STREAM_FACTORS);
    let f: Vec<DVector<f64>> = (0..dims.p)
        .map(|_| normal_matrix(&mut factor_rng, n, 1, 1.0).column(0).into_owned())
        .collect();
    let mut g = normal_matrix(&mut stream(seed, STREAM_STRUCTURAL), n, 1, 1.0)
        .column(0)
        .into_owned();
    for (m, fm) in f.iter().enumerate() {
        g.axpy(theta.c[m], fm, 1.0);
    }

    let t = covariates(&mut stream(seed, STREAM_COVARIATES), n, dims.r_t, config.t_mode);
    let t_m: Vec<_> = (0..dims.p)
        .map(|m| {
            covariates(
                &mut stream(seed, STREAM_COVARIATES + 1 + m as u64),
                n,
                dims.r_m[m],
                config.t_mode,
            )
        })
        .collect();

    let noise_y = normal_matrix(&mut stream(seed, STREAM_NOISE), n, dims.q_y, theta.sigma2_y.sqrt());
    let y = &t * &theta.d + &g * theta.b.transpose() + noise_y;
    let x = (0..dims.p)
        .map(|m| {
            let noise = normal_matrix(
                &mut stream(seed, STREAM_NOISE + 1 + m as u64),
                n,
                dims.q_m[m],
                theta.sigma2_m[m].sqrt(),
            );
            &t_m[m] * &theta.d_m[m] + &f[m] * theta.a[m].transpose() + noise
        })
        .collect();

    let data = Dataset::new(y, x, t, t_m, config.t_mode == CovariateMode::InterceptPlusGaussian)?;
    Ok(Simulated {
        data,
        latents: Latents { g, f },
        theta,
    })
}

/// Seed for replicate `index` of a study seeded with `base` (SplitMix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_theta_matches_the_design() {
        let dims = Dimensions::uniform(400, 2, 40, 2).unwrap();
        let theta = paper_theta(&dims);
        assert_eq!(theta.d.shape(), (2, 40));
        assert_eq!(theta.d[(0, 0)], 1.0);
        assert_eq!(theta.d[(0, 39)], 40.0);
        assert_eq!(theta.d[(1, 0)], 41.0);
        assert_eq!(theta.d[(1, 39)], 80.0);
        assert_eq!(theta.b[0], 1.0);
        assert_eq!(theta.b[39], 40.0);
        assert_eq!(theta.d_m[1], theta.d);
        assert_eq!(theta.c.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn smallest_paper_theta() {
        let dims = Dimensions::uniform(1, 1, 1, 1).unwrap();
        let theta = paper_theta(&dims);
        assert_eq!(theta.d[(0, 0)], 1.0);
        assert_eq!(theta.b[0], 1.0);
        assert_eq!(theta.c[0], 1.0);
        assert_eq!(theta.sigma2_y, 1.0);
    }

    #[test]
    fn noiseless_degenerate_model() {
        let dims = Dimensions::uniform(20, 2, 3, 2).unwrap();
        let mut theta = paper_theta(&dims);
        theta.b.fill(0.0);
        theta.a.iter_mut().for_each(|a| a.fill(0.0));
        theta.c.fill(0.0);
        theta.sigma2_y = 0.0;
        theta.sigma2_m = vec![0.0; 2];
        let cfg = SimConfig {
            theta_mode: ThetaMode::Custom(theta.clone()),
            ..SimConfig::new(dims, 3)
        };
        let sim = simulate_dataset(&cfg).unwrap();
        assert_eq!(sim.data.y, &sim.data.t * &theta.d);
        let eps_g = normal_matrix(&mut stream(3, STREAM_STRUCTURAL), 20, 1, 1.0);
        assert_eq!(sim.latents.g, eps_g.column(0).into_owned());
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = SimConfig::new(Dimensions::uniform(50, 2, 4, 2).unwrap(), 42);
        assert_eq!(simulate_dataset(&cfg).unwrap(), simulate_dataset(&cfg).unwrap());
        let other = SimConfig {
            seed: 43,
            ..cfg.clone()
        };
        assert_ne!(
            simulate_dataset(&cfg).unwrap().data,
            simulate_dataset(&other).unwrap().data
        );
    }

    #[test]
    fn paper_design_has_48000_observed_scalars() {
        let cfg = SimConfig::new(Dimensions::uniform(400, 2, 40, 2).unwrap(), 1);
        let data = simulate_dataset(&cfg).unwrap().data;
        let total = data.y.len() + data.x.iter().map(|x| x.len()).sum::<usize>();
        assert_eq!(total, 48000);
        assert!(!data.intercept);
    }

    #[test]
    fn intercept_mode_sets_first_covariate_column() {
        let cfg = SimConfig {
            t_mode: CovariateMode::InterceptPlusGaussian,
            ..SimConfig::new(Dimensions::uniform(10, 2, 3, 3).unwrap(), 1)
        };
        let data = simulate_dataset(&cfg).unwrap().data;
        assert!(data.intercept);
        assert!(data.t.column(0).iter().all(|&v| v == 1.0));
        assert!(data.t_m[1].column(2).iter().any(|&v| v != 1.0));
    }

    #[test]
    fn factor_sample_moments() {
        let dims = Dimensions::uniform(100_000, 2, 1, 1).unwrap();
        let sim = simulate_dataset(&SimConfig::new(dims, 9)).unwrap();
        let n = 100_000.0;
        let f1 = &sim.latents.f[0];
        let f2 = &sim.latents.f[1];
        let var = |v: &DVector<f64>| {
            let m = v.mean();
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
        };
        assert!((0.98..=1.02).contains(&var(f1)));
        assert!((0.98..=1.02).contains(&var(f2)));
        let cov = f1
            .iter()
            .zip(f2.iter())
            .map(|(a, b)| (a - f1.mean()) * (b - f2.mean()))
            .sum::<f64>()
            / (n - 1.0);
        assert!(cov.abs() <= 0.02);
    }

    #[test]
    fn regression_recovers_generating_coefficients() {
        // x^{1}_{·,j} = T¹ D¹_{·,j} + f¹ a¹_j + ε with σ² = 1
        let dims = Dimensions::uniform(2000, 2, 3, 2).unwrap();
        let sim = simulate_dataset(&SimConfig::new(dims, 11)).unwrap();
        let j = 2;
        let design = DMatrix::from_fn(2000, 3, |i, k| {
            if k < 2 {
                sim.data.t_m[0][(i, k)]
            } else {
                sim.latents.f[0][i]
            }
        });
        let target = sim.data.x[0].column(j).into_owned();
        let xtx = design.transpose() * &design;
        let coef = xtx.clone().cholesky().unwrap().solve(&(design.transpose() * &target));
        let inv = xtx.try_inverse().unwrap();
        let truth = [sim.theta.d_m[0][(0, j)], sim.theta.d_m[0][(1, j)], sim.theta.a[0][j]];
        for k in 0..3 {
            let se = inv[(k, k)].sqrt();
            assert!(
                (coef[k] - truth[k]).abs() < 3.0 * se,
                "coef {k}: {} vs {}",
                coef[k],
                truth[k]
            );
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::BTreeSet<_> = (0..100).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
