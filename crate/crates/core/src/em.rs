//! The EM loop: initialisation, E→M iterations and the stopping rule.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estep::{conditional_law, posterior_moments, ConditioningOptions, PosteriorMoments};
use crate::likelihood::observed_loglik_with;
use crate::linalg::{cholesky, leading_eigenvector};
use crate::model::{Dataset, Dimensions, Theta};
use crate::mstep::{sufficient_stats, update_theta};

/// Stopping threshold used for simulated data.
pub const EPSILON_SIMULATION: f64 = 1e-2;
/// Stopping threshold used for field data.
pub const EPSILON_APPLICATION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Threshold on the summed relative parameter change.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Seeds the random structural start used when the regression start is
    /// singular.
    pub seed: u64,
    /// Diagonal jitter on the observed covariance, see [`ConditioningOptions`].
    pub jitter: bool,
    /// Lower bound on `|θ*[k]|` in the relative-change denominator.
    pub denominator_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            epsilon: EPSILON_SIMULATION,
            max_iter: 500,
            seed: 0,
            jitter: false,
            denominator_floor: 1e-8,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.denominator_floor.is_nan() || self.denominator_floor <= 0.0 {
            return Err(Error::Config("denominator_floor must be positive".into()));
        }
        Ok(())
    }

    fn conditioning(&self) -> ConditioningOptions {
        ConditioningOptions { jitter: self.jitter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub relative_change: f64,
    pub observed_loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Estimates, sign-canonicalised (first loading of every factor ≥ 0).
    pub theta: Theta,
    /// Posterior moments at `theta`; the means are the factor scores.
    pub moments: PosteriorMoments,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    /// Observed log-likelihood at the starting point.
    pub initial_loglik: f64,
}

impl FitResult {
    pub fn final_loglik(&self) -> f64 {
        self.trace.last().map_or(self.initial_loglik, |t| t.observed_loglik)
    }
}

struct BlockStart {
    d: DMatrix<f64>,
    scores: DVector<f64>,
    loading: DVector<f64>,
    sigma2: f64,
}

/// Regression on covariates, then the first principal component of the
/// residuals as factor proxy, then regression of residuals on that proxy.
fn start_block(obs: &DMatrix<f64>, cov: &DMatrix<f64>, name: &str) -> Result<BlockStart> {
    let n = obs.nrows();
    let chol = cholesky(&(cov.transpose() * cov)).ok_or_else(|| Error::CollinearCovariates { block: name.into() })?;
    let d = chol.solve(&(cov.transpose() * obs));
    let resid = obs - cov * &d;

    let col_means = resid.row_mean();
    let centered = DMatrix::from_fn(n, resid.ncols(), |i, j| resid[(i, j)] - col_means[j]);
    let scale = obs.norm().max(1.0);
    if centered.norm() <= 1e-12 * scale {
        return Err(Error::ZeroVarianceBlock { block: name.into() });
    }
    let (_, mut direction) = leading_eigenvector(&(centered.transpose() * &centered));
    if direction[0] < 0.0 {
        direction.neg_mut();
    }
    let raw = &centered * direction;
    let sd = (raw.norm_squared() / (n as f64 - 1.0)).sqrt();
    if sd.is_nan() || sd <= 0.0 {
        return Err(Error::ZeroVarianceBlock { block: name.into() });
    }
    let scores = raw / sd;

    let loading = resid.transpose() * &scores / scores.norm_squared();
    let fitted = &scores * loading.transpose();
    let count = resid.len() as f64;
    // Keep the start away from an exact fit, which single-variable blocks
    // would otherwise produce.
    let floor = 1e-2 * centered.norm_squared() / count;
    let sigma2 = ((resid - fitted).norm_squared() / count).max(floor);
    Ok(BlockStart {
        d,
        scores,
        loading,
        sigma2,
    })
}

/// Starting parameters from per-block regressions and principal components.
pub fn initialize(data: &Dataset, config: &EmConfig) -> Result<Theta> {
    let dims = data.dims();
    let max_r = dims.r_m.iter().copied().chain([dims.r_t]).max().unwrap_or(0);
    if dims.n < 2 || dims.n <= max_r {
        return Err(Error::Dimensions(format!(
            "initialisation needs n ≥ 2 and n > every covariate width (n = {}, widest covariate block = {max_r})",
            dims.n
        )));
    }
    let y = start_block(&data.y, &data.t, "Y")?;
    let x = (0..dims.p)
        .map(|m| start_block(&data.x[m], &data.t_m[m], &format!("X{}", m + 1)))
        .collect::<Result<Vec<_>>>()?;

    let factors = DMatrix::from_fn(dims.n, dims.p, |i, m| x[m].scores[i]);
    let mut y = y;
    let c = match cholesky(&(factors.transpose() * &factors)) {
        Some(chol) => {
            let c = chol.solve(&(factors.transpose() * &y.scores));
            // The g proxy has unit variance; the model wants unit structural
            // residual variance instead.
            let resid_var = (&y.scores - &factors * &c).norm_squared() / dims.n as f64;
            if resid_var > 1e-8 {
                let s = resid_var.sqrt();
                y.loading *= s;
                c / s
            } else {
                c
            }
        }
        None => {
            warn!("factor proxies are collinear, drawing the structural start at random");
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let normal = Normal::new(0.0, 0.1).expect("valid normal");
            DVector::from_fn(dims.p, |_, _| normal.sample(&mut rng))
        }
    };

    let mut d_m = Vec::with_capacity(dims.p);
    let mut a = Vec::with_capacity(dims.p);
    let mut sigma2_m = Vec::with_capacity(dims.p);
    for block in x {
        d_m.push(block.d);
        a.push(block.loading);
        sigma2_m.push(block.sigma2);
    }
    Ok(Theta {
        d: y.d,
        d_m,
        b: y.loading,
        a,
        c,
        sigma2_y: y.sigma2,
        sigma2_m,
    })
}

/// One E-step at `theta` followed by the M-step. Returns the updated
/// parameters and the moments the update was computed from.
pub fn em_step(theta: &Theta, data: &Dataset, options: ConditioningOptions) -> Result<(Theta, PosteriorMoments)> {
    let law = conditional_law(theta, data, options)?;
    let moments = posterior_moments(&law);
    let stats = sufficient_stats(data, &moments)?;
    let next = update_theta(&stats, &moments, data)?;
    Ok((next, moments))
}

/// `Σ_k |new[k] − old[k]| / max(|new[k]|, floor)`.
pub fn relative_change(old: &Theta, new: &Theta, floor: f64) -> f64 {
    old.flatten()
        .iter()
        .zip(new.flatten().iter())
        .map(|(o, n)| (n - o).abs() / n.abs().max(floor))
        .sum()
}

/// Reflects factors so that the first loading of each is nonnegative.
pub fn canonicalize(theta: &mut Theta, moments: &mut PosteriorMoments) {
    let flips = theta.sign_flips();
    for (k, &flip) in flips.iter().enumerate() {
        if flip {
            theta.reflect_factor(k);
        }
    }
    moments.reflect(&flips);
}

pub fn fit(data: &Dataset, config: &EmConfig) -> Result<FitResult> {
    config.validate()?;
    data.validate()?;
    let options = config.conditioning();
    let at = |iteration: usize| {
        move |e: Error| Error::Iteration {
            iteration,
            source: Box::new(e),
        }
    };

    let mut theta = initialize(data, config)?;
    let initial_loglik = observed_loglik_with(&theta, data, options).map_err(at(0))?.value;
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.max_iter {
        let (next, _) = em_step(&theta, data, options).map_err(at(iteration))?;
        let change = relative_change(&theta, &next, config.denominator_floor);
        let ll = observed_loglik_with(&next, data, options).map_err(at(iteration))?.value;
        debug!("iteration {iteration}: relative change {change:e}, log-likelihood {ll}");
        trace.push(TraceEntry {
            iteration,
            relative_change: change,
            observed_loglik: ll,
        });
        theta = next;
        if change < config.epsilon {
            converged = true;
            break;
        }
    }
    let iterations = trace.len();
    let law = conditional_law(&theta, data, options).map_err(at(iterations))?;
    let mut moments = posterior_moments(&law);
    canonicalize(&mut theta, &mut moments);
    Ok(FitResult {
        theta,
        moments,
        iterations,
        converged,
        trace,
        initial_loglik,
    })
}

/// Dimensions of a fitted model.
pub fn fitted_dims(result: &FitResult) -> Dimensions {
    let theta = &result.theta;
    Dimensions {
        n: result.moments.n(),
        p: theta.p(),
        q_y: theta.b.len(),
        q_m: theta.a.iter().map(|a| a.len()).collect(),
        r_t: theta.d.nrows(),
        r_m: theta.d_m.iter().map(|d| d.nrows()).collect(),
    }
}
