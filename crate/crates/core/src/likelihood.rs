//! Log-likelihoods of the model. All values include the full Gaussian
//! normalising constants, so complete, observed and conditional densities
//! satisfy `log p(z, h) = log p(z) + log p(h | z)` exactly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estep::{build_joint_blocks, centered_observations, describe_state, ConditioningOptions, PosteriorMoments};
use crate::linalg::cholesky;
use crate::model::{Dataset, Latents, Theta};

/// A log-likelihood and its per-unit contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLik {
    pub value: f64,
    pub per_unit: DVector<f64>,
}

impl LogLik {
    fn from_units(per_unit: DVector<f64>) -> Self {
        LogLik {
            value: per_unit.sum(),
            per_unit,
        }
    }
}

fn ln_2pi() -> f64 {
    (2.0 * PI).ln()
}

/// Residuals `Y − TD − g b'` and `Xᵐ − TᵐDᵐ − fᵐ aᵐ'` for given latent values.
fn residuals(theta: &Theta, data: &Dataset, latents: &Latents) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let ry = &data.y - &data.t * &theta.d - &latents.g * theta.b.transpose();
    let rx = (0..data.p())
        .map(|m| &data.x[m] - &data.t_m[m] * &theta.d_m[m] - &latents.f[m] * theta.a[m].transpose())
        .collect();
    (ry, rx)
}

fn structural_residual(theta: &Theta, latents: &Latents) -> DVector<f64> {
    let mut e = latents.g.clone();
    for (m, f) in latents.f.iter().enumerate() {
        e.axpy(-theta.c[m], f, 1.0);
    }
    e
}

fn check_latents(data: &Dataset, latents: &Latents) -> Result<()> {
    if latents.f.len() != data.p() || latents.g.len() != data.n() || latents.f.iter().any(|f| f.len() != data.n()) {
        return Err(Error::Shape("latent values do not match the dataset".into()));
    }
    Ok(())
}

/// Joint log-density of observations and latents.
pub fn complete_loglik(theta: &Theta, data: &Dataset, latents: &Latents) -> Result<LogLik> {
    let dims = data.dims();
    theta.validate(&dims)?;
    check_latents(data, latents)?;
    let (ry, rx) = residuals(theta, data, latents);
    let e = structural_residual(theta, latents);
    let constant = -0.5 * (dims.q_total() + dims.p + 1) as f64 * ln_2pi()
        - 0.5 * dims.q_y as f64 * theta.sigma2_y.ln()
        - 0.5
            * (0..dims.p)
                .map(|m| dims.q_m[m] as f64 * theta.sigma2_m[m].ln())
                .sum::<f64>();
    let per_unit = DVector::from_fn(dims.n, |i, _| {
        let mut quad = ry.row(i).norm_squared() / theta.sigma2_y;
        for ((r, s2), f) in rx.iter().zip(&theta.sigma2_m).zip(&latents.f) {
            quad += r.row(i).norm_squared() / s2 + f[i].powi(2);
        }
        quad += e[i].powi(2);
        constant - 0.5 * quad
    });
    Ok(LogLik::from_units(per_unit))
}

/// Marginal log-density of the observations, latents integrated out.
pub fn observed_loglik(theta: &Theta, data: &Dataset) -> Result<LogLik> {
    observed_loglik_with(theta, data, ConditioningOptions::default())
}

pub fn observed_loglik_with(theta: &Theta, data: &Dataset, options: ConditioningOptions) -> Result<LogLik> {
    let dims = data.dims();
    let mut s3 = build_joint_blocks(theta, &dims)?.s3;
    if options.jitter {
        for j in 0..s3.nrows() {
            s3[(j, j)] += 1e-8;
        }
    }
    let chol = cholesky(&s3).ok_or_else(|| Error::NotPositiveDefinite {
        state: describe_state(theta),
    })?;
    let l = chol.l();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let constant = -0.5 * (dims.q_total() as f64 * ln_2pi() + log_det);
    let mu_t = centered_observations(theta, data).transpose();
    let whitened = l
        .solve_lower_triangular(&mu_t)
        .expect("Cholesky factor has a positive diagonal");
    let per_unit = DVector::from_fn(dims.n, |i, _| constant - 0.5 * whitened.column(i).norm_squared());
    Ok(LogLik::from_units(per_unit))
}

/// `Q(θ) = E[log p(z, h; θ) | z]` with the conditional moments held fixed.
pub fn expected_complete_loglik(theta: &Theta, data: &Dataset, moments: &PosteriorMoments) -> Result<f64> {
    let dims = data.dims();
    theta.validate(&dims)?;
    let p = dims.p;
    let sq = expected_squared_residuals(theta, data, moments);
    let n = dims.n as f64;
    let mut q = -0.5 * n * (dims.q_total() + p + 1) as f64 * ln_2pi();
    q -= 0.5 * n * dims.q_y as f64 * theta.sigma2_y.ln() + 0.5 * sq.y / theta.sigma2_y;
    for m in 0..p {
        q -= 0.5 * n * dims.q_m[m] as f64 * theta.sigma2_m[m].ln() + 0.5 * sq.x[m] / theta.sigma2_m[m];
        q -= 0.5 * moments.phi_tilde[m].sum();
    }
    q -= 0.5 * sq.structural;
    Ok(q)
}

pub(crate) struct ExpectedSquares {
    /// `Σᵢ E‖yᵢ − D'tᵢ − gᵢ b‖²`
    pub y: f64,
    pub x: Vec<f64>,
    /// `Σᵢ E(gᵢ − c'fᵢ)²`
    pub structural: f64,
}

pub(crate) fn expected_squared_residuals(theta: &Theta, data: &Dataset, moments: &PosteriorMoments) -> ExpectedSquares {
    let p = data.p();
    let block = |r0: DMatrix<f64>, load: &DVector<f64>, mean: &DVector<f64>, second: &DVector<f64>| {
        let proj = &r0 * load;
        r0.norm_squared() - 2.0 * mean.dot(&proj) + second.sum() * load.norm_squared()
    };
    let y = block(
        &data.y - &data.t * &theta.d,
        &theta.b,
        &moments.g_tilde,
        &moments.gamma_tilde,
    );
    let x = (0..p)
        .map(|m| {
            block(
                &data.x[m] - &data.t_m[m] * &theta.d_m[m],
                &theta.a[m],
                &moments.f_tilde[m],
                &moments.phi_tilde[m],
            )
        })
        .collect();
    let mut structural = moments.gamma_tilde.sum();
    for m in 0..p {
        structural -= 2.0 * theta.c[m] * moments.cross_fg[m].sum();
        for l in 0..p {
            structural += theta.c[m] * theta.c[l] * moments.cross_ff[m][l].sum();
        }
    }
    ExpectedSquares { y, x, structural }
}

/// A gradient with respect to θ, laid out like [`Theta`].
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub d: DMatrix<f64>,
    pub d_m: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
    pub a: Vec<DVector<f64>>,
    pub c: DVector<f64>,
    pub sigma2_y: f64,
    pub sigma2_m: Vec<f64>,
}

impl Score {
    /// Components in canonical θ* order.
    pub fn to_vector(&self) -> DVector<f64> {
        Theta {
            d: self.d.clone(),
            d_m: self.d_m.clone(),
            b: self.b.clone(),
            a: self.a.clone(),
            c: self.c.clone(),
            sigma2_y: self.sigma2_y,
            sigma2_m: self.sigma2_m.clone(),
        }
        .flatten()
    }
}

/// Analytic gradient of [`complete_loglik`].
pub fn complete_score(theta: &Theta, data: &Dataset, latents: &Latents) -> Result<Score> {
    let dims = data.dims();
    theta.validate(&dims)?;
    check_latents(data, latents)?;
    let n = dims.n as f64;
    let (ry, rx) = residuals(theta, data, latents);
    let e = structural_residual(theta, latents);
    let s2y = theta.sigma2_y;
    Ok(Score {
        d: data.t.transpose() * &ry / s2y,
        d_m: (0..dims.p)
            .map(|m| data.t_m[m].transpose() * &rx[m] / theta.sigma2_m[m])
            .collect(),
        b: ry.transpose() * &latents.g / s2y,
        a: (0..dims.p)
            .map(|m| rx[m].transpose() * &latents.f[m] / theta.sigma2_m[m])
            .collect(),
        c: DVector::from_fn(dims.p, |m, _| latents.f[m].dot(&e)),
        sigma2_y: variance_derivative(n * dims.q_y as f64, ry.norm_squared(), s2y),
        sigma2_m: (0..dims.p)
            .map(|m| variance_derivative(n * dims.q_m[m] as f64, rx[m].norm_squared(), theta.sigma2_m[m]))
            .collect(),
    })
}

/// `d/dσ² [−(count/2) ln σ² − ss/(2σ²)]`
pub(crate) fn variance_derivative(count: f64, ss: f64, sigma2: f64) -> f64 {
    -0.5 * count / sigma2 + 0.5 * ss / (sigma2 * sigma2)
}
