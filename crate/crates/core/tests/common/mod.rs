//! Test oracles written independently of the crate's block formulas.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sem_em::{Dataset, Dimensions, Latents, Theta};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn random_theta(rng: &mut ChaCha8Rng, dims: &Dimensions) -> Theta {
    let mut theta = Theta::zeros(dims);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    theta.d.iter_mut().for_each(|v| *v = u(-1.0, 1.0));
    theta.b.iter_mut().for_each(|v| *v = u(-1.5, 1.5));
    theta.c.iter_mut().for_each(|v| *v = u(-1.0, 1.0));
    theta.sigma2_y = u(0.3, 2.0);
    for m in 0..dims.p {
        theta.d_m[m].iter_mut().for_each(|v| *v = u(-1.0, 1.0));
        theta.a[m].iter_mut().for_each(|v| *v = u(-1.5, 1.5));
        theta.sigma2_m[m] = u(0.3, 2.0);
    }
    theta
}

/// Observations with Gaussian entries, unrelated to any θ.
pub fn random_data(rng: &mut ChaCha8Rng, dims: &Dimensions) -> Dataset {
    let n = dims.n;
    Dataset::new(
        normal_matrix(rng, n, dims.q_y),
        dims.q_m.iter().map(|&q| normal_matrix(rng, n, q)).collect(),
        normal_matrix(rng, n, dims.r_t),
        dims.r_m.iter().map(|&r| normal_matrix(rng, n, r)).collect(),
        false,
    )
    .unwrap()
}

pub fn random_latents(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Latents {
    let mut col = || DVector::from_fn(n, |_, _| StandardNormal.sample(&mut *rng));
    Latents {
        g: col(),
        f: (0..p).map(|_| col()).collect(),
    }
}

/// Latent vector `z = (g, f¹..fᵖ)` and observation `o = (y, x¹..xᵖ)`:
/// `o = mean + Λ z + noise`. Returns `(Φ = Var z, Λ, Ψ = Var noise)`.
pub fn latent_form(theta: &Theta) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let p = theta.c.len();
    let q_y = theta.b.len();
    let q_total = q_y + theta.a.iter().map(|a| a.len()).sum::<usize>();

    let mut phi = DMatrix::identity(p + 1, p + 1);
    phi[(0, 0)] = theta.c.dot(&theta.c) + 1.0;
    for m in 0..p {
        phi[(0, m + 1)] = theta.c[m];
        phi[(m + 1, 0)] = theta.c[m];
    }

    let mut lambda = DMatrix::zeros(q_total, p + 1);
    let mut psi = DVector::zeros(q_total);
    for j in 0..q_y {
        lambda[(j, 0)] = theta.b[j];
        psi[j] = theta.sigma2_y;
    }
    let mut row = q_y;
    for m in 0..p {
        for j in 0..theta.a[m].len() {
            lambda[(row, m + 1)] = theta.a[m][j];
            psi[row] = theta.sigma2_m[m];
            row += 1;
        }
    }
    (phi, lambda, psi)
}

/// Row `i` of `(y, x¹..xᵖ)` minus its covariate mean.
pub fn centered_row(theta: &Theta, data: &Dataset, i: usize) -> DVector<f64> {
    let mut out = Vec::new();
    let y = data.y.row(i) - data.t.row(i) * &theta.d;
    out.extend(y.iter());
    for m in 0..data.x.len() {
        let x = data.x[m].row(i) - data.t_m[m].row(i) * &theta.d_m[m];
        out.extend(x.iter());
    }
    DVector::from_vec(out)
}

/// Conditional mean of `z` given unit `i` and the shared conditional
/// covariance, by conditioning the full joint Gaussian with an explicit
/// inverse.
pub fn direct_conditioning(theta: &Theta, data: &Dataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let (phi, lambda, psi) = latent_form(theta);
    let cov_oo = &lambda * &phi * lambda.transpose() + DMatrix::from_diagonal(&psi);
    let cov_zo = &phi * lambda.transpose();
    let inv = cov_oo.try_inverse().expect("invertible observed covariance");
    let gain = &cov_zo * &inv;
    let sigma = &phi - &gain * cov_zo.transpose();
    let n = data.y.nrows();
    let mut means = DMatrix::zeros(n, phi.nrows());
    for i in 0..n {
        let m = &gain * centered_row(theta, data, i);
        means.row_mut(i).copy_from(&m.transpose());
    }
    (means, sigma)
}

/// Σ_i log N(o_i; mean_i, ΛΦΛ' + Ψ) through the dense determinant and inverse.
pub fn dense_observed_loglik(theta: &Theta, data: &Dataset) -> f64 {
    let (phi, lambda, psi) = latent_form(theta);
    let cov = &lambda * &phi * lambda.transpose() + DMatrix::from_diagonal(&psi);
    let k = cov.nrows() as f64;
    let log_det = cov.determinant().ln();
    let inv = cov.try_inverse().unwrap();
    (0..data.y.nrows())
        .map(|i| {
            let o = centered_row(theta, data, i);
            -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + log_det + (o.transpose() * &inv * &o)[(0, 0)])
        })
        .sum()
}

/// Posterior summaries from self-normalised importance sampling with the
/// prior as proposal: draw `z` from the structural model, weight by the
/// measurement likelihood of unit 0.
pub struct MonteCarlo {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    pub mean_se: DVector<f64>,
    pub var_se: DVector<f64>,
    pub ess: f64,
}

pub fn importance_posterior(theta: &Theta, data: &Dataset, draws: usize, seed: u64) -> MonteCarlo {
    let p = theta.c.len();
    let (_, lambda, psi) = latent_form(theta);
    let o = centered_row(theta, data, 0);
    let mut rng = rng(seed);
    let mut samples = Vec::with_capacity(draws);
    let mut log_w = Vec::with_capacity(draws);
    for _ in 0..draws {
        let f: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let eps: f64 = StandardNormal.sample(&mut rng);
        let mut z = DVector::zeros(p + 1);
        z[0] = theta.c.dot(&f) + eps;
        z.rows_mut(1, p).copy_from(&f);
        let r = &o - &lambda * &z;
        log_w.push(-0.5 * r.iter().zip(psi.iter()).map(|(r, s)| r * r / s).sum::<f64>());
        samples.push(z);
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / total).collect();
    let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();

    let k = p + 1;
    let mut mean = DVector::zeros(k);
    for (wi, z) in w.iter().zip(&samples) {
        mean += z * *wi;
    }
    let mut var: DVector<f64> = DVector::zeros(k);
    let mut fourth: DVector<f64> = DVector::zeros(k);
    for (wi, z) in w.iter().zip(&samples) {
        for j in 0..k {
            let d = z[j] - mean[j];
            var[j] += wi * d * d;
            fourth[j] += wi * d.powi(4);
        }
    }
    let mean_se = var.map(|v: f64| (v / ess).sqrt());
    let var_se = DVector::from_fn(k, |j, _| ((fourth[j] - var[j] * var[j]) / ess).sqrt());
    MonteCarlo {
        mean,
        var,
        mean_se,
        var_se,
        ess,
    }
}
