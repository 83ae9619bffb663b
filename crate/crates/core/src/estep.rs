//! Conditional law of the latents `h = (g, f¹, …, fᵖ)` given the observations
//! `z = (y, x¹, …, xᵖ)`.
//!
//! `(h, z)` is jointly Gaussian with
//!
//! ```text
//! Var(h) = S1,   Cov(h, z) = S2,   Var(z) = S3
//! ```
//!
//! so `h | zᵢ ~ N(Mᵢ, Σ)` with `Mᵢ = S2 S3⁻¹ μᵢ` and `Σ = S1 − S2 S3⁻¹ S2'`,
//! where `μᵢ` stacks the covariate-adjusted observations of unit `i`.
//! `Σ` is shared by every unit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize};
use crate::model::{Dataset, Dimensions, Latents, Theta};

const JITTER: f64 = 1e-8;

/// Joint covariance blocks of latents and observations.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBlocks {
    /// `(p+1) × (p+1)` latent covariance.
    pub s1: DMatrix<f64>,
    /// `(p+1) × q_total` latent/observed cross-covariance.
    pub s2: DMatrix<f64>,
    /// `q_total × q_total` observed covariance.
    pub s3: DMatrix<f64>,
}

pub fn build_joint_blocks(theta: &Theta, dims: &Dimensions) -> Result<JointBlocks> {
    theta.validate(dims)?;
    let p = dims.p;
    let q = dims.q_total();
    let offsets = dims.block_offsets();
    let var_g = theta.c.norm_squared() + 1.0;

    let mut s1 = DMatrix::identity(p + 1, p + 1);
    s1[(0, 0)] = var_g;
    for m in 0..p {
        s1[(0, m + 1)] = theta.c[m];
        s1[(m + 1, 0)] = theta.c[m];
    }

    let b = &theta.b;
    let mut s2 = DMatrix::zeros(p + 1, q);
    s2.view_mut((0, 0), (1, dims.q_y)).copy_from(&(b.transpose() * var_g));
    for m in 0..p {
        let a = &theta.a[m];
        let off = offsets[m + 1];
        s2.view_mut((0, off), (1, a.len()))
            .copy_from(&(a.transpose() * theta.c[m]));
        s2.view_mut((m + 1, 0), (1, dims.q_y))
            .copy_from(&(b.transpose() * theta.c[m]));
        s2.view_mut((m + 1, off), (1, a.len())).copy_from(&a.transpose());
    }

    let mut s3 = DMatrix::zeros(q, q);
    let mut yy = b * b.transpose() * var_g;
    for j in 0..dims.q_y {
        yy[(j, j)] += theta.sigma2_y;
    }
    s3.view_mut((0, 0), (dims.q_y, dims.q_y)).copy_from(&yy);
    for m in 0..p {
        let a = &theta.a[m];
        let off = offsets[m + 1];
        let qm = a.len();
        let mut xx = a * a.transpose();
        for j in 0..qm {
            xx[(j, j)] += theta.sigma2_m[m];
        }
        s3.view_mut((off, off), (qm, qm)).copy_from(&xx);
        let yx = b * a.transpose() * theta.c[m];
        s3.view_mut((0, off), (dims.q_y, qm)).copy_from(&yx);
        s3.view_mut((off, 0), (qm, dims.q_y)).copy_from(&yx.transpose());
    }

    Ok(JointBlocks { s1, s2, s3 })
}

/// Covariate-adjusted observations `μᵢ'` stacked as rows of an `n × q_total`
/// matrix: `(yᵢ − D'tᵢ, xᵢ¹ − D¹'tᵢ¹, …)`.
pub fn centered_observations(theta: &Theta, data: &Dataset) -> DMatrix<f64> {
    let dims = data.dims();
    let offsets = dims.block_offsets();
    let mut mu = DMatrix::zeros(dims.n, dims.q_total());
    mu.view_mut((0, 0), (dims.n, dims.q_y))
        .copy_from(&(&data.y - &data.t * &theta.d));
    for m in 0..dims.p {
        let r = &data.x[m] - &data.t_m[m] * &theta.d_m[m];
        mu.view_mut((0, offsets[m + 1]), (dims.n, dims.q_m[m])).copy_from(&r);
    }
    mu
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConditioningOptions {
    /// Adds `1e-8` to the diagonal of the observed covariance before
    /// factorising. Off unless explicitly requested.
    pub jitter: bool,
}

/// `h | zᵢ ~ N(Mᵢ, Σ)` for every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLaw {
    /// `n × (p+1)`; row `i` is `Mᵢ'`, column 0 is `g`.
    pub means: DMatrix<f64>,
    /// `(p+1) × (p+1)`, shared by all units.
    pub sigma: DMatrix<f64>,
}

pub fn conditional_law(theta: &Theta, data: &Dataset, options: ConditioningOptions) -> Result<ConditionalLaw> {
    let dims = data.dims();
    check_data_shape(theta, &dims)?;
    let blocks = build_joint_blocks(theta, &dims)?;
    let mut s3 = blocks.s3;
    if options.jitter {
        for j in 0..s3.nrows() {
            s3[(j, j)] += JITTER;
        }
    }
    let chol = cholesky(&s3).ok_or_else(|| Error::NotPositiveDefinite {
        state: describe_state(theta),
    })?;
    // S3⁻¹ S2', one solve per latent.
    let gain = chol.solve(&blocks.s2.transpose());
    let mut sigma = &blocks.s1 - &blocks.s2 * &gain;
    symmetrize(&mut sigma);
    let means = centered_observations(theta, data) * gain;
    Ok(ConditionalLaw { means, sigma })
}

fn check_data_shape(theta: &Theta, dims: &Dimensions) -> Result<()> {
    theta
        .check_shape(dims)
        .map_err(|_| Error::Shape("parameters do not match the dataset's block widths".into()))
}

pub(crate) fn describe_state(theta: &Theta) -> String {
    format!(
        "sigma2_Y = {:e}, sigma2_m = {:?}, |b| = {:e}, c = {:?}",
        theta.sigma2_y,
        theta.sigma2_m,
        theta.b.norm(),
        theta.c.as_slice()
    )
}

/// First and second conditional moments of the latents, per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    /// `E[gᵢ | zᵢ]`; these are the factor scores of `g`.
    pub g_tilde: DVector<f64>,
    /// `E[fᵢᵐ | zᵢ]` for each block.
    pub f_tilde: Vec<DVector<f64>>,
    /// `E[gᵢ² | zᵢ]`.
    pub gamma_tilde: DVector<f64>,
    /// `E[(fᵢᵐ)² | zᵢ]` for each block.
    pub phi_tilde: Vec<DVector<f64>>,
    /// `E[fᵢᵐ gᵢ | zᵢ]` for each block.
    pub cross_fg: Vec<DVector<f64>>,
    /// `E[fᵢᵐ fᵢˡ | zᵢ]`, indexed `[m][l]`.
    pub cross_ff: Vec<Vec<DVector<f64>>>,
    /// Shared conditional covariance `Σ`.
    pub sigma: DMatrix<f64>,
}

pub fn posterior_moments(law: &ConditionalLaw) -> PosteriorMoments {
    let p = law.sigma.nrows() - 1;
    let s = &law.sigma;
    let mean = |k: usize| law.means.column(k).into_owned();
    let second = |j: usize, k: usize| -> DVector<f64> {
        law.means
            .column(j)
            .component_mul(&law.means.column(k))
            .add_scalar(s[(j, k)])
    };
    PosteriorMoments {
        g_tilde: mean(0),
        f_tilde: (1..=p).map(mean).collect(),
        gamma_tilde: second(0, 0),
        phi_tilde: (1..=p).map(|m| second(m, m)).collect(),
        cross_fg: (1..=p).map(|m| second(m, 0)).collect(),
        cross_ff: (1..=p).map(|m| (1..=p).map(|l| second(m, l)).collect()).collect(),
        sigma: s.clone(),
    }
}

impl PosteriorMoments {
    pub fn n(&self) -> usize {
        self.g_tilde.len()
    }

    pub fn p(&self) -> usize {
        self.f_tilde.len()
    }

    /// Posterior means as latent values (the factor scores).
    pub fn factor_scores(&self) -> Latents {
        Latents {
            g: self.g_tilde.clone(),
            f: self.f_tilde.clone(),
        }
    }

    /// `E[hᵢ hᵢ' | zᵢ]` for unit `i`.
    pub fn second_moment(&self, i: usize) -> DMatrix<f64> {
        let p = self.p();
        let mut out = DMatrix::zeros(p + 1, p + 1);
        out[(0, 0)] = self.gamma_tilde[i];
        for m in 0..p {
            out[(0, m + 1)] = self.cross_fg[m][i];
            out[(m + 1, 0)] = self.cross_fg[m][i];
            for l in 0..p {
                out[(m + 1, l + 1)] = self.cross_ff[m][l][i];
            }
        }
        out
    }

    /// Reflects the factors marked in `flips` (0 = `g`, m = `fᵐ`).
    pub fn reflect(&mut self, flips: &[bool]) {
        let sign = |k: usize| if flips[k] { -1.0 } else { 1.0 };
        let p = self.p();
        if flips[0] {
            self.g_tilde.neg_mut();
        }
        for m in 0..p {
            if flips[m + 1] {
                self.f_tilde[m].neg_mut();
            }
            self.cross_fg[m] *= sign(0) * sign(m + 1);
            for l in 0..p {
                self.cross_ff[m][l] *= sign(m + 1) * sign(l + 1);
            }
        }
        for j in 0..=p {
            for k in 0..=p {
                self.sigma[(j, k)] *= sign(j) * sign(k);
            }
        }
    }

    pub fn select_units(&self, units: &[usize]) -> PosteriorMoments {
        let pick = |v: &DVector<f64>| v.select_rows(units);
        PosteriorMoments {
            g_tilde: pick(&self.g_tilde),
            f_tilde: self.f_tilde.iter().map(pick).collect(),
            gamma_tilde: pick(&self.gamma_tilde),
            phi_tilde: self.phi_tilde.iter().map(pick).collect(),
            cross_fg: self.cross_fg.iter().map(pick).collect(),
            cross_ff: self.cross_ff.iter().map(|row| row.iter().map(pick).collect()).collect(),
            sigma: self.sigma.clone(),
        }
    }
}
