//! Closed-form maximisation of the expected complete log-likelihood.
//!
//! All updates are expressed through unit averages ("bar" quantities) of
//! per-unit products of data and posterior moments. For the `Y` block:
//!
//! ```text
//! b̂  = (ḡy − ȳt (t̄t)⁻¹ ḡt) / (γ̄ − ḡt' (t̄t)⁻¹ ḡt)
//! D̂' = (ȳt − b̂ ḡt') (t̄t)⁻¹
//! σ̂² = 1/(n q) Σᵢ ‖yᵢ − D̂'tᵢ‖² + ‖b̂‖² γ̃ᵢ − 2 (yᵢ − D̂'tᵢ)' b̂ g̃ᵢ
//! ```
//!
//! and likewise for each explanatory block. The structural coefficients solve
//! the `p × p` system `A ĉ = v` with `A_ml = E[fᵐ fˡ]` and `v_m = E[fᵐ g]`
//! averaged over units.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estep::PosteriorMoments;
use crate::likelihood::{expected_squared_residuals, variance_derivative, Score};
use crate::linalg::cholesky;
use crate::model::{Dataset, Theta};

/// Lower bound applied to variance updates.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Unit averages for one measurement block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    /// `r × r`, mean of `tᵢ tᵢ'`.
    pub mean_tt: DMatrix<f64>,
    /// `q × r`, mean of `xᵢ tᵢ'`.
    pub mean_xt: DMatrix<f64>,
    /// `r`, mean of `f̃ᵢ tᵢ`.
    pub mean_ft: DVector<f64>,
    /// `q`, mean of `f̃ᵢ xᵢ`.
    pub mean_fx: DVector<f64>,
    /// Mean of the posterior second moment of the block's factor.
    pub mean_second: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    /// The `Y` block, with `g` as its factor.
    pub y: BlockStats,
    /// Explanatory blocks.
    pub x: Vec<BlockStats>,
    /// `v_m = σ_{1,m+1} + mean(f̃ᵐ g̃)`.
    pub v: DVector<f64>,
    /// `A_ml = σ_{m+1,l+1} + mean(f̃ᵐ f̃ˡ)`.
    pub structural: DMatrix<f64>,
}

fn block_stats(obs: &DMatrix<f64>, cov: &DMatrix<f64>, mean: &DVector<f64>, second: &DVector<f64>) -> BlockStats {
    let n = obs.nrows() as f64;
    BlockStats {
        mean_tt: cov.transpose() * cov / n,
        mean_xt: obs.transpose() * cov / n,
        mean_ft: cov.transpose() * mean / n,
        mean_fx: obs.transpose() * mean / n,
        mean_second: second.mean(),
    }
}

pub fn sufficient_stats(data: &Dataset, moments: &PosteriorMoments) -> Result<SufficientStats> {
    let p = data.p();
    if moments.n() != data.n() || moments.p() != p {
        return Err(Error::Shape("posterior moments do not match the dataset".into()));
    }
    Ok(SufficientStats {
        n: data.n(),
        y: block_stats(&data.y, &data.t, &moments.g_tilde, &moments.gamma_tilde),
        x: (0..p)
            .map(|m| block_stats(&data.x[m], &data.t_m[m], &moments.f_tilde[m], &moments.phi_tilde[m]))
            .collect(),
        v: DVector::from_fn(p, |m, _| moments.cross_fg[m].mean()),
        structural: DMatrix::from_fn(p, p, |m, l| moments.cross_ff[m][l].mean()),
    })
}

/// Loading and regression matrix of one block; `(a, D)` with `D` as `r × q`.
fn block_update(stats: &BlockStats, name: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chol = cholesky(&stats.mean_tt).ok_or_else(|| Error::CollinearCovariates { block: name.into() })?;
    let tt_inv_ft = chol.solve(&stats.mean_ft);
    let denom = stats.mean_second - stats.mean_ft.dot(&tt_inv_ft);
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::DegeneratePosterior {
            block: name.into(),
            value: denom,
        });
    }
    let loading = (&stats.mean_fx - &stats.mean_xt * &tt_inv_ft) / denom;
    // D = (t̄t)⁻¹ (x̄t − a f̄t')'
    let rhs = stats.mean_xt.transpose() - &stats.mean_ft * loading.transpose();
    let d = chol.solve(&rhs);
    Ok((loading, d))
}

fn variance_update(ss: f64, count: usize, name: &str) -> f64 {
    let v = ss / count as f64;
    if v < VARIANCE_FLOOR {
        warn!("variance {name} = {v:e} floored at {VARIANCE_FLOOR:e}");
        VARIANCE_FLOOR
    } else {
        v
    }
}

/// The maximiser of the expected complete log-likelihood for fixed moments.
pub fn update_theta(stats: &SufficientStats, moments: &PosteriorMoments, data: &Dataset) -> Result<Theta> {
    let dims = data.dims();
    let p = dims.p;
    let (b, d) = block_update(&stats.y, "Y")?;
    let mut a = Vec::with_capacity(p);
    let mut d_m = Vec::with_capacity(p);
    for (m, block) in stats.x.iter().enumerate() {
        let (am, dm) = block_update(block, &format!("X{}", m + 1))?;
        a.push(am);
        d_m.push(dm);
    }
    let c = stats
        .structural
        .clone()
        .lu()
        .solve(&stats.v)
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularStructural)?;

    let mut theta = Theta {
        d,
        d_m,
        b,
        a,
        c,
        sigma2_y: 1.0,
        sigma2_m: vec![1.0; p],
    };
    let sq = expected_squared_residuals(&theta, data, moments);
    theta.sigma2_y = variance_update(sq.y, dims.n * dims.q_y, "sigma2_Y");
    for m in 0..p {
        theta.sigma2_m[m] = variance_update(sq.x[m], dims.n * dims.q_m[m], &format!("sigma2_{}", m + 1));
    }
    Ok(theta)
}

/// Gradient of the expected complete log-likelihood `Q(θ)` with the
/// posterior moments held fixed. Every component vanishes at the output of
/// [`update_theta`].
pub fn expected_score(theta: &Theta, data: &Dataset, moments: &PosteriorMoments) -> Result<Score> {
    let dims = data.dims();
    theta.validate(&dims)?;
    let p = dims.p;
    let n = dims.n as f64;
    let sq = expected_squared_residuals(theta, data, moments);

    let block = |obs: &DMatrix<f64>,
                 cov: &DMatrix<f64>,
                 d: &DMatrix<f64>,
                 load: &DVector<f64>,
                 mean: &DVector<f64>,
                 second: &DVector<f64>,
                 s2: f64| {
        let r0 = obs - cov * d;
        let grad_d = cov.transpose() * (&r0 - mean * load.transpose()) / s2;
        let grad_load = (r0.transpose() * mean - load * second.sum()) / s2;
        (grad_d, grad_load)
    };
    let (d, b) = block(
        &data.y,
        &data.t,
        &theta.d,
        &theta.b,
        &moments.g_tilde,
        &moments.gamma_tilde,
        theta.sigma2_y,
    );
    let mut d_m = Vec::with_capacity(p);
    let mut a = Vec::with_capacity(p);
    for m in 0..p {
        let (dm, am) = block(
            &data.x[m],
            &data.t_m[m],
            &theta.d_m[m],
            &theta.a[m],
            &moments.f_tilde[m],
            &moments.phi_tilde[m],
            theta.sigma2_m[m],
        );
        d_m.push(dm);
        a.push(am);
    }
    let c = DVector::from_fn(p, |m, _| {
        moments.cross_fg[m].sum() - (0..p).map(|l| theta.c[l] * moments.cross_ff[m][l].sum()).sum::<f64>()
    });
    Ok(Score {
        d,
        d_m,
        b,
        a,
        c,
        sigma2_y: variance_derivative(n * dims.q_y as f64, sq.y, theta.sigma2_y),
        sigma2_m: (0..p)
            .map(|m| variance_derivative(n * dims.q_m[m] as f64, sq.x[m], theta.sigma2_m[m]))
            .collect(),
    })
}
