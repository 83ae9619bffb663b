mod common;

use common::*;
use rand::Rng;
use sem_em::estep::{conditional_law, posterior_moments};
use sem_em::likelihood::{complete_loglik, observed_loglik};
use sem_em::Dimensions;

fn random_dims(rng: &mut rand_chacha::ChaCha8Rng) -> Dimensions {
    let p = rng.random_range(1..=3);
    let n = rng.random_range(2..=12);
    let q_m = (0..p).map(|_| rng.random_range(1..=5)).collect();
    let r_m = (0..p).map(|_| rng.random_range(1..=3)).collect();
    Dimensions::new(n, rng.random_range(1..=5), q_m, rng.random_range(1..=3), r_m).unwrap()
}

#[test]
fn conditional_law_matches_direct_joint_conditioning() {
    let mut rng = rng(2024);
    for case in 0..50 {
        let dims = random_dims(&mut rng);
        let theta = random_theta(&mut rng, &dims);
        let data = random_data(&mut rng, &dims);
        let law = conditional_law(&theta, &data, Default::default()).unwrap();
        let (means, sigma) = direct_conditioning(&theta, &data);
        let dm = (&law.means - &means).amax();
        let ds = (&law.sigma - &sigma).amax();
        assert!(dm < 1e-8 && ds < 1e-8, "case {case}: mean diff {dm}, sigma diff {ds}");
    }
}

#[test]
fn observed_loglik_matches_dense_density() {
    let mut rng = rng(7);
    for case in 0..30 {
        let dims = random_dims(&mut rng);
        let theta = random_theta(&mut rng, &dims);
        let data = random_data(&mut rng, &dims);
        let ours = observed_loglik(&theta, &data).unwrap().value;
        let dense = dense_observed_loglik(&theta, &data);
        assert!(
            (ours - dense).abs() < 1e-9 * dense.abs().max(1.0),
            "case {case}: {ours} vs {dense}"
        );
    }
}

#[test]
fn posterior_second_moments_are_mean_products_plus_covariance() {
    let mut rng = rng(8);
    let dims = Dimensions::new(6, 3, vec![2, 4], 2, vec![1, 2]).unwrap();
    let theta = random_theta(&mut rng, &dims);
    let data = random_data(&mut rng, &dims);
    let (means, sigma) = direct_conditioning(&theta, &data);
    let mo = posterior_moments(&conditional_law(&theta, &data, Default::default()).unwrap());
    for i in 0..dims.n {
        let m = means.row(i).transpose();
        let expected = &m * m.transpose() + &sigma;
        assert!((mo.second_moment(i) - expected).amax() < 1e-8);
    }
}

/// log p(o, z) − log p(o) is the conditional log-density of z, which is the
/// same Gaussian for every z on the conditional-mean line.
#[test]
fn complete_minus_observed_is_the_conditional_density() {
    let mut rng = rng(9);
    let dims = Dimensions::new(1, 2, vec![3, 1], 1, vec![2, 1]).unwrap();
    let theta = random_theta(&mut rng, &dims);
    let data = random_data(&mut rng, &dims);
    let (means, sigma) = direct_conditioning(&theta, &data);
    let latents = random_latents(&mut rng, 1, dims.p);
    let z = latents.as_matrix().row(0).transpose();
    let d = z - means.row(0).transpose();
    let k = d.len() as f64;
    let cond = -0.5
        * (k * (2.0 * std::f64::consts::PI).ln()
            + sigma.determinant().ln()
            + (d.transpose() * sigma.clone().try_inverse().unwrap() * &d)[(0, 0)]);
    let complete = complete_loglik(&theta, &data, &latents).unwrap().value;
    let observed = dense_observed_loglik(&theta, &data);
    assert!((complete - observed - cond).abs() < 1e-8);
}
