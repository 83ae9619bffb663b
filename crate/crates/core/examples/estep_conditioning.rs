//! The E-step on a single unit: the exact conditional law of (g, f1, f2)
//! given one observation, and the moments the M-step consumes.

use nalgebra::{DMatrix, DVector};
use sem_em::estep::{build_joint_blocks, conditional_law, posterior_moments};
use sem_em::likelihood::observed_loglik;
use sem_em::{Dataset, Dimensions, Theta};

fn main() -> sem_em::Result<()> {
    let dims = Dimensions::uniform(1, 2, 2, 1)?;
    let mut theta = Theta::zeros(&dims);
    theta.b = DVector::from_vec(vec![1.0, 0.5]);
    theta.a = vec![DVector::from_vec(vec![1.0, -1.0]), DVector::from_vec(vec![0.8, 0.8])];
    theta.c = DVector::from_vec(vec![0.6, 0.3]);
    theta.sigma2_y = 0.5;
    theta.sigma2_m = vec![1.0, 0.25];

    let one = DMatrix::from_element(1, 1, 1.0);
    let data = Dataset::new(
        DMatrix::from_row_slice(1, 2, &[1.5, 0.4]),
        vec![
            DMatrix::from_row_slice(1, 2, &[0.9, -1.2]),
            DMatrix::from_row_slice(1, 2, &[-0.3, 0.1]),
        ],
        one.clone(),
        vec![one.clone(), one],
        true,
    )?;

    let blocks = build_joint_blocks(&theta, &dims)?;
    println!("latent covariance S1:{}", blocks.s1);
    println!("observed covariance S3:{}", blocks.s3);

    let law = conditional_law(&theta, &data, Default::default())?;
    println!("posterior mean (g, f1, f2): {:.4}", law.means.row(0));
    println!("posterior covariance:{:.4}", law.sigma);

    let mo = posterior_moments(&law);
    println!(
        "E[g^2 | o] = {:.4}, E[f1 g | o] = {:.4}",
        mo.gamma_tilde[0], mo.cross_fg[0][0]
    );
    println!("observed log-likelihood: {:.6}", observed_loglik(&theta, &data)?.value);
    Ok(())
}
