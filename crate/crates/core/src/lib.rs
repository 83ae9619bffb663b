//! Maximum-likelihood estimation of a structural equation model with one
//! dependent latent factor `g` and `p` explanatory latent factors `f¹..fᵖ`,
//! fitted by EM so that per-unit factor scores come out alongside the
//! parameters.
//!
//! ```text
//! Y  = T D   + g b'  + εʸ
//! Xᵐ = Tᵐ Dᵐ + fᵐ aᵐ' + εᵐ        m = 1..p
//! g  = Σ cᵐ fᵐ + εᵍ,   fᵐ ~ N(0, 1),  εᵍ ~ N(0, 1)
//! ```
//!
//! Noise is isotropic per block (`εʸ ~ N(0, σ²_Y I)`, `εᵐ ~ N(0, σ²_m I)`).
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: dimensions, data, parameters and the canonical flattening θ*.
//! * [`estep`]: the joint Gaussian of latents and observations and the exact
//!   conditional law of the latents.
//! * [`mstep`]: closed-form parameter updates and the expected score.
//! * [`likelihood`]: complete, observed and expected complete log-likelihoods.
//! * [`em`]: initialisation, iteration and stopping rule.
//! * [`simulate`], [`evaluate`]: the simulation protocol and study harnesses.
//! * [`io`], [`cli`]: CSV/JSON files and the command-line front end.

pub mod cli;
pub mod em;
mod error;
pub mod estep;
pub mod evaluate;
pub mod io;
pub mod likelihood;
mod linalg;
pub mod model;
pub mod mstep;
pub mod simulate;

pub use em::{fit, EmConfig, FitResult};
pub use error::{Error, Result};
pub use model::{Dataset, Dimensions, Latents, NoiseMode, Theta};
