//! Bayesian estimation of binary spatial weight matrices in spatial
//! autoregressive panel models.
//!
//! The adjacency pattern `Omega` behind `W` is sampled together with the
//! slopes, fixed effects, `sigma2` and `rho`. See the guide in `book/` for a
//! walk through the model and the API.

pub mod dgp;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod montecarlo;
pub mod priors;
pub mod sampler;

pub use error::{Error, Result};

// The guide's snippets run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/priors.md")]
    mod priors {}
    #[doc = include_str!("../../../book/src/updates.md")]
    mod updates {}
    #[doc = include_str!("../../../book/src/sampler.md")]
    mod sampler {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/outputs.md")]
    mod outputs {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
