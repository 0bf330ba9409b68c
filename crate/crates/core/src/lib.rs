//! Graph gamma process linear dynamical systems.
//!
//! Real-valued series use a linear-Gaussian observation layer; count series
//! use a negative binomial layer with Pólya-Gamma augmentation. The sparse
//! transition matrix `W ⊙ Z` is driven by a gamma-process random graph whose
//! overlapping communities split the latent dynamics into interpretable
//! sub-sequences.

pub mod datasets;
pub mod error;
pub mod forecast;
pub mod ggp;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod gibbs;
pub mod persist;

pub use error::{Error, Result};
pub use model::{
    DataKind, GgpState, Hyperparameters, LatentTrajectory, ModelState, ObservationKind, ObservationNoise,
    ObservationState, PosteriorSample, TimeSeriesData, TransitionState,
};
pub use persist::Posterior;
pub use rng::RngStream;

pub use nalgebra;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/samplers.md")]
    mod samplers {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    mod decomposition {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/persistence.md")]
    mod persistence {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
