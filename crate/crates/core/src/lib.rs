//! Manifold-constrained generative sampling.
//!
//! Data on a low-dimensional manifold are embedded with Diffusion Maps, the
//! latent density is sampled with a score-based diffusion model or with the
//! PLoM Itô sampler, and latent samples are lifted back to the ambient space
//! with Latent Harmonics (double Diffusion Maps).

pub mod dmaps;
pub mod error;
pub mod filter;
pub mod io;
pub mod latent_harmonics;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod plom;
pub mod rng;
pub mod score;
pub mod scurve;

pub use error::{Error, Result};
