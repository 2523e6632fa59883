//! Training-free generative semantic communication over noisy channels,
//! simulated at desk scale.
//!
//! A source latent is pushed a few steps up the diffusion noise ladder by
//! DDIM inversion, power-normalized and sent over an AWGN channel. The
//! receiver treats the channel output as a partially noised latent,
//! continues the forward process, and denoises with a step count matched
//! to the total noise actually present.

pub mod analysis;
pub mod channel;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
