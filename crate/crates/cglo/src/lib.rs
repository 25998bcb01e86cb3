//! Conditional generative latent optimization.
//!
//! Trains a deconvolution generator jointly with one free latent code per
//! training patch by alternating gradient descent on weights and codes,
//! with no discriminator and no encoder. A binary condition input separates
//! background from foreground patches, so a background patch can be inverted
//! to its latent code, regenerated with the condition flipped, and pasted
//! back into its source scene as a new annotated foreground instance.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod generator;
pub mod io;
pub mod numerics;
pub mod seeding;
pub mod synthesis;
pub mod trainer;

pub use error::{Error, Result};
