//! Views knowledge distillation (VKD) for re-identification.
//!
//! A teacher network that sees many camera views of an identity is distilled
//! into a student that sees only a few. This crate holds the numerical core:
//! dataset model and synthetic renderer, batch samplers, a small CNN with
//! hand-written backpropagation, the four training losses, the two training
//! stages, cross-camera evaluation and the camera-bias probes.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File IO, image codecs and the command line live in the `vkd`
//! companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod checkpoint;
pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod images;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
