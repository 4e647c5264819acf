//! Orthogonal neural operators.
//!
//! The crate is organized bottom-up: [`linalg`] and [`autodiff`] are the
//! numeric substrate, [`attention`] and [`blocks`] the two pathways of the
//! operator, [`model`] stacks them, [`data`] and [`training`] generate data and
//! fit models, and [`eigen`] checks the eigenfunction theory behind the
//! attention numerically.

mod binio;
mod error;

pub mod attention;
pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod diagnostics;
pub mod eigen;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod params;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
