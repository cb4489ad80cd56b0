//! Desk-scale conditional video diffusion with learnable spline activations
//! and statistics-aligned depth conditioning.

pub mod asd;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;
pub mod pda;
pub mod spline;
pub mod synthdata;

pub use error::{Error, Result};
