//! Time-contrastive learning (TCL) for nonlinear independent component
//! analysis.
//!
//! The crate covers the full chain: sampling nonstationary sources and an
//! invertible nonlinear mixing ([`datagen`]), training a feature extractor
//! to discriminate time segments ([`network`], [`trainer`]), linear ICA on
//! the learned features ([`linear_ica`]), and scoring the recovered
//! components against ground truth ([`evaluation`]). [`experiment`] wires
//! these into seeded pipelines and sweeps; [`io`] holds the on-disk formats.

pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod linear_ica;
pub mod network;
pub mod rng;
pub mod trainer;

pub use error::{Result, TclError};
