//! Dual-rate driving policy: a large encoder run asynchronously on past
//! frames, a latent forecaster that rolls its features forward, and a small
//! encoder on the current frame, fused by an action decoder.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod scheduler;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
