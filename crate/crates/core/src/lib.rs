//! Spiking-network training engine that distills a multimodal (events +
//! intensity) teacher into an intensity-only spiking student.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod events;
pub mod losses;
pub mod nets;
pub mod pipeline;
pub mod snn;
pub mod tensorgrad;
pub mod train;

pub use error::{Error, Result};
