//! Joint linked component analysis for multiview data.

pub mod cli;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod selection;
pub mod simulation;
pub mod solver;

pub use error::{Error, Result};
