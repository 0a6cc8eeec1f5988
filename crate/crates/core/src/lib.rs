pub mod adjoint;
pub mod analysis;
pub mod config;
pub mod control;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod potentials;
pub mod state;

pub use error::{Error, Result};
