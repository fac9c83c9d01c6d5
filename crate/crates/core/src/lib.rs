pub mod error;
pub mod bounds;
pub mod exact_dp;
pub mod kd_chain;
pub mod lattice;
pub mod models;
pub mod numeric;
pub mod solver;
pub mod tapi;
pub mod taylor;

pub use error::{Error, Result};
