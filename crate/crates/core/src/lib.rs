pub mod error;
pub mod experiments;
pub mod hybrid;
pub mod atomistic;
pub mod cauchy_born;
pub mod lattice;
pub mod potentials;
pub mod solver;

pub use error::{Error, Result};
