pub mod assembly;
pub mod coefficient;
pub mod corrector;
pub mod error;
pub mod fit;
pub mod harness;
pub mod interpolation;
pub mod mesh;
pub mod quadrature;
pub mod sparse;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
