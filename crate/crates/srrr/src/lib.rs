//! Sparse reduced rank regression with adaptive group Lasso penalties.

pub mod error;
pub mod matrix;
pub mod rrr;
mod seeding;
pub mod solver;

pub use error::{Error, Result};
