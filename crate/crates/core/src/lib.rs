pub mod align;
pub mod config;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod nonlocal;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
