pub mod annotations;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod postproc;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
