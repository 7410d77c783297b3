pub mod bands;
pub mod bootstrap;
pub mod dgp;
pub mod drgmm;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod mam;
pub mod regularized;
pub mod rmd;
pub mod testing;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
