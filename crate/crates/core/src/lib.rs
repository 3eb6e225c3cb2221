pub mod autodiff;
pub mod classical;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mixing;
pub mod model;
pub mod objectives;
pub mod scene;
pub mod wavelet;

pub use error::{Error, Result};
