//! List-decodable linear regression from batches.
//!
//! Given `m` batches of `n` labeled points of which only an `alpha` fraction
//! are clean, [`driver::batch_list_decode`] returns a short list of regressors,
//! one of which is close to the truth.

pub mod driver;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod listmean;
pub mod model;
pub mod moments;
pub mod pruning;
pub mod rng;
mod simplex;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
