//! Exact key-value lookup over a hybrid of a compact multi-task network and
//! the auxiliary structures that make it lossless: a table of misclassified
//! rows, an existence bit vector, and the value decode map.

pub mod baselines;
pub mod bench;
pub mod cache;
pub mod codec;
pub mod encoding;
pub mod error;
pub mod hybrid;
pub mod io;
pub mod mhas;
pub mod neural;
pub mod repr;
pub mod store;

pub use error::{Error, Result};
