pub mod config;
pub mod corpus;
pub mod diff;
pub mod error;
pub mod eval;
pub mod expansion;
#[cfg(test)]
mod http_stub;
pub mod java;
pub mod pipeline;
pub mod ranker;
pub mod scorer;
pub mod tracker;

pub use error::{Error, Result};
