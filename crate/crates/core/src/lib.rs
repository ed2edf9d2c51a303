pub mod cli;
pub mod config;
pub mod constants;
pub mod contraction;
pub mod error;
pub mod markov;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod splitter;
pub mod stats;
pub mod subtree_law;
pub mod tree;
pub mod verify;

pub use error::{Error, Result};
