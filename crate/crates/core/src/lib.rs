//! Execution simulation and strategy search for parallel DNN training.
//!
//! An operator graph and a device topology form a [`model::Problem`]. A
//! [`soap::ParallelizationStrategy`] partitions every operation into tasks placed
//! on devices; [`taskgraph::TaskGraph`] materializes those tasks and the transfers
//! between them, [`sim`] computes the resulting timeline, and [`search`] looks for
//! faster strategies.

pub mod cli;
pub mod cost;
pub mod error;
pub mod generate;
pub mod io;
pub mod model;
pub mod search;
pub mod sim;
pub mod soap;
pub mod taskgraph;

pub use error::{Error, Result};
