//! Marginal inference for the stochastic SIR process on graphs.
//!
//! * [`sim`]: Monte-Carlo ground truth.
//! * [`dmp`]: dynamic message passing, exact on trees.
//! * [`models`]: a node-level GNN baseline and the neural-enhanced DMP
//!   hybrid, built on the small reverse-mode substrate in [`neural`].
//! * [`training`]: datasets, losses, the L1 metric and the training loop.

pub mod dmp;
pub mod error;
pub mod graph;
pub mod models;
pub mod neural;
pub mod sim;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
pub use graph::{Graph, Instance, LineGraph};
pub use trajectory::MarginalTrajectory;
