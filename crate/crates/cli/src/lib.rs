//! Command-line front end and experiment runner for `nedmp-core`.

pub mod app;
pub mod experiment;
