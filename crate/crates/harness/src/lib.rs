//! Experiment driver: accelerated simulation runs, run directories,
//! analysis reports and stress grids.

pub mod analyze;
pub mod config;
pub mod grid;
pub mod rundir;
pub mod sim;
