//! Library surface of the `wflow` experiment runner: config parsing, the
//! experiment drivers, plot-data emission, and the diagnostics suite.

pub mod check;
pub mod config;
pub mod plot;
pub mod runner;
