//! Command-line companion to the kernel library: IDX file IO, JSON
//! architecture descriptions, a deterministic synthetic digit corpus,
//! CSV/JSON report rendering, and rayon-parallel drivers for the Gram,
//! stability, and Monte Carlo workloads. The binary target `ntk` is a thin
//! wrapper over [`cli::cli_main`]; everything else is library code so the
//! test suite can drive it directly.

pub mod cli;
pub mod config;
pub mod emit;
pub mod idx;
pub mod runner;
pub mod synth;
