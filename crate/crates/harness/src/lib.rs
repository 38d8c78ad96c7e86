//! Training harness for the hybrid-action multi-agent learners.
//!
//! Everything stateful about an experiment lives here: flat-file
//! configuration ([`config`]), the deterministic training loop and greedy
//! evaluator ([`trainer`]), line-delimited metrics ([`metrics`]), versioned
//! binary checkpoints ([`checkpoint`]) and SVG learning-curve plots
//! ([`plot`]). The `hmarl` binary is a thin CLI over these modules.
//!
//! Determinism contract: a (config, seed) pair fully determines every byte
//! of the metrics file and every greedy action of the final checkpoint.
//! Anything wall-clock related is printed to the console, never written to
//! artifacts.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod trainer;
