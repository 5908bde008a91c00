//! Library surface of the experiment driver, kept separate from the binary
//! so the acceptance suite can exercise the exact same code paths.

pub mod config;
pub mod presets;
pub mod runner;
pub mod verify;
