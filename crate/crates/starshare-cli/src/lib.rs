//! Experiment driver around the starshare library: configuration parsing
//! and the five commands (`rate`, `simulate`, `optimize`, `example-fig4`,
//! `stay-cost`). The binary in `main.rs` is a thin clap wrapper over
//! [`commands`].

pub mod commands;
pub mod config;
