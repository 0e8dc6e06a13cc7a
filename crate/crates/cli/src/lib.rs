//! IO, file formats, HTTP scoring backend and CLI for the benchmark
//! leakage auditor. All detection math lives in `benchleak-core`; this
//! crate wires it to the filesystem and the network.

pub mod cache;
pub mod commands;
pub mod http;
pub mod loader;
pub mod manifest;
pub mod parallel;
pub mod report;

pub use benchleak_core as core;
