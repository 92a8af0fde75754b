//! Artifact plumbing: weight archives, hybrid quantisation and run configs.

pub mod archive;
pub mod cli;
pub mod config;
pub mod quant;

pub use archive::{load_weights, save_weights, ModelKind, WeightArchive};
pub use config::{load_run_config, CisRunConfig, GenRunConfig, RunManifest};
pub use quant::{quantize_archive, QuantReport, QuantScheme};
