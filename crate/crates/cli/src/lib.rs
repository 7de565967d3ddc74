//! Staged pipeline runner: configuration, run manifests, the stages
//! themselves, corpus validation and a synthetic corpus generator.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod synthetic;
pub mod validate;
