//! Store, providers, HTTP service and file formats around `ivg-core`.

pub mod config;
pub mod embed;
pub mod engine;
pub mod gateway;
pub mod import;
pub mod service;
pub mod store;
pub mod svg;

pub use ivg_core as core;
