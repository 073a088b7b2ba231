//! Command line tool and HTTP service on top of `hatemod-core`.

pub mod cli;
pub mod config;
pub mod exit;
pub mod service;
