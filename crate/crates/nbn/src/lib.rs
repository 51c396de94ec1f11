//! File formats, command-line tool and local HTTP service around
//! [`nbn_core`].

pub mod cli;
pub mod compare;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod formats;
pub mod service;

pub use error::{Error, Result};
