pub mod baseline;
pub mod creative;
pub mod dsp;
pub mod error;
pub mod features;
pub mod filter_design;
pub mod loss;
pub mod model;
pub mod noise_bank;
pub mod synthesis;
pub mod training;

pub use error::{Error, Result};
