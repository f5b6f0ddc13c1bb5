//! Out-of-sample predictive-ability inference for machine-learning
//! forecasters on time series.

pub mod dgp;
pub mod error;
pub mod inference;
pub mod learners;
pub mod losses;
pub mod mdh;
pub mod series;
pub mod stats;

pub use error::{Error, Result};
