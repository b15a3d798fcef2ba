//! Cox proportional-hazards regression with unknown change points and
//! cluster-level gamma frailty.
//!
//! The pipeline is: [`data`] ingestion, episode splitting and interval-wise
//! partial likelihood in [`coxph`], the frailty EM in [`frailty`],
//! exhaustive change-point search in [`changepoint`], Monte Carlo studies in
//! [`simulate`] and Kaplan-Meier curves in [`km`].

pub mod changepoint;
pub mod cli;
pub mod coxph;
pub mod data;
pub mod error;
pub mod frailty;
pub mod km;
pub mod optim;
pub mod simulate;

pub use error::{DataError, FitError};
