//! LoRa uplink energy-efficiency modelling and learning-based SF/TP allocation.
//!
//! - [`radio`]: airtime, vulnerable window and ALOHA interference probability.
//! - [`analytic`]: closed-form PDR and energy efficiency of an assignment.
//! - [`sim`]: Monte Carlo ALOHA simulator used as a validation oracle.
//! - [`env`]: Markov-game environment around the analytic model.
//! - [`maac`]: attention actor-critic learner.
//! - [`baselines`]: reference allocation policies.
//! - [`harness`]: experiment pipelines and result emission.

pub mod analytic;
pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod link;
pub mod maac;
pub mod nn;
pub mod radio;
pub mod sim;
pub mod special;
pub mod stats;
pub mod topology;

pub use error::{Error, Result};
