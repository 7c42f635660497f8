//! Fast uplink grant scheduling driven by traffic prediction.
//!
//! IoT devices are activated by hidden On-Off Markov event sources. An
//! aggregator tracks the joint source state with an exact forward filter,
//! predicts which devices will transmit in the next slot and grants its `L`
//! transmission slots to the most likely ones. The crate simulates that
//! scheme next to random access, round-robin and a genie-aided scheduler and
//! reports regret, system usage and age of information.
//!
//! * [`model`]: scenario, hidden-state dynamics, activation probabilities
//! * [`belief`]: exact filtering over the `2^N` joint state
//! * [`policies`]: grant decisions and observation models
//! * [`metrics`]: regret, usage and age of information
//! * [`engine`]: episodes and Monte-Carlo aggregation
//! * [`cli`]: command-line front end
//! * [`oracle`]: brute-force references used for verification

pub mod belief;
pub mod cli;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod policies;

pub use error::{Error, Result};
