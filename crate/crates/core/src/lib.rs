//! Optimal incentive contracts for a one-shot, shallow principal-agent model
//! of a systems engineering process.
//!
//! A principal (the systems engineer) delegates design tasks to agents
//! (subsystem engineers) whose effort is unobservable and whose type may be
//! private. The principal picks transfer functions that maximize expected
//! system utility, anticipating each agent's best response. The outer problem
//! is solved by tempered sequential Monte Carlo on a penalized objective; the
//! inner problem by a global one-dimensional search.

pub mod analysis;
pub mod best_response;
pub mod calibration;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod quadrature;
pub mod registry;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
