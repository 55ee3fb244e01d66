//! Configuration-driven front end for the contract solver: problem
//! documents, commands, persisted artifacts and run manifests.

pub mod bundled;
pub mod commands;
pub mod document;
pub mod error;
pub mod manifest;

pub use commands::{run, Command, Invocation, Outcome, Overrides};
pub use document::{load_document, load_problem, parse_document};
pub use error::{CliError, ErrorDocument, Result};
