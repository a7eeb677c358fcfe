//! Command-line runner and HTTP embedding service over `espew-core`.

pub mod args;
pub mod commands;
pub mod error;
pub mod service;
pub mod wire;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, CliResult};
pub use service::{handle_embed_request, HttpError, RemoteService, ServiceState};
