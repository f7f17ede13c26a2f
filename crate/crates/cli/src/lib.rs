//! Configuration, execution and serialisation behind the `cpn-thermal` binary.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{Format, Mode, RunConfig};
pub use error::CliError;
pub use run::{execute, run};
