//! Configuration, output and run driver for the `polyfrac` command.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, to_toml, ConfigError, SimulationConfig};
pub use output::{FrameWriter, OutputError, OutputFrame};
pub use run::{build, check, load_config, run, RunError, RunOptions, RunSummary};
