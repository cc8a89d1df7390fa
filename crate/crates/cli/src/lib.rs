//! Command-line front end of the terra-active simulator: config files,
//! label rasters, experiment dispatch and result files.

pub mod app;
pub mod config;
pub mod raster;
pub mod run;

pub use app::{run_cli, run_from, Cli};
pub use config::{parse_config, parse_config_str, ConfigError};
pub use raster::{load_label_raster, LabelRaster, RasterError};
