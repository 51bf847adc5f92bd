//! Scan files, fixtures and run configuration.

pub mod config;
pub mod cxi;
pub mod fixture;

pub use config::{parse_config, ParamKind, ParamValue, RunConfig};
pub use cxi::{
    load_scan, read_dataset, read_f64_dataset, read_frame, read_header, save_scan, split_dataset_path, wavelength_from_energy,
    write_result,
    write_results, CxiPaths, ScanHeader, Value,
};
pub use fixture::{load_fixture, save_fixture};
