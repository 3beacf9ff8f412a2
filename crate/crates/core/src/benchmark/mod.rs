//! Synthetic data-generating systems, excitation design and data files.

mod dataset;
mod generate;
mod io;
mod systems;

pub use dataset::{DataSet, DatasetMeta};
pub use generate::{
    generate_excitation, noise_std_for_snr, simulate_system, split_dataset, Excitation, ExcitationConfig,
    NoiseConfig, SplitSizes, Splits, STATE_LIMIT,
};
pub use io::{csv_header, meta_path, read_dataset, write_dataset};
pub use systems::{builtin_pendulum, sinc, LtiSystem, NonlinearSystem, Pendulum, SystemSpec};
