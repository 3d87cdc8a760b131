//! Configuration, dataset persistence and experiment commands.

pub mod commands;
pub mod config;
pub mod dataset_file;
pub mod summary;

pub use commands::{
    cmd_eval, cmd_gen_data, cmd_overhead, cmd_signal_demo, cmd_sweep, cmd_train, Report, SchemeResult, SignalDemo,
};
pub use config::{load_config, parse_config, ExperimentConfig, LinkSetting, Profile};
pub use dataset_file::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC};
pub use summary::{quantile, BoxStats};
