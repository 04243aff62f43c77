//! Experiment plumbing: feature ingestion, baselines, grid sweeps and result files.

pub mod config;
pub mod features;
pub mod jl;
pub mod multiclass;
pub mod results;
pub mod sweep;

pub use config::{DataSource, Method, OptimizerGrid, OutputConfig, SweepConfig};
pub use features::{load_features, read_feature_table, write_feature_table, FeatureFormat, FeatureTable, Features};
pub use jl::{jl_project, JlTransform};
pub use multiclass::{softmax_dp_sgd, MulticlassDataset, SoftmaxModel};
pub use results::{read_results, round_sig6, write_results, write_results_to, ResultFormat, ResultRow, COLUMNS, SCHEMA_VERSION};
pub use sweep::{enumerate_cells, mean_test_error, run_sweep, Cell, Hyper};
