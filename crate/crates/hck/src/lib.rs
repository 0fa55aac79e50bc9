//! Datasets, model files, experiments and the `hck` command line on top of
//! `hck-core`.

pub mod bench;
pub mod cli;
pub mod dataset;
pub mod experiments;
pub mod model_io;
