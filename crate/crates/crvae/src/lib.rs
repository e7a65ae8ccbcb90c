pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod probes;
pub mod rng;
pub mod train;
pub mod tsne;
