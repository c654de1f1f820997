pub mod config;
pub mod error;
pub mod field;
pub mod rng;
pub mod types;
pub mod data;
pub mod metrics;
pub mod model;
pub mod training;
pub mod transport;
pub mod physics;
pub mod pipeline;
