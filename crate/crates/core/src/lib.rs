pub mod activity_map;
pub mod dataset;
pub mod error;
pub mod frames;
pub mod geometry;
pub mod inference;
pub mod jsonl;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod projection;
pub mod proposals;
pub mod select;
pub mod synth;
pub mod tensor;
pub mod tracking;
pub mod train;
