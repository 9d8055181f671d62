//! Domain-randomized synthetic seed datasets: frame ingestion, foreground
//! extraction, augmentation, scene synthesis, a baseline softmax classifier,
//! and softmax-sum ensemble evaluation.

pub mod augment;
pub mod classifier;
pub mod config;
pub mod eval;
pub mod extract;
pub mod fixtures;
pub mod imaging;
pub mod ingest;
pub mod label;
pub mod manifest;
pub mod pipeline;
pub mod pool;
pub mod seed;
pub mod softmax;
pub mod synth;
