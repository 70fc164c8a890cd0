pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod gemm;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod sparse;
pub mod tensor;
