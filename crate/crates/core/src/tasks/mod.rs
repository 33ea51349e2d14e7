//! Benchmark workloads: the maze agent and the framewise sequence task.

pub mod maze;
pub mod seq;
