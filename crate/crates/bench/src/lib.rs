//! Benchmark kernels for the `xtask` runtime, their sequential oracles and
//! the repeat-and-summarize experiment driver behind the `xtask-bench` CLI.

pub mod experiment;
pub mod hw;
pub mod kernels;
pub mod oracle;

pub use experiment::{
    run_experiment, BenchError, BenchSpec, ExperimentReport, KernelSpec, RunSummary,
};
