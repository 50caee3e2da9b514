//! Run-level plumbing used by the `wella` binary: configuration, the remote
//! chat backend and the batch/eval/export pipeline.

pub mod config;
pub mod pipeline;
pub mod remote;
