#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod metrics;
pub mod pipeline;
pub mod seeds;
pub mod signal;
pub mod stats;
pub mod theory;
pub mod verify;
pub mod watermark;
