#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod angular;
pub mod cli;
pub mod config;
pub mod csl;
pub mod decoherence;
pub mod dynamics;
pub mod numerics;
pub mod spectrum;
pub mod units;
