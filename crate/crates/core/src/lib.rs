#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod conv;
pub mod decoder;
pub mod error;
pub mod flops;
pub mod haar;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod scene;
pub mod sparsity;
pub mod tensor;
