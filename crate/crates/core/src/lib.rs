#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod executor;
pub mod ipm;
pub mod kkt;
pub mod linalg;
pub mod model;
pub mod opf;
