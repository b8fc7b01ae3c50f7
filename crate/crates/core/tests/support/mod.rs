//! Independent oracles shared by the gradient and metric suites.
#![allow(dead_code)]
// NaN must fail the tolerance checks, hence `!(e < tol)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod grad;
pub mod metric;
