//! Curtailment AC optimal power flow by a penalty difference-of-convex
//! algorithm, with closed-form row splits and a box-constrained dual inner
//! solver whose iterations cost time linear in the grid size.
//!
//! The guide in `book/` walks through the modules in order.

// `!(a <= b)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cases;
pub mod dca;
pub mod error;
pub mod grid;
pub mod harness;
pub mod inner;
pub mod matpower;
pub mod opf;
pub mod oracle;
pub mod powerflow;
pub mod qclp;
pub mod sparse;
pub mod split;
