//! Compiles the guide in `book/src` so its Rust snippets run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/grid.md")]
pub mod grid {}
#[doc = include_str!("../../../book/src/qclp.md")]
pub mod qclp {}
#[doc = include_str!("../../../book/src/split.md")]
pub mod split {}
#[doc = include_str!("../../../book/src/inner.md")]
pub mod inner {}
#[doc = include_str!("../../../book/src/dca.md")]
pub mod dca {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
