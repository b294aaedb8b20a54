//! mdbook cannot run a book's code blocks as tests against the local
//! workspace, so this crate includes each chapter as rustdoc and lets
//! `cargo test --doc` execute every snippet. One module per chapter so a
//! failure points at the file it came from.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/topology.md")]
pub mod topology {}

#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}

#[doc = include_str!("../../../book/src/privacy.md")]
pub mod privacy {}

#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
