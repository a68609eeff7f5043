//! Guide chapters compiled as documentation, so `cargo test --doc` executes
//! every code block the book shows. One module per chapter keeps failures
//! attributable to their chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/observables.md")]
pub mod observables {}

#[doc = include_str!("../../../book/src/channels.md")]
pub mod channels {}

#[doc = include_str!("../../../book/src/causal-trees.md")]
pub mod causal_trees {}

#[doc = include_str!("../../../book/src/uncertainty.md")]
pub mod uncertainty {}

#[doc = include_str!("../../../book/src/zeno.md")]
pub mod zeno {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
