// mdbook can't run its listings against workspace crates, so every chapter
// is pulled in as a module doc comment and `cargo test --doc` runs them.
// One module per chapter keeps failures traceable to a file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("src/network.md")]
pub mod network {}
#[doc = include_str!("src/training.md")]
pub mod training {}
#[doc = include_str!("src/prototypes.md")]
pub mod prototypes {}
#[doc = include_str!("src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("src/bounds.md")]
pub mod bounds {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
