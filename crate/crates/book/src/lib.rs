//! The guide's chapters as doc modules, so `cargo test` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/cme.md")]
pub mod cme {}
#[doc = include_str!("../../../book/src/sos.md")]
pub mod sos {}
#[doc = include_str!("../../../book/src/envelope.md")]
pub mod envelope {}
#[doc = include_str!("../../../book/src/safety.md")]
pub mod safety {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
