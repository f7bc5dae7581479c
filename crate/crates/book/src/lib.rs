//! The guide in `book/`, compiled so that every Rust snippet in it runs as a
//! doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[doc = include_str!("../../../book/src/mining.md")]
pub mod mining {}

#[doc = include_str!("../../../book/src/segmenting.md")]
pub mod segmenting {}

#[doc = include_str!("../../../book/src/audio.md")]
pub mod audio {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/dataset.md")]
pub mod dataset {}
