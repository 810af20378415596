//! Compiles the guide in `book/src` so that every listing runs as a doctest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("../../../book/src/source-models.md")]
pub mod source_models {}
#[doc = include_str!("../../../book/src/prompts.md")]
pub mod prompts {}
#[doc = include_str!("../../../book/src/loosening.md")]
pub mod loosening {}
#[doc = include_str!("../../../book/src/label-mapping.md")]
pub mod label_mapping {}
#[doc = include_str!("../../../book/src/attacks.md")]
pub mod attacks {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
