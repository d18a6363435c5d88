//! Guide listings, compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/beltrami.md")]
pub mod beltrami {}
#[doc = include_str!("../../../book/src/lbs.md")]
pub mod lbs {}
#[doc = include_str!("../../../book/src/fourier.md")]
pub mod fourier {}
#[doc = include_str!("../../../book/src/curvature.md")]
pub mod curvature {}
#[doc = include_str!("../../../book/src/landmarks.md")]
pub mod landmarks {}
#[doc = include_str!("../../../book/src/registration.md")]
pub mod registration {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
