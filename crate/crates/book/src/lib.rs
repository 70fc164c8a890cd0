//! Guide chapters compiled as doc-tests so their listings stay in sync
//! with the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/selection.md")]
pub mod selection {}

#[doc = include_str!("../../../book/src/schedules.md")]
pub mod schedules {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/sparse.md")]
pub mod sparse {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/results.md")]
pub mod results {}
