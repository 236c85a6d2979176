//! Compiles and runs the guide's snippets; mdbook cannot see this workspace's crates.

#[doc = include_str!("../../../book/src/index.md")]
pub mod index {}

#[doc = include_str!("../../../book/src/tasks.md")]
pub mod tasks {}

#[doc = include_str!("../../../book/src/gate.md")]
pub mod gate {}

#[doc = include_str!("../../../book/src/mutation.md")]
pub mod mutation {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/scenes.md")]
pub mod scenes {}

#[doc = include_str!("../../../book/src/metriclang.md")]
pub mod metriclang {}

#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}
