//! Built-in test problems.

pub mod racing;
pub mod rastrigin;
