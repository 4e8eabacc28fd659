//! Command-line tools and the live session service.

pub mod config;
pub mod serve;
pub mod wire;
