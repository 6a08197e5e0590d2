//! Fixtures and loop oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod blocks;
pub mod loops;
pub mod ops;
pub mod scripted;
