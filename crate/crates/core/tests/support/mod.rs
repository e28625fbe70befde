//! Shared by the oracle, golden and acceptance targets.
#![allow(dead_code)]

pub mod golden;
pub mod oracles;
