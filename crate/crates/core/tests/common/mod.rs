//! Oracles shared by the unit suites and the acceptance report.
#![allow(dead_code)]

pub mod crf;
pub mod gradients;
pub mod losses;
pub mod props;
pub mod retrieval;
