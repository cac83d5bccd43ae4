//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

pub mod fixtures;
pub mod oracles;
