// Shared by the oracle tests and the acceptance suite; each uses a subset.
#![allow(dead_code)]

pub mod collocation;
pub mod parser;
