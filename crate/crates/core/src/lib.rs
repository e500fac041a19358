pub mod collocation;
pub mod constraints;
pub mod desk;
pub mod degrade;
pub mod error;
pub mod imaging;
pub mod lattice;
pub mod lexicon;
pub mod par;
pub mod parser;
pub mod pipeline;
pub mod relaxation;

pub use error::{Error, Result};
