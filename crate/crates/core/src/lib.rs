pub mod circuit;
pub mod clifford;
pub mod ctrlphys;
pub mod error;
pub mod gateset;
pub mod ghzpipe;
pub mod noise;
pub mod qstate;
pub mod rbench;
pub mod tomo;

pub use error::{Error, Result};
