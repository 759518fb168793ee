pub mod adapt;
pub mod baselines;
pub mod env;
pub mod error;
pub mod gfn;
pub mod harness;
pub mod nn;
pub mod ocgfn;
pub mod oracle;

pub use error::{Error, Result};
