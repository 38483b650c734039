pub mod coefficients;
pub mod error;
pub mod game;
pub mod harness;
pub mod matrix;
pub mod omd;
pub mod online;
pub mod oracle;
pub mod population;

pub use error::{Error, Result};
