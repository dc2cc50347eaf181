pub mod config;
pub mod error;
pub mod flow;
pub mod measures;
pub mod model;
pub mod riccati;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
