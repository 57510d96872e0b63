pub mod attacks;
pub mod cli;
pub mod checkpoint;
mod container;
mod digest;
pub mod error;
pub mod fpm;
pub mod invariants;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod render;
pub mod vocab;

pub use error::{Error, Result};
