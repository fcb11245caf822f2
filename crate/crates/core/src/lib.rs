pub mod analysis;
pub mod app;
pub mod autodiff;
pub mod completion;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod scenarios;

pub use error::{Error, Result};
