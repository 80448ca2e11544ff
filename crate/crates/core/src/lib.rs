//! Explicit construction of ReLU networks that interpolate labelled data
//! exactly, built layer by layer from cones and truncation maps.

pub mod construct;
pub mod dataset;
pub mod error;
pub mod geom;
pub mod netcore;
pub mod numlin;
pub mod verify;

pub use error::{Error, Result};
