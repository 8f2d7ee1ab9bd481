pub mod calibrate;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod heston;
pub mod linalg;
pub mod mc;
pub mod pde1d;
pub mod pde2d;
pub mod quad;

pub use error::{Error, Result};
