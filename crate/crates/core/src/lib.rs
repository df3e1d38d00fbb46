pub mod diff;
pub mod error;
pub mod guide;
pub mod linalg;
pub mod losses;
pub mod morph;
pub mod pipeline;
pub mod real;
pub mod splat;
pub mod synth;

pub use error::{Error, Result};
pub use real::Real;
