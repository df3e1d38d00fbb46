//! Reverse-mode substrate: parameters, small networks, Adam, checkpoints and
//! the finite-difference checker the rest of the crate is tested with.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod params;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_check, finite_diff_check_mixed, GradCheck, GradCheckReport};
pub use mlp::{Activation, Mlp, MlpInit, MlpSpec, MlpTape};
pub use params::{ParamId, ParamStore};
