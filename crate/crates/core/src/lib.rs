//! Grid-sampling SDEs with randomized controls.
//!
//! A randomized policy `𝐡(t, x, u)` turns a uniform variate into an action.
//! On a partition `Π` the uniforms are re-drawn at grid points, which gives
//! the grid-sampling dynamics; as `|Π| → 0` these converge to a limit SDE
//! driven by white-noise martingale measures. The crate simulates both,
//! checks the random-measure integration identities, computes the limit
//! characteristics, and runs TD(0) policy evaluation.

pub mod characteristics;
pub mod error;
pub mod integrate;
pub mod mc;
pub mod model;
pub mod noise;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod td;

pub use error::{Error, Result};
