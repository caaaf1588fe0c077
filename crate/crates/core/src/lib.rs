//! Monte Carlo and numerical toolkit for the parabolic Anderson model driven
//! by a voter-model catalyst.
//!
//! The crate covers random-walk kernels and their Fourier transforms, forward
//! and dual (coalescing) simulations of the voter model, the two moment
//! estimators for the solution, Lyapunov-exponent post-processing and the
//! radial polaron variational problem.

pub mod anderson;
pub mod coalescing;
pub mod error;
pub mod kernels;
pub mod lattice;
pub mod lyapunov;
pub mod polaron;
pub mod rng;
pub mod stats;
pub mod voter;

pub use error::{Error, Result};
pub use kernels::{dual, make_simple_random_walk, symmetrize, Kernel};
pub use lattice::{Lattice, Site, Torus};
pub use stats::MomentEstimate;
