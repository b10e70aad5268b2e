//! Numerical toolkit for the heat flow of the action functional on the loop
//! space of a flat torus: critical loops, their Jacobi spectrum, the local
//! semiflow, and the stable/unstable/mixed graph maps used to observe how
//! backward images of a transverse disc converge to the unstable manifold.

pub mod duhamel;
pub mod error;
pub mod graphmaps;
pub mod lambdaverify;
pub mod loopspace;
pub mod model;
pub mod semiflow;
pub mod semigroup;
pub mod spectral;

pub use error::{Error, Result};
