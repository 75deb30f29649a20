//! Numerical laboratory for wave-packet scattering on the plane branched over
//! two points: geometry, packets, discrete dynamics, graph metrics, channel
//! experiments and spectral checks.

pub mod error;
pub mod evolution;
pub mod field;
pub mod freeprop;
pub mod geometry;
pub mod linalg;
pub mod metricfield;
pub mod packets;
pub mod quadrature;
pub mod scattering;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;
