//! Adaptive isogeometric boundary element method for the weakly-singular
//! integral equation `V phi = f` on a curve in the plane, with
//!
//! ```text
//! V phi(x) = -1/(2 pi) * integral over Gamma of log|x - y| phi(y) dy.
//! ```
//!
//! The discrete densities are NURBS on a knot mesh whose nodes carry
//! multiplicities. The adaptive loop solves, estimates (weighted-residual
//! estimator `mu` or Faermann estimator `eta`), marks by the Doerfler
//! criterion and refines by bisection and multiplicity increase.

pub mod bem;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod mesh;
pub mod quadrature;
pub mod report;
pub mod splines;
pub mod trace;

pub use error::{Error, Result};
