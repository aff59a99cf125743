//! Numerical local isometric embedding of surfaces whose Gaussian curvature
//! changes sign across two transversal curves through the origin.

pub mod config;
pub mod elliptic;
pub mod embed;
pub mod error;
pub mod expr;
pub mod grid;
pub mod hyperbolic;
pub mod jet;
pub mod linalg;
pub mod metric;
pub mod nash_moser;
pub mod par;
pub mod pipeline;
pub mod regions;
pub mod seed;
pub mod smoothing;
pub mod sparse;

pub use error::{Error, Result};
