//! Numerical laboratory for harmonic maps from surfaces into complex Grassmannians.

pub mod frames;
pub mod diagrams;
pub mod geometry;
pub mod moves;
pub mod jets;
pub mod library;
pub mod sampling;
pub mod sequences;
pub mod settings;
pub mod unitons;

pub use num_complex::Complex64;
pub use settings::{LabError, Result, Settings, Tolerances};
