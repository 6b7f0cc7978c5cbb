//! Gaussian process modelling of closed planar curves.
//!
//! Curves are parameterized by arc length along their sample polygon and
//! modelled as two-output periodic Gaussian processes. Several curves can be
//! fitted jointly through coregionalization matrices over coordinates, curves
//! and groups.

pub mod applications;
pub mod config;
pub mod coreg;
pub mod error;
pub mod geometry;
pub mod gp;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod optimize;
pub mod preprocess;
pub mod svg;
pub mod synthetic;

pub use coreg::{CoregMatrix, MultiLevelKernel, Site};
pub use error::{Error, Result};
pub use geometry::{Curve, Point};
pub use gp::{fit, CurveSamples, FittedModel, LevelSpec, ModelConfig, OptimizerConfig, PredictedCurve, TrainingDesign};
pub use kernels::{KernelFamily, NoiseSpec, PeriodicKernel};
