//! Intrinsic-aware monocular 3D detection at desk scale.

pub mod adaptation;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod inference;
pub mod nn;
pub mod scalar;
pub mod scenegen;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision geometry, banks and metrics.
pub type Box3 = geometry::Box3D<f64>;
pub type Box2 = geometry::Box2D<f64>;
pub type Intrinsics = geometry::CameraIntrinsics<f64>;
pub type Bank = encoder::IntrinsicEmbeddingBank<f64>;
/// Detectors train and run in single precision.
pub type Detector = detector::DetectorState<f32>;
/// Double-precision detector for gradient checks.
pub type Detector64 = detector::DetectorState<f64>;
