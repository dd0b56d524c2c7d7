pub mod error;
pub mod geom;
mod real;

pub use error::{Error, Result};
pub use real::Real;

pub mod dataio;
pub mod distill;
pub mod field;
pub mod metrics;
pub mod optim;
pub mod parallel;
pub mod render;
pub mod scenegen;
pub mod staticfit;

/// Scalar type used by the training pipeline and the command-line tool.
pub type Scalar = f64;

pub type Vec3 = geom::Vec3<Scalar>;
pub type Mat3 = geom::Mat3<Scalar>;
pub type Transform = geom::Transform<Scalar>;
pub type Twist = geom::Twist<Scalar>;
pub type Ray = geom::Ray<Scalar>;
pub type Aabb = geom::Aabb<Scalar>;
pub type Camera = geom::Camera<Scalar>;
pub type Field = field::RadianceField<Scalar>;
pub type SegHead = field::SegmentationHead<Scalar>;
pub type Motions = render::PartMotions<Scalar>;
