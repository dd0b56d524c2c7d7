//! Rigid-body math: SE(3) transforms, twists, rays, pinhole cameras and
//! joint decomposition.

mod camera;
mod joint;
mod linalg;
mod ray;
mod transform;
mod twist;

pub use camera::{project_point, Camera, Intrinsics, Projection, MIN_DEPTH};
pub use joint::{
    axis_direction_error, axis_position_error, decompose_as, decompose_motion, geodesic_rotation_error, translation_error, JointEstimate,
    JointType, DEFAULT_ANGLE_THRESHOLD_DEG,
};
pub use linalg::{Mat3, Vec3};
pub use ray::{transform_ray, Aabb, Ray};
pub use transform::{rotation_about, rotation_angle, se3_from_axis_angle, MatrixRows, Transform};
pub use twist::{LocalGrad, Twist};
